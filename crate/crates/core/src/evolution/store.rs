//! Run-directory persistence for the evolution loop.
//!
//! `state.json` is written last and acts as the commit point: an iteration
//! interrupted before it is rewritten is simply rerun on resume.

use std::path::{Path, PathBuf};

use crate::corpus::{Corpus, PairSet};
use crate::jsonl::{self, JsonlError};
use crate::judgment::Judge;
use crate::knowledge_base::KnowledgeBase;

use super::{
    Evolution, EvolutionConfig, EvolutionError, EvolutionOutcome, EvolutionState, FinalCriterion,
    IterationReport,
};

pub struct EvolutionStore {
    dir: PathBuf,
}

impl EvolutionStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn state_path(&self) -> PathBuf {
        self.dir.join("state.json")
    }

    pub fn final_path(&self) -> PathBuf {
        self.dir.join("final_criteria.jsonl")
    }

    fn iter_path(&self, k: usize) -> PathBuf {
        self.dir.join(format!("iter_{k}_stats.json"))
    }

    pub fn load_state(&self) -> Result<Option<EvolutionState>, JsonlError> {
        let path = self.state_path();
        if !path.exists() {
            return Ok(None);
        }
        jsonl::read_json(&path).map(Some)
    }

    pub fn load_reports(&self, through: usize) -> Result<Vec<IterationReport>, JsonlError> {
        (1..=through)
            .map(|k| jsonl::read_json(&self.iter_path(k)))
            .collect()
    }

    pub fn load_final(&self) -> Result<Vec<FinalCriterion>, JsonlError> {
        jsonl::read(&self.final_path())
    }

    pub fn save(
        &self,
        state: &EvolutionState,
        report: Option<&IterationReport>,
    ) -> Result<(), JsonlError> {
        std::fs::create_dir_all(&self.dir).map_err(|source| JsonlError::Io {
            path: self.dir.display().to_string(),
            source,
        })?;
        if let Some(r) = report {
            jsonl::write_json(&self.iter_path(r.iteration), r)?;
        }
        jsonl::write_records(&self.dir.join("criteria.jsonl"), &state.criteria)?;
        jsonl::write_records(&self.dir.join("history.jsonl"), &state.history)?;
        jsonl::write_json(&self.dir.join("deny_list.json"), &state.deny_list)?;
        jsonl::write_json(&self.state_path(), state)
    }

    /// Run (or resume) evolution, persisting after initialization and after
    /// every iteration.
    pub fn run(
        &self,
        corpus: &Corpus,
        d_human: &PairSet,
        kb: &KnowledgeBase,
        cfg: EvolutionConfig,
        judge: &Judge,
    ) -> Result<EvolutionOutcome, EvolutionError> {
        self.run_with(corpus, d_human, kb, cfg, judge, &mut |_| {})
    }

    /// [`EvolutionStore::run`], calling `on_commit` with the iteration number
    /// (0 for initialization) after each state commit.
    pub fn run_with(
        &self,
        corpus: &Corpus,
        d_human: &PairSet,
        kb: &KnowledgeBase,
        cfg: EvolutionConfig,
        judge: &Judge,
        on_commit: &mut dyn FnMut(usize),
    ) -> Result<EvolutionOutcome, EvolutionError> {
        let mut evo = match self.load_state()? {
            Some(state) => {
                log::info!("resuming evolution after iteration {}", state.iteration);
                Evolution::resume(corpus, d_human, judge, cfg, state)?
            }
            None => Evolution::new(corpus, d_human, judge, cfg)?,
        };
        if !evo.state().initialized {
            evo.initialize(kb)?;
            self.save(evo.state(), None)?;
            on_commit(0);
        }
        while !evo.is_done() {
            let report = evo.run_iteration()?;
            log::info!(
                "iteration {}: keep {}, reflect {}, remove {}",
                report.iteration,
                report.partition.keep.len(),
                report.partition.reflect.len(),
                report.partition.remove.len()
            );
            self.save(evo.state(), Some(&report))?;
            on_commit(report.iteration);
        }
        let final_criteria = evo.final_criteria();
        jsonl::write_records(&self.final_path(), &final_criteria)?;
        let state = evo.into_state();
        Ok(EvolutionOutcome {
            reports: self.load_reports(state.iteration)?,
            final_criteria,
            state,
        })
    }
}
