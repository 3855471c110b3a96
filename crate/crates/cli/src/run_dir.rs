//! Run-directory layout, stage markers, the stage lock and crash points.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use qcrit_core::jsonl;
use qcrit_core::llm_gateway::{TokenUsage, UsageReport};
use qcrit_core::text::{fnv1a, to_hex};

use crate::error::CliError;

/// Environment variable naming a crash point, `<stage>:<n>`. When the `n`-th
/// checkpoint of that stage is reached the process exits with
/// [`CRASH_EXIT`], as if killed. Used by the crash-resume tests.
pub const CRASH_ENV: &str = "QCRIT_CRASH_AT";
pub const CRASH_EXIT: i32 = 86;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    SamplePairs,
    AnnotateServe,
    MineCriteria,
    AnnotateBulk,
    TrainScorer,
    Score,
    Select,
    Report,
}

impl Stage {
    pub const PIPELINE: [Stage; 8] = [
        Stage::Ingest,
        Stage::SamplePairs,
        Stage::MineCriteria,
        Stage::AnnotateBulk,
        Stage::TrainScorer,
        Stage::Score,
        Stage::Select,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::SamplePairs => "sample-pairs",
            Stage::AnnotateServe => "annotate-serve",
            Stage::MineCriteria => "mine-criteria",
            Stage::AnnotateBulk => "annotate-bulk",
            Stage::TrainScorer => "train-scorer",
            Stage::Score => "score",
            Stage::Select => "select",
            Stage::Report => "report",
        }
    }

    /// Stages whose markers must exist before this one runs.
    pub fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::SamplePairs => &[Stage::Ingest],
            Stage::AnnotateServe | Stage::MineCriteria => &[Stage::SamplePairs],
            Stage::AnnotateBulk => &[Stage::MineCriteria],
            Stage::TrainScorer => &[Stage::AnnotateBulk],
            Stage::Score => &[Stage::TrainScorer],
            Stage::Select => &[Stage::Score],
            Stage::Report => &[Stage::MineCriteria, Stage::Select],
        }
    }

    /// Files and directories this stage owns, relative to the run directory.
    pub fn artifacts(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &["corpus.jsonl", "config.json"],
            Stage::SamplePairs => &["pairs/human.jsonl", "pairs/test.jsonl", "pairs/agent.jsonl"],
            Stage::AnnotateServe => &[],
            Stage::MineCriteria => &["evolution", "evaluation.json"],
            Stage::AnnotateBulk => &["annotations.jsonl", "pairs/agent_labeled.jsonl"],
            Stage::TrainScorer => &["scorer.json"],
            Stage::Score => &["scores.jsonl"],
            Stage::Select => &[
                "selection.jsonl",
                "selected.jsonl",
                "selected_corpus.jsonl",
                "selection_manifest.json",
            ],
            Stage::Report => &["report"],
        }
    }

    /// Stages invalidated when this one is rerun.
    fn downstream(self) -> impl Iterator<Item = Stage> {
        Stage::PIPELINE.into_iter().filter(move |s| *s > self)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Marker {
    stage: Stage,
    artifacts: Vec<ArtifactDigest>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArtifactDigest {
    path: String,
    bytes: u64,
    fnv64: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct UsageFile {
    stages: BTreeMap<String, UsageReport>,
    total: TokenUsage,
}

/// A locked run directory, scoped to one stage invocation.
pub struct RunDir {
    root: PathBuf,
    stage: Stage,
    checkpoints: AtomicUsize,
    _lock: File,
}

impl RunDir {
    /// Create the directory if needed and take the stage lock.
    pub fn open(root: &Path, stage: Stage) -> Result<Self, CliError> {
        fs::create_dir_all(root)?;
        let lock_path = root.join(".lock");
        let lock = File::options()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => {
                return Err(CliError::Locked(root.display().to_string()))
            }
            Err(fs::TryLockError::Error(e)) => return Err(e.into()),
        }
        Ok(Self {
            root: root.to_path_buf(),
            stage,
            checkpoints: AtomicUsize::new(0),
            _lock: lock,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn marker_path(&self, stage: Stage) -> PathBuf {
        self.root
            .join("stages")
            .join(format!("{}.done", stage.name()))
    }

    pub fn is_done(&self, stage: Stage) -> bool {
        self.marker_path(stage).exists()
    }

    /// Fail with an actionable error unless every prerequisite stage is done.
    pub fn require_prerequisites(&self) -> Result<(), CliError> {
        for &p in self.stage.prerequisites() {
            if !self.is_done(p) {
                return Err(CliError::Prerequisite {
                    missing: format!("completion marker for `{}`", p.name()),
                    run_first: p.name(),
                });
            }
        }
        Ok(())
    }

    /// Drop this stage's marker and every downstream marker; with `artifacts`
    /// also delete this stage's outputs.
    pub fn invalidate(&self, artifacts: bool) -> Result<(), CliError> {
        for s in std::iter::once(self.stage).chain(self.stage.downstream()) {
            remove_if_exists(&self.marker_path(s))?;
        }
        if artifacts {
            for rel in self.stage.artifacts() {
                remove_if_exists(&self.path(rel))?;
            }
        }
        Ok(())
    }

    pub fn mark_done(&self) -> Result<(), CliError> {
        let mut artifacts = Vec::new();
        for rel in self.stage.artifacts() {
            let p = self.path(rel);
            if p.is_dir() {
                let mut files: Vec<PathBuf> = fs::read_dir(&p)?
                    .map(|e| e.map(|e| e.path()))
                    .collect::<Result<_, _>>()?;
                files.sort();
                for f in files {
                    let name = format!(
                        "{rel}/{}",
                        f.file_name().unwrap_or_default().to_string_lossy()
                    );
                    artifacts.push(digest(&f, name)?);
                }
            } else if p.exists() {
                artifacts.push(digest(&p, rel.to_string())?);
            }
        }
        let marker = Marker {
            stage: self.stage,
            artifacts,
        };
        jsonl::write_json(&self.marker_path(self.stage), &marker)?;
        log::info!("{} complete", self.stage.name());
        Ok(())
    }

    /// A point where a crash is survivable. See [`CRASH_ENV`].
    pub fn checkpoint(&self) {
        let n = self.checkpoints.fetch_add(1, Ordering::SeqCst) + 1;
        if let Ok(target) = std::env::var(CRASH_ENV) {
            if target == format!("{}:{n}", self.stage.name()) {
                eprintln!("crash point {target} reached; exiting");
                std::process::exit(CRASH_EXIT);
            }
        }
    }

    /// Add this invocation's token usage to `usage.json`.
    pub fn record_usage(&self, usage: &UsageReport) -> Result<(), CliError> {
        if usage.per_role.is_empty() {
            return Ok(());
        }
        let path = self.path("usage.json");
        let mut file: UsageFile = if path.exists() {
            jsonl::read_json(&path)?
        } else {
            UsageFile::default()
        };
        let entry = file
            .stages
            .entry(self.stage.name().to_string())
            .or_insert_with(|| UsageReport {
                per_role: BTreeMap::new(),
                total: TokenUsage::default(),
            });
        for (role, u) in &usage.per_role {
            let e = entry.per_role.entry(*role).or_default();
            e.input += u.input;
            e.output += u.output;
        }
        entry.total.input += usage.total.input;
        entry.total.output += usage.total.output;
        file.total.input += usage.total.input;
        file.total.output += usage.total.output;
        jsonl::write_json(&path, &file)?;
        Ok(())
    }
}

fn digest(path: &Path, rel: String) -> Result<ArtifactDigest, CliError> {
    let bytes = fs::read(path)?;
    Ok(ArtifactDigest {
        path: rel,
        bytes: bytes.len() as u64,
        fnv64: to_hex(&fnv1a(0, &bytes).to_be_bytes()),
    })
}

fn remove_if_exists(path: &Path) -> Result<(), CliError> {
    let r = if path.is_dir() {
        fs::remove_dir_all(path)
    } else {
        fs::remove_file(path)
    };
    match r {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_open_is_locked_out() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunDir::open(dir.path(), Stage::Ingest).unwrap();
        assert!(matches!(
            RunDir::open(dir.path(), Stage::Score),
            Err(CliError::Locked(_))
        ));
        drop(a);
        RunDir::open(dir.path(), Stage::Score).unwrap();
    }

    #[test]
    fn prerequisites_name_the_command_to_run() {
        let dir = tempfile::tempdir().unwrap();
        let rd = RunDir::open(dir.path(), Stage::Score).unwrap();
        let e = rd.require_prerequisites().unwrap_err();
        assert_eq!(e.exit_code(), crate::error::EXIT_PREREQUISITE);
        assert!(e.to_string().contains("qcrit train-scorer"), "{e}");
    }

    #[test]
    fn invalidate_clears_downstream_markers() {
        let dir = tempfile::tempdir().unwrap();
        for s in [Stage::Score, Stage::Select] {
            RunDir::open(dir.path(), s).unwrap().mark_done().unwrap();
        }
        let rd = RunDir::open(dir.path(), Stage::TrainScorer).unwrap();
        rd.invalidate(false).unwrap();
        assert!(!rd.is_done(Stage::Score) && !rd.is_done(Stage::Select));
    }
}
