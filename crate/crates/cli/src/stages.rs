//! Pipeline stages. Each reads its inputs from the run directory, writes its
//! artifacts atomically or append-only, and finishes by writing its marker.

use std::collections::HashSet;
use std::fs::File;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use qcrit_core::corpus::{
    attach_gold_with, ingest_documents, sample_splits, Corpus, Label, Pair, PairSet, Preference,
    Split, SplitCounts,
};
use qcrit_core::evolution::EvolutionStore;
use qcrit_core::evolution::FinalCriterion;
use qcrit_core::jsonl::{self, Appender};
use qcrit_core::judgment::{BulkAnnotation, CriterionEvaluation, Judge, Verdict};
use qcrit_core::knowledge_base::{bundled_seeds, ingest_criteria, CriterionSeed};
use qcrit_core::llm_gateway::sim::planted_preference;
use qcrit_core::llm_gateway::Gateway;
use qcrit_core::par::Mode;
use qcrit_core::scorer::{normalize, train_on_texts, ScorerModel};
use qcrit_core::selector::{gumbel_topk, ScoredDocument, SelectionConfig, SelectionRow};

use crate::config::{GoldSource, RunConfig};
use crate::error::CliError;
use crate::run_dir::{RunDir, Stage};

/// Agent pairs judged per append to `annotations.jsonl`.
pub const BULK_CHUNK: usize = 50;

pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub dir: &'a RunDir,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub raw: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedRecord {
    pub rank: usize,
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionScore {
    pub name: String,
    pub correct: usize,
    pub wrong: usize,
    pub refused: usize,
    pub accuracy: Option<f64>,
    pub refuse_rate: f64,
}

/// Final criteria measured on one gold split, alone and as a voting ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEvaluation {
    pub split: Split,
    pub pairs: usize,
    pub per_criterion: Vec<CriterionScore>,
    pub mean_individual_accuracy: Option<f64>,
    pub ensemble_accuracy: Option<f64>,
    pub ensemble_correct: usize,
    pub ensemble_wrong: usize,
    pub ensemble_null: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub final_criteria: usize,
    pub human: Option<SplitEvaluation>,
    pub test: Option<SplitEvaluation>,
}

pub fn load_corpus(ctx: &Ctx) -> Result<Corpus, CliError> {
    let path = ctx.dir.path("corpus.jsonl");
    Ok(ingest_documents(
        File::open(&path)?,
        ctx.cfg.domain.as_str(),
    )?)
}

fn load_pairs(ctx: &Ctx, split: Split, rel: &str) -> Result<PairSet, CliError> {
    Ok(PairSet::new(split, jsonl::read(&ctx.dir.path(rel))?))
}

pub fn ingest(ctx: &Ctx) -> Result<(), CliError> {
    let src = ctx
        .cfg
        .corpus
        .as_ref()
        .ok_or_else(|| CliError::Config("ingest needs a corpus path (--corpus)".into()))?;
    let corpus = ingest_documents(File::open(src)?, ctx.cfg.domain.as_str())?;
    if corpus.len() < 2 {
        return Err(CliError::Failed(format!(
            "{} holds {} document(s); at least 2 are needed",
            src.display(),
            corpus.len()
        )));
    }
    jsonl::write_records(&ctx.dir.path("corpus.jsonl"), &corpus.records())?;
    ctx.dir.checkpoint();
    jsonl::write_json(&ctx.dir.path("config.json"), ctx.cfg)?;
    ctx.dir.checkpoint();
    log::info!("ingested {} documents", corpus.len());
    Ok(())
}

pub fn sample_pairs(ctx: &Ctx) -> Result<(), CliError> {
    let labels = ctx.dir.path("labels.jsonl");
    if ctx.cfg.gold == GoldSource::Labels && labels.exists() {
        return Err(CliError::Failed(format!(
            "{} holds labels for the current pairs; move it aside before resampling",
            labels.display()
        )));
    }
    let corpus = load_corpus(ctx)?;
    let p = ctx.cfg.pairs;
    let counts = SplitCounts {
        human: p.human,
        test: p.test,
        agent: p.agent,
    };
    let splits = sample_splits(&corpus, counts, p.buckets, ctx.cfg.seed)?;
    for (set, rel) in splits.iter().zip(Stage::SamplePairs.artifacts()) {
        jsonl::write_records(&ctx.dir.path(rel), &set.pairs)?;
        ctx.dir.checkpoint();
    }
    if ctx.cfg.gold == GoldSource::Simulated {
        let [human, test, _] = &splits;
        let mut out = simulated_labels(&corpus, human, 1);
        out.extend(simulated_labels(&corpus, test, ctx.cfg.min_test_annotators));
        jsonl::write_records(&labels, &out)?;
        ctx.dir.checkpoint();
    }
    log::info!(
        "sampled {} human, {} test and {} agent pairs",
        p.human,
        p.test,
        p.agent
    );
    Ok(())
}

fn simulated_labels(corpus: &Corpus, pairs: &PairSet, annotators: usize) -> Vec<Label> {
    let mut out = Vec::new();
    for p in &pairs.pairs {
        let text = |id: &str| corpus.get(id).map(|d| d.text.clone()).unwrap_or_default();
        let verdict = planted_preference(&text(&p.doc_a), &text(&p.doc_b));
        for a in 1..=annotators {
            out.push(Label {
                pair: p.id.clone(),
                annotator: format!("sim-{a}"),
                verdict,
            });
        }
    }
    out
}

/// Labels from `labels.jsonl` restricted to `pairs`, turned into gold.
fn gold_for(ctx: &Ctx, pairs: &PairSet, min_annotators: usize) -> Result<PairSet, CliError> {
    let ids: HashSet<&str> = pairs.pairs.iter().map(|p| p.id.as_str()).collect();
    let mut labels = Vec::new();
    for line in jsonl::recover(&ctx.dir.path("labels.jsonl"))? {
        let l: Label = serde_json::from_str(&line).map_err(CliError::failed)?;
        if ids.contains(l.pair.as_str()) {
            labels.push(l);
        }
    }
    Ok(attach_gold_with(pairs, &labels, min_annotators)?)
}

fn seeds(ctx: &Ctx) -> Result<Vec<CriterionSeed>, CliError> {
    match &ctx.cfg.criteria_seeds {
        Some(p) => Ok(jsonl::read(p)?),
        None => Ok(bundled_seeds()),
    }
}

pub fn mine_criteria(ctx: &Ctx, gateway: &Arc<Gateway>) -> Result<(), CliError> {
    let corpus = load_corpus(ctx)?;
    let human = gold_for(ctx, &load_pairs(ctx, Split::Human, "pairs/human.jsonl")?, 1)?;
    if human.decisive().is_empty() {
        return Err(CliError::Prerequisite {
            missing: "decisive human labels in labels.jsonl".into(),
            run_first: "annotate-serve",
        });
    }
    let kb = ingest_criteria(seeds(ctx)?, ctx.cfg.evolution.dedup_threshold)?;
    let judge = Judge::new(gateway.clone(), ctx.cfg.domain).with_mode(ctx.mode);
    let store = EvolutionStore::new(ctx.dir.path("evolution"));
    let outcome = store.run_with(
        &corpus,
        &human,
        &kb,
        ctx.cfg.evolution.clone(),
        &judge,
        &mut |_| ctx.dir.checkpoint(),
    )?;
    log::info!(
        "{} criteria reached t_final = {}",
        outcome.final_criteria.len(),
        ctx.cfg.evolution.t_final
    );

    let test = gold_for(
        ctx,
        &load_pairs(ctx, Split::Test, "pairs/test.jsonl")?,
        ctx.cfg.min_test_annotators,
    )?;
    let evaluation = Evaluation {
        final_criteria: outcome.final_criteria.len(),
        human: evaluate_split(&judge, &corpus, &human, &outcome.final_criteria)?,
        test: evaluate_split(&judge, &corpus, &test, &outcome.final_criteria)?,
    };
    jsonl::write_json(&ctx.dir.path("evaluation.json"), &evaluation)?;
    ctx.dir.checkpoint();
    Ok(())
}

fn evaluate_split(
    judge: &Judge,
    corpus: &Corpus,
    pairs: &PairSet,
    finals: &[FinalCriterion],
) -> Result<Option<SplitEvaluation>, CliError> {
    if finals.is_empty() || pairs.decisive().is_empty() {
        return Ok(None);
    }
    let texts: Vec<_> = finals.iter().map(FinalCriterion::text).collect();
    let set = judge.evaluate_set(corpus, pairs, &texts)?;
    let per_criterion: Vec<CriterionScore> = set.per_criterion.iter().map(score_of).collect();
    let defined: Vec<f64> = per_criterion.iter().filter_map(|c| c.accuracy).collect();
    Ok(Some(SplitEvaluation {
        split: pairs.split,
        pairs: pairs.decisive().len(),
        mean_individual_accuracy: (!defined.is_empty())
            .then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        per_criterion,
        ensemble_accuracy: set.accuracy,
        ensemble_correct: set.correct,
        ensemble_wrong: set.wrong,
        ensemble_null: set.null,
    }))
}

fn score_of(e: &CriterionEvaluation) -> CriterionScore {
    let s = &e.stats;
    CriterionScore {
        name: s.criterion_name.clone(),
        correct: s.correct,
        wrong: s.wrong,
        refused: s.refused,
        accuracy: s.accuracy,
        refuse_rate: s.refuse_rate,
    }
}

pub fn load_final(ctx: &Ctx) -> Result<Vec<FinalCriterion>, CliError> {
    Ok(EvolutionStore::new(ctx.dir.path("evolution")).load_final()?)
}

pub fn annotate_bulk(ctx: &Ctx, gateway: &Arc<Gateway>) -> Result<(), CliError> {
    let finals = load_final(ctx)?;
    if finals.is_empty() {
        return Err(CliError::Failed(format!(
            "no criterion reached t_final = {}; rerun `qcrit mine-criteria --force` with more human pairs or a lower threshold",
            ctx.cfg.evolution.t_final
        )));
    }
    let criteria: Vec<_> = finals.iter().map(FinalCriterion::text).collect();
    let corpus = load_corpus(ctx)?;
    let agent = load_pairs(ctx, Split::Agent, "pairs/agent.jsonl")?;
    let path = ctx.dir.path("annotations.jsonl");

    let mut done: Vec<BulkAnnotation> = Vec::new();
    for line in jsonl::recover(&path)? {
        done.push(serde_json::from_str(&line).map_err(CliError::failed)?);
    }
    let consistent =
        done.len() <= agent.len() && done.iter().zip(&agent.pairs).all(|(a, p)| a.pair == p.id);
    if !consistent {
        return Err(CliError::Failed(format!(
            "{} does not match pairs/agent.jsonl; rerun with --force",
            path.display()
        )));
    }
    if !done.is_empty() {
        log::info!("resuming bulk annotation after {} pairs", done.len());
    }

    let judge = Judge::new(gateway.clone(), ctx.cfg.domain).with_mode(ctx.mode);
    let mut out = Appender::open(&path)?;
    for chunk in agent.pairs[done.len()..].chunks(BULK_CHUNK) {
        let refs: Vec<&Pair> = chunk.iter().collect();
        let anns = judge.annotate(&corpus, &refs, &criteria)?;
        out.append(&anns)?;
        done.extend(anns);
        ctx.dir.checkpoint();
    }

    let labeled: Vec<Pair> = agent
        .pairs
        .iter()
        .zip(&done)
        .filter_map(|(p, a)| {
            let gold = match a.verdict {
                Verdict::A => Preference::A,
                Verdict::B => Preference::B,
                Verdict::Null => return None,
            };
            Some(Pair {
                gold: Some(gold),
                ..p.clone()
            })
        })
        .collect();
    log::info!(
        "{} of {} agent pairs received a decisive ensemble verdict",
        labeled.len(),
        agent.len()
    );
    jsonl::write_records(&ctx.dir.path("pairs/agent_labeled.jsonl"), &labeled)?;
    ctx.dir.checkpoint();
    Ok(())
}

pub fn train_scorer(ctx: &Ctx) -> Result<(), CliError> {
    let corpus = load_corpus(ctx)?;
    let labeled = load_pairs(ctx, Split::Agent, "pairs/agent_labeled.jsonl")?;
    let text = |id: &str| -> Result<&str, CliError> {
        corpus
            .get(id)
            .map(|d| d.text.as_str())
            .ok_or_else(|| CliError::Failed(format!("unknown document {id:?}")))
    };
    let mut ordered = Vec::with_capacity(labeled.len());
    for p in &labeled.pairs {
        let (a, b) = (text(&p.doc_a)?, text(&p.doc_b)?);
        match p.gold {
            Some(Preference::A) => ordered.push((a, b)),
            Some(Preference::B) => ordered.push((b, a)),
            _ => {}
        }
    }
    let texts: Vec<&str> = corpus.documents().iter().map(|d| d.text.as_str()).collect();
    let s = &ctx.cfg.scorer;
    let out = train_on_texts(s.featurizer, &ordered, &texts, &s.train, ctx.mode)?;
    let meta = &out.model.training_meta;
    log::info!(
        "trained on {} pairs; best validation accuracy {:.3} at step {} of {}",
        meta.train_pairs,
        meta.best_validation_accuracy,
        meta.best_step,
        meta.total_steps
    );
    jsonl::write_json(&ctx.dir.path("scorer.json"), &out.model)?;
    ctx.dir.checkpoint();
    Ok(())
}

pub fn score(ctx: &Ctx) -> Result<(), CliError> {
    let corpus = load_corpus(ctx)?;
    let model: ScorerModel = jsonl::read_json(&ctx.dir.path("scorer.json"))?;
    model.validate()?;
    let texts: Vec<&str> = corpus.documents().iter().map(|d| d.text.as_str()).collect();
    let raw = model.scorer().raw_many(&texts, ctx.mode);
    let z = normalize(&raw);
    let records: Vec<ScoreRecord> = corpus
        .documents()
        .iter()
        .zip(raw.iter().zip(z))
        .map(|(d, (&raw, score))| ScoreRecord {
            id: d.id.clone(),
            raw,
            score,
        })
        .collect();
    jsonl::write_records(&ctx.dir.path("scores.jsonl"), &records)?;
    ctx.dir.checkpoint();
    Ok(())
}

pub fn select(ctx: &Ctx) -> Result<(), CliError> {
    let scores: Vec<ScoreRecord> = jsonl::read(&ctx.dir.path("scores.jsonl"))?;
    let docs: Vec<ScoredDocument> = scores
        .iter()
        .map(|s| ScoredDocument {
            id: s.id.clone(),
            score: s.score,
        })
        .collect();
    let sel_cfg = SelectionConfig {
        temperature: ctx.cfg.selection.temperature,
        k: ctx.cfg.select_k(docs.len()),
        seed: ctx.cfg.selection.seed,
    };
    let sel = gumbel_topk(&docs, &sel_cfg)?;
    jsonl::write_records::<SelectionRow>(&ctx.dir.path("selection.jsonl"), &sel.rows)?;
    ctx.dir.checkpoint();

    let score_of = |id: &str| scores.iter().find(|s| s.id == id).map_or(0.0, |s| s.score);
    let ranked: Vec<SelectedRecord> = sel
        .selected
        .iter()
        .enumerate()
        .map(|(i, id)| SelectedRecord {
            rank: i + 1,
            id: id.clone(),
            score: score_of(id),
        })
        .collect();
    jsonl::write_records(&ctx.dir.path("selected.jsonl"), &ranked)?;
    let corpus = load_corpus(ctx)?;
    let chosen: HashSet<&str> = sel.selected.iter().map(String::as_str).collect();
    let kept: Vec<_> = corpus
        .records()
        .into_iter()
        .filter(|r| chosen.contains(r.id.as_str()))
        .collect();
    jsonl::write_records(&ctx.dir.path("selected_corpus.jsonl"), &kept)?;
    ctx.dir.checkpoint();
    jsonl::write_json(&ctx.dir.path("selection_manifest.json"), &sel.manifest)?;
    ctx.dir.checkpoint();
    log::info!("selected {} of {} documents", sel_cfg.k, docs.len());
    Ok(())
}
