//! Iterative criteria evolution.
//!
//! Each iteration judges every active criterion on the human-labeled pairs,
//! then splits them by accuracy: criteria at or above `t_high` are kept, those
//! at or below `t_low` are removed (and deny-listed), and the rest are sent to
//! the manager for reflection on their wrong cases. A refined description is
//! measured in the next iteration and only replaces the current one if its
//! accuracy does not drop. Removed slots are refilled with new proposals.

mod store;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use store::EvolutionStore;

use crate::corpus::{Corpus, PairSet};
use crate::jsonl::JsonlError;
use crate::judgment::{
    CriterionEvaluation, CriterionStats, CriterionText, Judge, JudgeError, Verdict,
};
use crate::knowledge_base::{self, CriterionSeed, KnowledgeBase};
use crate::llm_gateway::{AgentRole, ChatRequest, Gateway, GatewayError};
use crate::par::{self, Mode};
use crate::prompts::{self, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    KnowledgeBase,
    Generated,
    Refined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Removed,
}

/// One evaluated description of a criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Version {
    pub description: String,
    pub accuracy: Option<f64>,
    pub refuse_rate: f64,
    pub iteration: usize,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    /// Last accepted description.
    pub description: String,
    pub origin: Origin,
    pub versions: Vec<Version>,
    pub status: Status,
    /// Refined description awaiting measurement in the next iteration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<String>,
}

impl Criterion {
    pub fn new(name: impl Into<String>, description: impl Into<String>, origin: Origin) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            origin,
            versions: Vec::new(),
            status: Status::Active,
            candidate: None,
        }
    }

    pub fn text(&self) -> CriterionText {
        CriterionText::new(&self.name, &self.description)
    }

    /// Index of the version the current description came from.
    pub fn current_version(&self) -> Option<usize> {
        self.versions.iter().rposition(|v| v.accepted)
    }

    pub fn accuracy(&self) -> Option<f64> {
        self.current_version()
            .and_then(|i| self.versions[i].accuracy)
    }

    /// Highest-accuracy accepted version (latest wins ties).
    pub fn best_version(&self) -> Option<(usize, &Version)> {
        self.versions
            .iter()
            .enumerate()
            .filter(|(_, v)| v.accepted)
            .max_by(|(_, a), (_, b)| cmp_acc(a.accuracy, b.accuracy))
    }

    pub fn is_active(&self) -> bool {
        self.status == Status::Active
    }
}

fn cmp_acc(a: Option<f64>, b: Option<f64>) -> std::cmp::Ordering {
    a.unwrap_or(-1.0).total_cmp(&b.unwrap_or(-1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub n_criteria: usize,
    pub iterations: usize,
    pub t_high: f64,
    pub t_low: f64,
    pub t_final: f64,
    pub retrieval_threshold: f64,
    #[serde(default = "default_dedup")]
    pub dedup_threshold: f64,
    /// Manager re-requests when proposals collide with existing names.
    #[serde(default = "default_rounds")]
    pub propose_rounds: usize,
    /// Attempts per relevance question before excluding the criterion.
    #[serde(default = "default_rounds")]
    pub relevance_attempts: usize,
}

fn default_dedup() -> f64 {
    knowledge_base::DEFAULT_DEDUP_THRESHOLD
}

fn default_rounds() -> usize {
    3
}

impl EvolutionConfig {
    /// Per-domain defaults.
    pub fn for_domain(domain: Domain) -> Self {
        let (iterations, t_high, t_low, t_final) = match domain {
            Domain::Code => (3, 0.9, 0.8, 0.9),
            Domain::Math => (5, 0.8, 0.7, 0.7),
            Domain::Logic => (3, 0.8, 0.7, 0.8),
        };
        Self {
            n_criteria: 20,
            iterations,
            t_high,
            t_low,
            t_final,
            retrieval_threshold: knowledge_base::DEFAULT_RETRIEVAL_THRESHOLD,
            dedup_threshold: default_dedup(),
            propose_rounds: default_rounds(),
            relevance_attempts: default_rounds(),
        }
    }

    pub fn validate(&self) -> Result<(), EvolutionError> {
        let bad = |m: &str| Err(EvolutionError::Config(m.to_string()));
        if self.n_criteria == 0 || self.iterations == 0 {
            return bad("n_criteria and iterations must be positive");
        }
        if !(0.0 <= self.t_low && self.t_low < self.t_high && self.t_high <= 1.0) {
            return bad("thresholds must satisfy 0 <= t_low < t_high <= 1");
        }
        for (name, v) in [
            ("t_final", self.t_final),
            ("retrieval_threshold", self.retrieval_threshold),
            ("dedup_threshold", self.dedup_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub name: String,
    pub version: usize,
    pub accuracy: Option<f64>,
    pub refuse_rate: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvolutionState {
    /// Completed iterations; 0 after initialization.
    pub iteration: usize,
    pub initialized: bool,
    pub criteria: Vec<Criterion>,
    pub deny_list: BTreeSet<String>,
    pub history: Vec<HistoryRecord>,
}

impl EvolutionState {
    pub fn active(&self) -> impl Iterator<Item = &Criterion> {
        self.criteria.iter().filter(|c| c.is_active())
    }

    pub fn active_names(&self) -> Vec<String> {
        self.active().map(|c| c.name.clone()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub keep: Vec<String>,
    pub reflect: Vec<String>,
    pub remove: Vec<String>,
}

/// Split criteria by accuracy: `>= t_high` keep, `<= t_low` or undefined
/// remove, otherwise reflect.
pub fn partition(stats: &[CriterionStats], t_high: f64, t_low: f64) -> Partition {
    let mut p = Partition::default();
    for s in stats {
        let bucket = match s.accuracy {
            Some(a) if a >= t_high => &mut p.keep,
            Some(a) if a > t_low => &mut p.reflect,
            _ => &mut p.remove,
        };
        bucket.push(s.criterion_name.clone());
    }
    p
}

/// Record a measured candidate; it becomes current only if it is at least as
/// accurate as the current version. Returns whether it was accepted.
pub fn accept_if_improved(
    criterion: &mut Criterion,
    candidate: String,
    new: &CriterionStats,
    old_accuracy: Option<f64>,
    iteration: usize,
) -> bool {
    let accepted = cmp_acc(new.accuracy, old_accuracy).is_ge();
    if accepted {
        criterion.description = candidate.clone();
        criterion.origin = Origin::Refined;
    }
    criterion.versions.push(Version {
        description: candidate,
        accuracy: new.accuracy,
        refuse_rate: new.refuse_rate,
        iteration,
        accepted,
    });
    accepted
}

#[derive(Debug, thiserror::Error)]
pub enum EvolutionError {
    #[error("invalid evolution config: {0}")]
    Config(String),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Io(#[from] JsonlError),
    #[error("criterion {0:?} has no wrong cases to reflect on")]
    NothingToReflect(String),
    #[error("all criteria were removed and no replacements could be proposed (after {} history records)", history.len())]
    AllRemoved { history: Vec<HistoryRecord> },
}

/// A worker mistake handed to the manager for reflection.
#[derive(Debug, Clone, PartialEq)]
pub struct WrongCase {
    pub text_a: String,
    pub text_b: String,
    pub gold: Verdict,
    pub worker_verdict: Verdict,
    pub rationale: String,
}

fn suggestion_of(reply: &str) -> String {
    match reply.find("SUGGESTION:") {
        Some(i) => reply[i + "SUGGESTION:".len()..].trim().to_string(),
        None => reply.trim().to_string(),
    }
}

/// Ask the manager why each wrong case went wrong, then for a refined
/// description conditioned on all suggestions. The candidate is not applied.
pub fn reflect(
    criterion: &CriterionText,
    wrong_cases: &[WrongCase],
    gateway: &Gateway,
    domain: Domain,
    mode: Mode,
) -> Result<String, EvolutionError> {
    if wrong_cases.is_empty() {
        return Err(EvolutionError::NothingToReflect(criterion.name.clone()));
    }
    let width = gateway.max_in_flight(AgentRole::Manager);
    let replies = par::map_bounded(mode, width, wrong_cases, |w| {
        let prompt = prompts::analyze_mistake(
            domain,
            &criterion.name,
            &criterion.description,
            &w.text_a,
            &w.text_b,
            w.gold.as_str(),
            w.worker_verdict.as_str(),
            &w.rationale,
        );
        gateway.complete(&ChatRequest::user(AgentRole::Manager, prompt))
    });
    let suggestions = replies
        .into_iter()
        .map(|r| r.map(|c| suggestion_of(&c.text)))
        .collect::<Result<Vec<_>, _>>()?;
    let prompt = prompts::refine(
        domain,
        &criterion.name,
        &criterion.description,
        &suggestions,
    );
    let reply = gateway.complete(&ChatRequest::user(AgentRole::Manager, prompt))?;
    Ok(reply.text.trim().to_string())
}

/// Parse a `{name: description}` JSON object out of a manager reply.
pub fn parse_proposals(reply: &str) -> Vec<(String, String)> {
    let (Some(start), Some(end)) = (reply.find('{'), reply.rfind('}')) else {
        return Vec::new();
    };
    if end <= start {
        return Vec::new();
    }
    match serde_json::from_str::<serde_json::Map<String, Value>>(&reply[start..=end]) {
        Ok(m) => m
            .into_iter()
            .map(|(k, v)| {
                let d = match v {
                    Value::String(s) => s,
                    other => other.to_string(),
                };
                (k.trim().to_string(), d.trim().to_string())
            })
            .filter(|(k, d)| !k.is_empty() && !d.is_empty())
            .collect(),
        Err(e) => {
            log::warn!("unparseable criteria proposal: {e}");
            Vec::new()
        }
    }
}

/// Ask the manager for up to `count` new criteria whose names collide with
/// neither the deny-list nor `taken`.
pub fn propose_new(
    gateway: &Gateway,
    domain: Domain,
    deny_list: &BTreeSet<String>,
    taken: &[String],
    count: usize,
    dedup_threshold: f64,
    max_rounds: usize,
) -> Result<Vec<CriterionSeed>, GatewayError> {
    let mut out: Vec<CriterionSeed> = Vec::new();
    let mut rejected: Vec<String> = Vec::new();
    for _ in 0..max_rounds.max(1) {
        if out.len() >= count {
            break;
        }
        let mut excluded: Vec<String> = deny_list.iter().cloned().collect();
        excluded.extend(taken.iter().cloned());
        excluded.extend(out.iter().map(|c| c.name.clone()));
        excluded.extend(rejected.iter().cloned());
        let prompt = prompts::propose(domain, count - out.len(), &excluded);
        let reply = gateway.complete(&ChatRequest::user(AgentRole::Manager, prompt))?;
        for (name, description) in parse_proposals(&reply.text) {
            if out.len() >= count {
                break;
            }
            let clash = knowledge_base::collides(
                &name,
                deny_list
                    .iter()
                    .map(String::as_str)
                    .chain(taken.iter().map(String::as_str))
                    .chain(out.iter().map(|c| c.name.as_str())),
                dedup_threshold,
            );
            match clash {
                Some(other) => {
                    log::debug!("dropping proposal {name:?}: collides with {other:?}");
                    if !rejected.contains(&name) {
                        rejected.push(name);
                    }
                }
                None => out.push(CriterionSeed::new(&name, &description, "manager")),
            }
        }
    }
    if out.len() < count {
        log::warn!(
            "manager proposed only {} of {count} requested criteria",
            out.len()
        );
    }
    Ok(out)
}

/// What happened in one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub stats: Vec<CriterionStats>,
    pub partition: Partition,
    pub reflected: Vec<String>,
    pub proposed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalCriterion {
    pub name: String,
    pub description: String,
    pub accuracy: f64,
    pub refuse_rate: f64,
    pub version: usize,
}

impl FinalCriterion {
    pub fn text(&self) -> CriterionText {
        CriterionText::new(&self.name, &self.description)
    }
}

/// Drives the evolution loop over one human-labeled pair set.
pub struct Evolution<'a> {
    corpus: &'a Corpus,
    d_human: &'a PairSet,
    judge: &'a Judge,
    cfg: EvolutionConfig,
    state: EvolutionState,
    mode: Mode,
}

impl<'a> Evolution<'a> {
    pub fn new(
        corpus: &'a Corpus,
        d_human: &'a PairSet,
        judge: &'a Judge,
        cfg: EvolutionConfig,
    ) -> Result<Self, EvolutionError> {
        Self::resume(corpus, d_human, judge, cfg, EvolutionState::default())
    }

    pub fn resume(
        corpus: &'a Corpus,
        d_human: &'a PairSet,
        judge: &'a Judge,
        cfg: EvolutionConfig,
        state: EvolutionState,
    ) -> Result<Self, EvolutionError> {
        cfg.validate()?;
        Ok(Self {
            corpus,
            d_human,
            judge,
            cfg,
            state,
            mode: Mode::default(),
        })
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn state(&self) -> &EvolutionState {
        &self.state
    }

    pub fn into_state(self) -> EvolutionState {
        self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.initialized && self.state.iteration >= self.cfg.iterations
    }

    fn gateway(&self) -> &Arc<Gateway> {
        self.judge.gateway()
    }

    /// Seed the active set: domain-filter the knowledge base, retrieve the most
    /// accurate criteria, and top up with manager proposals.
    pub fn initialize(&mut self, kb: &KnowledgeBase) -> Result<(), EvolutionError> {
        let domain = self.judge.domain();
        let c_domain = knowledge_base::filter_domain(
            kb,
            domain,
            self.gateway(),
            self.cfg.relevance_attempts as u32,
            self.mode,
        )?;
        let texts: Vec<CriterionText> = c_domain
            .iter()
            .map(|c| CriterionText::new(&c.name, &c.description))
            .collect();
        let evals = self
            .judge
            .evaluate_criteria(self.corpus, self.d_human, &texts)?;
        let accs: Vec<Option<f64>> = evals.iter().map(|e| e.stats.accuracy).collect();
        for i in knowledge_base::rank_by_accuracy(
            &accs,
            self.cfg.n_criteria,
            self.cfg.retrieval_threshold,
        ) {
            let c = &c_domain[i];
            self.state.criteria.push(Criterion::new(
                &c.name,
                &c.description,
                Origin::KnowledgeBase,
            ));
        }
        log::info!(
            "retrieved {} of {} domain criteria ({} in knowledge base)",
            self.state.criteria.len(),
            c_domain.len(),
            kb.criteria.len()
        );
        self.refill()?;
        if self.state.active().next().is_none() {
            return Err(EvolutionError::AllRemoved {
                history: self.state.history.clone(),
            });
        }
        self.state.initialized = true;
        Ok(())
    }

    fn refill(&mut self) -> Result<Vec<String>, EvolutionError> {
        let active = self.state.active_names();
        let need = self.cfg.n_criteria.saturating_sub(active.len());
        if need == 0 {
            return Ok(Vec::new());
        }
        // Removed names are all deny-listed; every other known name is taken.
        let taken: Vec<String> = self.state.criteria.iter().map(|c| c.name.clone()).collect();
        let fresh = propose_new(
            self.gateway(),
            self.judge.domain(),
            &self.state.deny_list,
            &taken,
            need,
            self.cfg.dedup_threshold,
            self.cfg.propose_rounds,
        )?;
        let names = fresh.iter().map(|c| c.name.clone()).collect();
        for c in fresh {
            self.state
                .criteria
                .push(Criterion::new(c.name, c.description, Origin::Generated));
        }
        Ok(names)
    }

    /// Run the next iteration.
    pub fn run_iteration(&mut self) -> Result<IterationReport, EvolutionError> {
        let iteration = self.state.iteration + 1;
        let active: Vec<usize> = (0..self.state.criteria.len())
            .filter(|&i| self.state.criteria[i].is_active())
            .collect();

        // Judge each active criterion under exactly one description: the
        // pending candidate if there is one, otherwise the current one.
        let texts: Vec<CriterionText> = active
            .iter()
            .map(|&i| {
                let c = &self.state.criteria[i];
                CriterionText::new(&c.name, c.candidate.as_deref().unwrap_or(&c.description))
            })
            .collect();
        let evals = self
            .judge
            .evaluate_criteria(self.corpus, self.d_human, &texts)?;

        let mut stats = Vec::with_capacity(active.len());
        for (&i, eval) in active.iter().zip(&evals) {
            let c = &mut self.state.criteria[i];
            let (version, accepted) = match c.candidate.take() {
                Some(candidate) => {
                    let old = c.accuracy();
                    let accepted = accept_if_improved(c, candidate, &eval.stats, old, iteration);
                    (c.versions.len() - 1, accepted)
                }
                None if c.versions.is_empty() => {
                    c.versions.push(Version {
                        description: c.description.clone(),
                        accuracy: eval.stats.accuracy,
                        refuse_rate: eval.stats.refuse_rate,
                        iteration,
                        accepted: true,
                    });
                    (0, true)
                }
                None => (c.current_version().expect("evaluated before"), true),
            };
            self.state.history.push(HistoryRecord {
                iteration,
                name: c.name.clone(),
                version,
                accuracy: eval.stats.accuracy,
                refuse_rate: eval.stats.refuse_rate,
                accepted,
            });
            // Partition on the current version, which a rejected candidate leaves untouched.
            let current = &c.versions[c.current_version().expect("has accepted version")];
            stats.push(CriterionStats {
                accuracy: current.accuracy,
                refuse_rate: current.refuse_rate,
                ..eval.stats.clone()
            });
        }

        let part = partition(&stats, self.cfg.t_high, self.cfg.t_low);
        for name in &part.remove {
            if let Some(c) = self.state.criteria.iter_mut().find(|c| &c.name == name) {
                c.status = Status::Removed;
            }
            self.state.deny_list.insert(name.clone());
        }

        let last = iteration >= self.cfg.iterations;
        let mut reflected = Vec::new();
        let mut proposed = Vec::new();
        if !last {
            for ((&i, eval), judged) in active.iter().zip(&evals).zip(&texts) {
                let name = self.state.criteria[i].name.clone();
                if !part.reflect.contains(&name) {
                    continue;
                }
                // Reflect on the mistakes of the description now in force.
                let current = self.state.criteria[i].text();
                let own_eval;
                let eval = if judged.description == current.description {
                    eval
                } else {
                    own_eval =
                        self.judge
                            .evaluate_criterion(self.corpus, self.d_human, &current)?;
                    &own_eval
                };
                let wrong = self.wrong_cases(eval);
                match reflect(
                    &current,
                    &wrong,
                    self.gateway(),
                    self.judge.domain(),
                    self.mode,
                ) {
                    Ok(candidate) if !candidate.is_empty() => {
                        self.state.criteria[i].candidate = Some(candidate);
                        reflected.push(name);
                    }
                    Ok(_) => log::warn!("empty refinement for {name:?}; keeping description"),
                    Err(e) => log::warn!("reflection on {name:?} failed: {e}; keeping description"),
                }
            }
            proposed = self.refill()?;
        }
        if self.state.active().next().is_none() {
            return Err(EvolutionError::AllRemoved {
                history: self.state.history.clone(),
            });
        }
        self.state.iteration = iteration;
        Ok(IterationReport {
            iteration,
            stats,
            partition: part,
            reflected,
            proposed,
        })
    }

    fn wrong_cases(&self, eval: &CriterionEvaluation) -> Vec<WrongCase> {
        eval.judgments
            .iter()
            .filter_map(|j| {
                let pair = self.d_human.get(&j.pair_id)?;
                let gold = match pair.decisive_gold()? {
                    crate::corpus::Preference::A => Verdict::A,
                    _ => Verdict::B,
                };
                if j.verdict == Verdict::Null || j.verdict == gold {
                    return None;
                }
                Some(WrongCase {
                    text_a: self.corpus.get(&pair.doc_a)?.text.clone(),
                    text_b: self.corpus.get(&pair.doc_b)?.text.clone(),
                    gold,
                    worker_verdict: j.verdict,
                    rationale: j.rationale.clone(),
                })
            })
            .collect()
    }

    /// Active criteria whose best version reaches `t_final`.
    pub fn final_criteria(&self) -> Vec<FinalCriterion> {
        select_final(&self.state, self.cfg.t_final)
    }
}

/// Each active criterion's best accepted version, if it reaches `t_final`.
pub fn select_final(state: &EvolutionState, t_final: f64) -> Vec<FinalCriterion> {
    state
        .active()
        .filter_map(|c| {
            let (i, v) = c.best_version()?;
            let acc = v.accuracy?;
            (acc >= t_final).then(|| FinalCriterion {
                name: c.name.clone(),
                description: v.description.clone(),
                accuracy: acc,
                refuse_rate: v.refuse_rate,
                version: i,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionOutcome {
    pub final_criteria: Vec<FinalCriterion>,
    pub state: EvolutionState,
    pub reports: Vec<IterationReport>,
}

/// Initialize from the knowledge base and run every iteration in memory.
pub fn run_evolution(
    corpus: &Corpus,
    d_human: &PairSet,
    kb: &KnowledgeBase,
    cfg: EvolutionConfig,
    judge: &Judge,
) -> Result<EvolutionOutcome, EvolutionError> {
    let mut evo = Evolution::new(corpus, d_human, judge, cfg)?;
    evo.initialize(kb)?;
    let mut reports = Vec::new();
    while !evo.is_done() {
        reports.push(evo.run_iteration()?);
    }
    Ok(EvolutionOutcome {
        final_criteria: evo.final_criteria(),
        state: evo.into_state(),
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{sample_pairs, Document, Split};
    use crate::knowledge_base::{bundled_seeds, ingest_criteria};
    use crate::llm_gateway::sim::{label_planted, synthetic_code};
    use crate::llm_gateway::{ScriptedProvider, SimulatedProvider};

    fn stats(name: &str, acc: Option<f64>) -> CriterionStats {
        CriterionStats {
            criterion_name: name.into(),
            correct: 0,
            wrong: 0,
            refused: 0,
            accuracy: acc,
            refuse_rate: 0.0,
        }
    }

    #[test]
    fn partition_code_thresholds() {
        let s = [
            stats("c1", Some(0.95)),
            stats("c2", Some(0.85)),
            stats("c3", Some(0.80)),
            stats("c4", Some(0.90)),
            stats("c5", None),
        ];
        let p = partition(&s, 0.9, 0.8);
        assert_eq!(p.keep, ["c1", "c4"]);
        assert_eq!(p.reflect, ["c2"]);
        assert_eq!(p.remove, ["c3", "c5"]);
    }

    #[test]
    fn candidate_accepted_only_if_not_worse() {
        let mut c = Criterion::new("x", "v0", Origin::KnowledgeBase);
        c.versions.push(Version {
            description: "v0".into(),
            accuracy: Some(0.85),
            refuse_rate: 0.0,
            iteration: 1,
            accepted: true,
        });
        assert!(!accept_if_improved(
            &mut c,
            "v1".into(),
            &stats("x", Some(0.83)),
            Some(0.85),
            2
        ));
        assert_eq!(c.description, "v0");
        assert_eq!(c.accuracy(), Some(0.85));
        assert!(accept_if_improved(
            &mut c,
            "v2".into(),
            &stats("x", Some(0.85)),
            Some(0.85),
            3
        ));
        assert_eq!(c.description, "v2");
        assert_eq!(c.origin, Origin::Refined);
        assert_eq!(c.versions.len(), 3);
        assert_eq!(c.best_version().unwrap().0, 2);
    }

    #[test]
    fn proposals_parse_from_fenced_json() {
        let got = parse_proposals("Sure:\n```json\n{\"a b\": \"desc\", \"c\": 3}\n```");
        assert_eq!(
            got,
            [
                ("a b".to_string(), "desc".to_string()),
                ("c".into(), "3".into())
            ]
        );
        assert!(parse_proposals("no json here").is_empty());
    }

    #[test]
    fn proposals_skip_deny_listed_names() {
        let p = ScriptedProvider::new(r#"{"Code Quality": "d", "naming": "e", "tests": "f"}"#);
        let gw = Gateway::single(Arc::new(p));
        let deny: BTreeSet<String> = ["quality_code".to_string()].into();
        let got = propose_new(&gw, Domain::Code, &deny, &["Naming".into()], 2, 0.3, 3).unwrap();
        let names: Vec<_> = got.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["tests"]);
    }

    #[test]
    fn reflect_needs_wrong_cases() {
        let gw = Gateway::single(Arc::new(ScriptedProvider::new("x")));
        let c = CriterionText::new("n", "d");
        assert!(matches!(
            reflect(&c, &[], &gw, Domain::Code, Mode::Sequential),
            Err(EvolutionError::NothingToReflect(_))
        ));
    }

    #[test]
    fn config_defaults_and_validation() {
        let m = EvolutionConfig::for_domain(Domain::Math);
        assert_eq!(
            (m.n_criteria, m.iterations, m.t_high, m.t_low, m.t_final),
            (20, 5, 0.8, 0.7, 0.7)
        );
        let mut bad = EvolutionConfig::for_domain(Domain::Code);
        bad.t_low = 0.95;
        assert!(bad.validate().is_err());
    }

    pub(crate) fn world(n_docs: usize, n_pairs: usize) -> (Corpus, PairSet) {
        let docs = (0..n_docs)
            .map(|i| Document::new(format!("d{i:04}"), synthetic_code(11, i), "code"))
            .collect();
        let corpus = Corpus::from_documents(docs).unwrap();
        let pairs = sample_pairs(&corpus, n_pairs, 4, 5, Split::Human).unwrap();
        let pairs = label_planted(&corpus, &pairs);
        (corpus, pairs)
    }

    #[test]
    fn simulated_run_is_monotone() {
        let (corpus, human) = world(120, 60);
        let gw = Arc::new(Gateway::single(Arc::new(SimulatedProvider::new(
            Domain::Code,
            7,
        ))));
        let judge = Judge::new(gw, Domain::Code);
        let kb = ingest_criteria(bundled_seeds(), 0.3).unwrap();
        let out = run_evolution(
            &corpus,
            &human,
            &kb,
            EvolutionConfig::for_domain(Domain::Code),
            &judge,
        )
        .unwrap();
        assert_eq!(out.reports.len(), 3);
        for c in &out.state.criteria {
            let accepted: Vec<f64> = c
                .versions
                .iter()
                .filter(|v| v.accepted)
                .map(|v| v.accuracy.unwrap_or(-1.0))
                .collect();
            assert!(
                accepted.windows(2).all(|w| w[1] >= w[0]),
                "{}: {accepted:?}",
                c.name
            );
        }
        for f in &out.final_criteria {
            assert!(f.accuracy >= 0.9);
        }
        for name in &out.state.deny_list {
            let c = out.state.criteria.iter().find(|c| &c.name == name).unwrap();
            assert_eq!(c.status, Status::Removed);
        }
        assert!(!out.state.deny_list.is_empty());
    }

    #[test]
    fn store_resumes_to_identical_state() {
        let (corpus, human) = world(80, 40);
        let kb = ingest_criteria(bundled_seeds(), 0.3).unwrap();
        let cfg = EvolutionConfig::for_domain(Domain::Code);
        let judge = || {
            let gw = Arc::new(Gateway::single(Arc::new(SimulatedProvider::new(
                Domain::Code,
                3,
            ))));
            Judge::new(gw, Domain::Code)
        };
        let a = tempfile::tempdir().unwrap();
        let full = EvolutionStore::new(a.path())
            .run(&corpus, &human, &kb, cfg.clone(), &judge())
            .unwrap();

        // Stop after one iteration, then resume with a fresh judge.
        let b = tempfile::tempdir().unwrap();
        let store = EvolutionStore::new(b.path());
        let j = judge();
        let mut evo = Evolution::new(&corpus, &human, &j, cfg.clone()).unwrap();
        evo.initialize(&kb).unwrap();
        store.save(evo.state(), None).unwrap();
        let r = evo.run_iteration().unwrap();
        store.save(evo.state(), Some(&r)).unwrap();
        let resumed = store.run(&corpus, &human, &kb, cfg, &judge()).unwrap();
        assert_eq!(full.state, resumed.state);
        assert_eq!(full.final_criteria, resumed.final_criteria);
        for f in [
            "history.jsonl",
            "criteria.jsonl",
            "final_criteria.jsonl",
            "iter_3_stats.json",
        ] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }
}
