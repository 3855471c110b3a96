//! Per-criterion pairwise judgment, majority voting and criterion accuracy.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Pair, PairSet, Preference};
use crate::llm_gateway::{AgentRole, ChatRequest, Gateway, GatewayError};
use crate::par::{self, Mode};
use crate::prompts::{self, Domain};
use crate::text::hash_parts;

/// A worker's answer for one pair under one criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    A,
    B,
    #[serde(rename = "NULL")]
    Null,
}

impl Verdict {
    pub fn swapped(self) -> Self {
        match self {
            Verdict::A => Verdict::B,
            Verdict::B => Verdict::A,
            Verdict::Null => Verdict::Null,
        }
    }

    pub fn matches(self, gold: Preference) -> bool {
        matches!(
            (self, gold),
            (Verdict::A, Preference::A) | (Verdict::B, Preference::B)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::A => "A",
            Verdict::B => "B",
            Verdict::Null => "NULL",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verdict {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Verdict::A),
            "B" => Ok(Verdict::B),
            "NULL" | "NONE" | "N/A" => Ok(Verdict::Null),
            _ => Err(()),
        }
    }
}

/// Rationale recorded when a worker reply never yields a parseable answer.
pub const PARSE_FAILURE: &str = "parse-failure";

/// Name and description of a criterion as shown to workers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CriterionText {
    pub name: String,
    pub description: String,
}

impl CriterionText {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    #[serde(rename = "pair")]
    pub pair_id: String,
    #[serde(rename = "criterion")]
    pub criterion_name: String,
    pub verdict: Verdict,
    /// The worker's reply, verbatim.
    pub rationale: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub worker_tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionStats {
    pub criterion_name: String,
    pub correct: usize,
    pub wrong: usize,
    pub refused: usize,
    /// `correct / (correct + wrong)`; `None` when every judgment refused.
    pub accuracy: Option<f64>,
    pub refuse_rate: f64,
}

impl CriterionStats {
    pub fn total(&self) -> usize {
        self.correct + self.wrong + self.refused
    }

    /// Tally verdicts against decisive gold labels (`Tie` gold is skipped).
    pub fn tally(name: &str, outcomes: impl IntoIterator<Item = (Verdict, Preference)>) -> Self {
        let (mut correct, mut wrong, mut refused) = (0, 0, 0);
        for (v, gold) in outcomes {
            if gold == Preference::Tie {
                continue;
            }
            match v {
                Verdict::Null => refused += 1,
                v if v.matches(gold) => correct += 1,
                _ => wrong += 1,
            }
        }
        let total = correct + wrong + refused;
        let decided = correct + wrong;
        Self {
            criterion_name: name.to_string(),
            correct,
            wrong,
            refused,
            accuracy: (decided > 0).then(|| correct as f64 / decided as f64),
            refuse_rate: if total == 0 {
                0.0
            } else {
                refused as f64 / total as f64
            },
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum JudgeError {
    #[error(transparent)]
    Transport(#[from] GatewayError),
    #[error("pair {pair:?} references unknown document {doc:?}")]
    UnknownDocument { pair: String, doc: String },
    #[error("pair {0:?} has no gold label")]
    MissingGold(String),
    #[error("cannot vote on an empty judgment list")]
    EmptyVote,
    #[error("judgments for different pairs ({0:?} and {1:?}) in one vote")]
    MixedPairs(String, String),
    #[error("at least one criterion is required")]
    NoCriteria,
}

/// Majority over non-Null verdicts; a tie (including all-Null) is `Null`.
pub fn vote_verdicts(verdicts: impl IntoIterator<Item = Verdict>) -> Verdict {
    let (mut a, mut b) = (0usize, 0usize);
    for v in verdicts {
        match v {
            Verdict::A => a += 1,
            Verdict::B => b += 1,
            Verdict::Null => {}
        }
    }
    match a.cmp(&b) {
        std::cmp::Ordering::Greater => Verdict::A,
        std::cmp::Ordering::Less => Verdict::B,
        std::cmp::Ordering::Equal => Verdict::Null,
    }
}

/// Pair-level verdict from per-criterion judgments of the same pair.
pub fn vote(judgments: &[Judgment]) -> Result<Verdict, JudgeError> {
    let first = judgments.first().ok_or(JudgeError::EmptyVote)?;
    if let Some(other) = judgments.iter().find(|j| j.pair_id != first.pair_id) {
        return Err(JudgeError::MixedPairs(
            first.pair_id.clone(),
            other.pair_id.clone(),
        ));
    }
    Ok(vote_verdicts(judgments.iter().map(|j| j.verdict)))
}

/// Extract the answer from the last `FINAL:` line of a worker reply.
pub fn parse_final_answer(reply: &str) -> Option<Verdict> {
    let line = reply.lines().rev().map(str::trim).find(|l| {
        l.to_ascii_lowercase()
            .trim_start_matches(['*', '#', ' '])
            .starts_with("final")
    })?;
    let (_, answer) = line.split_once(':')?;
    let answer = answer
        .trim_matches(|c: char| c.is_whitespace() || matches!(c, '*' | '`' | '.' | '"' | '\''));
    answer.parse().ok()
}

/// Judgments under one criterion plus their statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CriterionEvaluation {
    pub stats: CriterionStats,
    pub judgments: Vec<Judgment>,
}

/// Ensemble result over a set of criteria.
#[derive(Debug, Clone, PartialEq)]
pub struct SetEvaluation {
    pub votes: Vec<(String, Verdict)>,
    pub correct: usize,
    pub wrong: usize,
    pub null: usize,
    /// `correct / (correct + wrong)`; pairs whose vote is Null are excluded.
    pub accuracy: Option<f64>,
    pub per_criterion: Vec<CriterionEvaluation>,
}

/// Issues worker requests and caches their judgments.
///
/// The cache is keyed by criterion text and pair content, so re-evaluating an
/// unchanged criterion costs nothing and yields identical results.
pub struct Judge {
    gateway: Arc<Gateway>,
    domain: Domain,
    parse_attempts: u32,
    mode: Mode,
    cache: Mutex<HashMap<u64, Judgment>>,
}

impl Judge {
    pub fn new(gateway: Arc<Gateway>, domain: Domain) -> Self {
        Self {
            gateway,
            domain,
            parse_attempts: 3,
            mode: Mode::default(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_parse_attempts(mut self, attempts: u32) -> Self {
        self.parse_attempts = attempts.max(1);
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    fn texts<'c>(&self, corpus: &'c Corpus, pair: &Pair) -> Result<(&'c str, &'c str), JudgeError> {
        let text = |id: &String| {
            corpus
                .get(id)
                .map(|d| d.text.as_str())
                .ok_or_else(|| JudgeError::UnknownDocument {
                    pair: pair.id.clone(),
                    doc: id.clone(),
                })
        };
        Ok((text(&pair.doc_a)?, text(&pair.doc_b)?))
    }

    fn cache_key(pair: &Pair, criterion: &CriterionText, a: &str, b: &str) -> u64 {
        hash_parts(
            0,
            &[&criterion.name, &criterion.description, &pair.id, a, b],
        )
    }

    fn cached(&self, key: u64) -> Option<Judgment> {
        self.cache.lock().expect("cache lock").get(&key).cloned()
    }

    pub fn judge_pair(
        &self,
        corpus: &Corpus,
        pair: &Pair,
        criterion: &CriterionText,
    ) -> Result<Judgment, JudgeError> {
        let (a, b) = self.texts(corpus, pair)?;
        let key = Self::cache_key(pair, criterion, a, b);
        if let Some(hit) = self.cached(key) {
            return Ok(hit);
        }

        let prompt = prompts::judgment(self.domain, &criterion.name, &criterion.description, a, b);
        let request = ChatRequest::user(AgentRole::Worker, prompt);
        let mut judgment = None;
        for _ in 0..self.parse_attempts {
            let reply = self.gateway.complete(&request)?;
            if let Some(verdict) = parse_final_answer(&reply.text) {
                judgment = Some((verdict, reply.text));
                break;
            }
        }
        let (verdict, rationale) = judgment.unwrap_or((Verdict::Null, PARSE_FAILURE.to_string()));
        let j = Judgment {
            pair_id: pair.id.clone(),
            criterion_name: criterion.name.clone(),
            verdict,
            rationale,
            worker_tag: AgentRole::Worker.to_string(),
        };
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, j.clone());
        Ok(j)
    }

    /// Judge every (criterion, pair) combination with bounded concurrency.
    /// Result is indexed `[criterion][pair]`. Cached judgments are served
    /// inline; only misses are fanned out.
    pub fn judge_grid(
        &self,
        corpus: &Corpus,
        pairs: &[&Pair],
        criteria: &[CriterionText],
    ) -> Result<Vec<Vec<Judgment>>, JudgeError> {
        let mut slots: Vec<Option<Judgment>> = Vec::with_capacity(criteria.len() * pairs.len());
        let mut misses: Vec<(usize, usize)> = Vec::new();
        for (c, criterion) in criteria.iter().enumerate() {
            for (p, pair) in pairs.iter().enumerate() {
                let (a, b) = self.texts(corpus, pair)?;
                let hit = self.cached(Self::cache_key(pair, criterion, a, b));
                if hit.is_none() {
                    misses.push((c, p));
                }
                slots.push(hit);
            }
        }
        let width = self.gateway.max_in_flight(AgentRole::Worker);
        let fresh = par::map_bounded(self.mode, width, &misses, |&(c, p)| {
            self.judge_pair(corpus, pairs[p], &criteria[c])
        });
        for ((c, p), r) in misses.into_iter().zip(fresh) {
            slots[c * pairs.len() + p] = Some(r?);
        }
        let mut it = slots.into_iter().map(|j| j.expect("filled"));
        Ok(criteria
            .iter()
            .map(|_| it.by_ref().take(pairs.len()).collect())
            .collect())
    }

    fn gold_pairs<'a>(&self, pairs: &'a PairSet) -> Result<Vec<&'a Pair>, JudgeError> {
        let mut out = Vec::with_capacity(pairs.len());
        for p in &pairs.pairs {
            match p.gold {
                None => return Err(JudgeError::MissingGold(p.id.clone())),
                Some(Preference::Tie) => {}
                Some(_) => out.push(p),
            }
        }
        Ok(out)
    }

    /// Accuracy and refuse rate of one criterion over gold-labeled pairs.
    /// Pairs with `Tie` gold are not judged.
    pub fn evaluate_criterion(
        &self,
        corpus: &Corpus,
        pairs: &PairSet,
        criterion: &CriterionText,
    ) -> Result<CriterionEvaluation, JudgeError> {
        Ok(self
            .evaluate_criteria(corpus, pairs, std::slice::from_ref(criterion))?
            .pop()
            .expect("one criterion"))
    }

    pub fn evaluate_criteria(
        &self,
        corpus: &Corpus,
        pairs: &PairSet,
        criteria: &[CriterionText],
    ) -> Result<Vec<CriterionEvaluation>, JudgeError> {
        let gold = self.gold_pairs(pairs)?;
        let grid = self.judge_grid(corpus, &gold, criteria)?;
        Ok(criteria
            .iter()
            .zip(grid)
            .map(|(c, judgments)| {
                let stats = CriterionStats::tally(
                    &c.name,
                    judgments
                        .iter()
                        .zip(&gold)
                        .map(|(j, p)| (j.verdict, p.gold.expect("gold checked"))),
                );
                CriterionEvaluation { stats, judgments }
            })
            .collect())
    }

    /// Majority-vote accuracy of a criteria set over gold-labeled pairs.
    pub fn evaluate_set(
        &self,
        corpus: &Corpus,
        pairs: &PairSet,
        criteria: &[CriterionText],
    ) -> Result<SetEvaluation, JudgeError> {
        if criteria.is_empty() {
            return Err(JudgeError::NoCriteria);
        }
        let gold = self.gold_pairs(pairs)?;
        let per_criterion = self.evaluate_criteria(corpus, pairs, criteria)?;
        let votes: Vec<(String, Verdict)> = gold
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let v = vote_verdicts(per_criterion.iter().map(|e| e.judgments[i].verdict));
                (p.id.clone(), v)
            })
            .collect();
        let stats = CriterionStats::tally(
            "ensemble",
            votes
                .iter()
                .zip(&gold)
                .map(|((_, v), p)| (*v, p.gold.expect("gold checked"))),
        );
        Ok(SetEvaluation {
            votes,
            correct: stats.correct,
            wrong: stats.wrong,
            null: stats.refused,
            accuracy: stats.accuracy,
            per_criterion,
        })
    }
}

/// Ensemble verdict for one unlabeled pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BulkAnnotation {
    pub pair: String,
    pub verdict: Verdict,
    /// Per-criterion verdicts, in criteria order.
    pub votes: Vec<Verdict>,
}

impl Judge {
    /// Judge `pairs` under every criterion and majority-vote each pair.
    /// Gold labels, if any, are ignored.
    pub fn annotate(
        &self,
        corpus: &Corpus,
        pairs: &[&Pair],
        criteria: &[CriterionText],
    ) -> Result<Vec<BulkAnnotation>, JudgeError> {
        if criteria.is_empty() {
            return Err(JudgeError::NoCriteria);
        }
        let grid = self.judge_grid(corpus, pairs, criteria)?;
        Ok(pairs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let votes: Vec<Verdict> = grid.iter().map(|row| row[i].verdict).collect();
                BulkAnnotation {
                    pair: p.id.clone(),
                    verdict: vote_verdicts(votes.iter().copied()),
                    votes,
                }
            })
            .collect())
    }
}
