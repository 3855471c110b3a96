//! Criteria knowledge base: name-based deduplication, domain filtering and
//! accuracy-ranked retrieval of initial criteria.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::llm_gateway::{AgentRole, ChatRequest, Gateway, GatewayError};
use crate::par::{self, Mode};
use crate::prompts::{self, Domain};
use crate::text::{jaccard, name_tokens};

pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.3;
pub const DEFAULT_RETRIEVAL_THRESHOLD: f64 = 0.5;

const BUNDLED_SEEDS: &str = include_str!("../data/seed_criteria.jsonl");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionSeed {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub source: String,
}

impl CriterionSeed {
    pub fn new(name: &str, description: &str, source: &str) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            source: source.into(),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum KbError {
    #[error("dedup threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("criterion #{index} ({name:?}): {reason}")]
    Rejected {
        index: usize,
        name: String,
        reason: String,
    },
}

/// Deduplicated criteria, in ingestion order.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub criteria: Vec<CriterionSeed>,
    pub dedup_threshold: f64,
    /// (dropped seed, name of the kept seed it collided with)
    pub dropped: Vec<(CriterionSeed, String)>,
}

/// True when `name` collides with any of `existing` under token-set Jaccard.
pub fn collides<'a>(
    name: &str,
    existing: impl IntoIterator<Item = &'a str>,
    threshold: f64,
) -> Option<&'a str> {
    let tokens = name_tokens(name);
    existing
        .into_iter()
        .find(|e| jaccard(&tokens, &name_tokens(e)) > threshold)
}

/// Drop seeds whose normalized name is too similar to an earlier kept seed.
pub fn ingest_criteria(
    seeds: Vec<CriterionSeed>,
    threshold: f64,
) -> Result<KnowledgeBase, KbError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(KbError::Threshold(threshold));
    }
    let mut kept: Vec<(BTreeSet<String>, CriterionSeed)> = Vec::new();
    let mut dropped = Vec::new();
    for (index, seed) in seeds.into_iter().enumerate() {
        let tokens = name_tokens(&seed.name);
        if tokens.is_empty() {
            return Err(KbError::Rejected {
                index,
                name: seed.name,
                reason: "name is empty after normalization".into(),
            });
        }
        if seed.description.trim().is_empty() {
            return Err(KbError::Rejected {
                index,
                name: seed.name,
                reason: "description is empty".into(),
            });
        }
        match kept.iter().find(|(t, _)| jaccard(&tokens, t) > threshold) {
            Some((_, first)) => {
                log::debug!(
                    "dropping criterion {:?}: too close to {:?}",
                    seed.name,
                    first.name
                );
                let first = first.name.clone();
                dropped.push((seed, first));
            }
            None => kept.push((tokens, seed)),
        }
    }
    Ok(KnowledgeBase {
        criteria: kept.into_iter().map(|(_, s)| s).collect(),
        dedup_threshold: threshold,
        dropped,
    })
}

/// The starter criteria that ship with the crate.
pub fn bundled_seeds() -> Vec<CriterionSeed> {
    crate::jsonl::parse_reader(BUNDLED_SEEDS.as_bytes()).expect("bundled seeds parse")
}

/// `Some(true)` for yes, `Some(false)` for no, ignoring case, leading
/// punctuation and markdown.
pub fn parse_yes_no(reply: &str) -> Option<bool> {
    let t = reply
        .trim_start_matches(|c: char| {
            c.is_whitespace() || matches!(c, '*' | '`' | '"' | '\'' | '_')
        })
        .to_ascii_lowercase();
    if t.starts_with("yes") {
        Some(true)
    } else if t.starts_with("no") {
        Some(false)
    } else {
        None
    }
}

/// Ask the relevance model about each criterion and keep the "yes" ones.
///
/// Replies that stay unparseable after `attempts` tries exclude the criterion.
/// The output keeps ingestion order regardless of completion order.
pub fn filter_domain(
    kb: &KnowledgeBase,
    domain: Domain,
    gateway: &Arc<Gateway>,
    attempts: u32,
    mode: Mode,
) -> Result<Vec<CriterionSeed>, GatewayError> {
    let width = gateway.max_in_flight(AgentRole::Relevance);
    let answers = par::map_bounded(mode, width, &kb.criteria, |c| {
        let req = ChatRequest::user(
            AgentRole::Relevance,
            prompts::relevance(domain, &c.name, &c.description),
        );
        for _ in 0..attempts.max(1) {
            let reply = gateway.complete(&req)?;
            if let Some(yes) = parse_yes_no(&reply.text) {
                return Ok(yes);
            }
        }
        log::warn!("no yes/no answer for criterion {:?}; excluding it", c.name);
        Ok(false)
    });
    let mut out = Vec::new();
    for (c, a) in kb.criteria.iter().zip(answers) {
        if a? {
            out.push(c.clone());
        }
    }
    Ok(out)
}

/// Indices of up to `n` criteria by descending accuracy, keeping only those
/// strictly above `threshold`. Undefined accuracy counts as 0; ties keep input
/// order.
pub fn rank_by_accuracy(accuracies: &[Option<f64>], n: usize, threshold: f64) -> Vec<usize> {
    let acc = |i: usize| accuracies[i].unwrap_or(0.0);
    let mut order: Vec<usize> = (0..accuracies.len()).collect();
    order.sort_by(|&a, &b| acc(b).total_cmp(&acc(a)));
    let mut out = Vec::new();
    for i in order {
        if out.len() >= n {
            break;
        }
        if acc(i) > threshold {
            out.push(i);
        }
    }
    out
}

/// Retrieve up to `n` criteria whose accuracy (from `evaluate`) exceeds
/// `threshold`, best first.
pub fn retrieve_top<F>(
    c_domain: &[CriterionSeed],
    n: usize,
    threshold: f64,
    mut evaluate: F,
) -> Vec<(CriterionSeed, Option<f64>)>
where
    F: FnMut(&CriterionSeed) -> Option<f64>,
{
    let accs: Vec<Option<f64>> = c_domain.iter().map(&mut evaluate).collect();
    rank_by_accuracy(&accs, n, threshold)
        .into_iter()
        .map(|i| (c_domain[i].clone(), accs[i]))
        .collect()
}
