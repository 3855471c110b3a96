//! Temperature-softmax selection via the Gumbel top-k trick.
//!
//! Adding independent standard Gumbel noise to `s_i / τ` and keeping the `k`
//! largest values samples `k` documents without replacement from the softmax
//! `p_i ∝ exp(s_i / τ)`. [`exact_inclusion_probabilities`] enumerates that
//! sampling process on small inputs and serves as the oracle.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::par::{self, Mode};
use crate::prompts::Domain;
use crate::text::finalize;

pub const GENERATOR_ID: &str = "chacha20";
pub const NOISE_ALGORITHM: &str =
    "u = ((next_u64 >> 11) + 0.5) / 2^53 from ChaCha20Rng::seed_from_u64(seed); g = -ln(-ln u), one draw per document in input order";

/// Largest input [`exact_inclusion_probabilities`] will enumerate.
pub const ORACLE_MAX_N: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub temperature: f64,
    pub k: usize,
    pub seed: u64,
}

pub fn default_temperature(domain: Domain) -> f64 {
    match domain {
        Domain::Code | Domain::Math => 1.0,
        Domain::Logic => 0.5,
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SelectError {
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("cannot select {k} of {n} documents")]
    TooMany { k: usize, n: usize },
    #[error("score {index} is not finite")]
    NonFinite { index: usize },
    #[error("exact enumeration supports at most {ORACLE_MAX_N} items, got {0}")]
    OracleTooLarge(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDocument {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub id: String,
    pub score: f64,
    pub perturbed: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionManifest {
    pub temperature: f64,
    pub k: usize,
    pub seed: u64,
    pub n: usize,
    pub generator: String,
    pub noise: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// One row per input document, in input order.
    pub rows: Vec<SelectionRow>,
    /// Selected ids, highest perturbed value first.
    pub selected: Vec<String>,
    pub manifest: SelectionManifest,
}

fn check(scores: &[f64], tau: f64) -> Result<(), SelectError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(SelectError::Temperature(tau));
    }
    match scores.iter().position(|s| !s.is_finite()) {
        Some(index) => Err(SelectError::NonFinite { index }),
        None => Ok(()),
    }
}

/// `p_i = exp(s_i/τ) / Σ_j exp(s_j/τ)`, stabilized by subtracting the max.
pub fn selection_probabilities(scores: &[f64], tau: f64) -> Result<Vec<f64>, SelectError> {
    check(scores, tau)?;
    let max = scores
        .iter()
        .map(|s| s / tau)
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s / tau - max).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / z).collect())
}

/// Uniform in the open interval (0, 1).
fn open_unit(rng: &mut ChaCha20Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// `n` standard Gumbel draws for `seed`.
pub fn gumbel_noise(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n).map(|_| -(-open_unit(&mut rng).ln()).ln()).collect()
}

/// Indices of the `k` largest `s_i/τ + g_i`, largest first, plus the
/// perturbed values. Ties go to the lower index.
pub fn gumbel_topk_indices(
    scores: &[f64],
    tau: f64,
    k: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<f64>), SelectError> {
    check(scores, tau)?;
    let n = scores.len();
    if k > n {
        return Err(SelectError::TooMany { k, n });
    }
    let perturbed: Vec<f64> = scores
        .iter()
        .zip(gumbel_noise(seed, n))
        .map(|(s, g)| s / tau + g)
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    let by = |a: &usize, b: &usize| perturbed[*b].total_cmp(&perturbed[*a]).then(a.cmp(b));
    if k < n {
        order.select_nth_unstable_by(k, by);
        order.truncate(k);
    }
    order.sort_by(by);
    Ok((order, perturbed))
}

pub fn gumbel_topk(
    docs: &[ScoredDocument],
    cfg: &SelectionConfig,
) -> Result<Selection, SelectError> {
    let scores: Vec<f64> = docs.iter().map(|d| d.score).collect();
    let (top, perturbed) = gumbel_topk_indices(&scores, cfg.temperature, cfg.k, cfg.seed)?;
    let mut chosen = vec![false; docs.len()];
    for &i in &top {
        chosen[i] = true;
    }
    let rows = docs
        .iter()
        .zip(perturbed)
        .zip(chosen)
        .map(|((d, p), selected)| SelectionRow {
            id: d.id.clone(),
            score: d.score,
            perturbed: p,
            selected,
        })
        .collect();
    Ok(Selection {
        rows,
        selected: top.iter().map(|&i| docs[i].id.clone()).collect(),
        manifest: SelectionManifest {
            temperature: cfg.temperature,
            k: cfg.k,
            seed: cfg.seed,
            n: docs.len(),
            generator: GENERATOR_ID.into(),
            noise: NOISE_ALGORITHM.into(),
        },
    })
}

/// Exact inclusion probabilities of sequential softmax sampling without
/// replacement, by enumerating every ordered `k`-sequence.
pub fn exact_inclusion_probabilities(
    scores: &[f64],
    tau: f64,
    k: usize,
) -> Result<Vec<f64>, SelectError> {
    let n = scores.len();
    if n > ORACLE_MAX_N {
        return Err(SelectError::OracleTooLarge(n));
    }
    if k > n {
        return Err(SelectError::TooMany { k, n });
    }
    let p = selection_probabilities(scores, tau)?;
    let mut incl = vec![0.0; n];
    let mut taken = vec![false; n];
    let mut path = Vec::with_capacity(k);
    fn walk(
        p: &[f64],
        k: usize,
        prob: f64,
        rest: f64,
        taken: &mut [bool],
        path: &mut Vec<usize>,
        incl: &mut [f64],
    ) {
        if path.len() == k {
            for &i in path.iter() {
                incl[i] += prob;
            }
            return;
        }
        for i in 0..p.len() {
            if taken[i] {
                continue;
            }
            taken[i] = true;
            path.push(i);
            walk(p, k, prob * p[i] / rest, rest - p[i], taken, path, incl);
            path.pop();
            taken[i] = false;
        }
    }
    walk(&p, k, 1.0, 1.0, &mut taken, &mut path, &mut incl);
    Ok(incl)
}

/// Seed for the `i`-th of many independent draws derived from `seed`.
pub fn draw_seed(seed: u64, i: u64) -> u64 {
    finalize(seed ^ finalize(i.wrapping_add(0x632b_e59b_d9b4_e019)))
}

/// Inclusion counts over `draws` independent Gumbel top-k draws.
pub fn inclusion_counts(
    scores: &[f64],
    tau: f64,
    k: usize,
    draws: u64,
    seed: u64,
    mode: Mode,
) -> Result<Vec<u64>, SelectError> {
    check(scores, tau)?;
    if k > scores.len() {
        return Err(SelectError::TooMany { k, n: scores.len() });
    }
    const CHUNK: u64 = 4096;
    let chunks = draws.div_ceil(CHUNK) as usize;
    let partial = par::map_range(mode, chunks, |c| {
        let mut counts = vec![0u64; scores.len()];
        let start = c as u64 * CHUNK;
        for i in start..(start + CHUNK).min(draws) {
            let (top, _) =
                gumbel_topk_indices(scores, tau, k, draw_seed(seed, i)).expect("validated");
            for j in top {
                counts[j] += 1;
            }
        }
        counts
    });
    let mut total = vec![0u64; scores.len()];
    for counts in partial {
        for (t, c) in total.iter_mut().zip(counts) {
            *t += c;
        }
    }
    Ok(total)
}
