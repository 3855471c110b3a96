//! Bradley-Terry document scorer over hashed n-gram features.
//!
//! A linear model `s(d) = w·x(d) + b` is trained on ordered pairs with the
//! mean BT loss, AdamW, a linear warmup followed by cosine decay, and periodic
//! validation checkpoints; the checkpoint with the best validation pairwise
//! accuracy is kept. Scores are z-normalized.

mod features;
mod loss;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

pub use features::{tokenize, FeatureVector, Featurizer, DEFAULT_DIMENSION};
pub use loss::{
    bt_loss, mean_loss, mean_loss_and_grad, pairwise_accuracy, sigmoid, softplus, TrainingPair,
};

use crate::par::{self, Mode};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub checkpoint_interval: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            learning_rate: 2e-5,
            weight_decay: 0.01,
            warmup_fraction: 0.2,
            batch_size: 128,
            validation_fraction: 0.05,
            checkpoint_interval: 50,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ScorerError> {
        let bad = |m: &str| Err(ScorerError::Config(m.into()));
        if self.epochs == 0 || self.batch_size == 0 || self.checkpoint_interval == 0 {
            return bad("epochs, batch_size and checkpoint_interval must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.weight_decay >= 0.0) {
            return bad("learning_rate must be positive and weight_decay non-negative");
        }
        Ok(())
    }
}

/// Learning rate at 1-based `step` of `total`: linear warmup, then cosine decay to 0.
pub fn lr_at(cfg: &TrainConfig, step: usize, total: usize) -> f64 {
    let warmup = (cfg.warmup_fraction * total as f64).ceil() as usize;
    if step <= warmup {
        return cfg.learning_rate * step as f64 / warmup as f64;
    }
    let span = (total - warmup).max(1) as f64;
    let progress = (step - warmup) as f64 / span;
    cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, thiserror::Error)]
pub enum ScorerError {
    #[error("invalid scorer config: {0}")]
    Config(String),
    #[error("need at least 2 ordered pairs, got {0}")]
    TooFewPairs(usize),
    #[error("training diverged at step {step}: loss {loss}, max |w| {max_weight}")]
    Diverged {
        step: usize,
        loss: f64,
        max_weight: f64,
    },
    #[error("model dimension {model} does not match featurizer dimension {featurizer}")]
    Dimension { model: usize, featurizer: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub train_loss: f64,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub config: TrainConfig,
    pub train_pairs: usize,
    pub validation_pairs: usize,
    pub total_steps: usize,
    pub best_step: usize,
    pub best_validation_accuracy: f64,
    pub checkpoints: Vec<Checkpoint>,
}

/// Trained linear scorer. Weights are stored sparsely as `(index, value)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerModel {
    pub format_version: u32,
    pub featurizer: Featurizer,
    pub weights: Vec<(u32, f64)>,
    pub bias: f64,
    pub norm_mean: f64,
    pub norm_std: f64,
    pub training_meta: TrainingMeta,
}

fn sparse(dense: &[f64]) -> Vec<(u32, f64)> {
    dense
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(i, &w)| (i as u32, w))
        .collect()
}

impl ScorerModel {
    pub fn dense_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.featurizer.dimension];
        for &(i, v) in &self.weights {
            w[i as usize] = v;
        }
        w
    }

    pub fn validate(&self) -> Result<(), ScorerError> {
        let finite = self.weights.iter().all(|(_, w)| w.is_finite())
            && self.bias.is_finite()
            && self.norm_mean.is_finite();
        if !finite || !(self.norm_std > 0.0 && self.norm_std.is_finite()) {
            return Err(ScorerError::Config(
                "model parameters must be finite with norm_std > 0".into(),
            ));
        }
        if let Some(&(i, _)) = self
            .weights
            .iter()
            .find(|(i, _)| *i as usize >= self.featurizer.dimension)
        {
            return Err(ScorerError::Dimension {
                model: i as usize + 1,
                featurizer: self.featurizer.dimension,
            });
        }
        Ok(())
    }

    /// Scorer bound to dense weights for fast repeated scoring.
    pub fn scorer(&self) -> Scorer<'_> {
        Scorer {
            model: self,
            weights: self.dense_weights(),
        }
    }
}

pub struct Scorer<'a> {
    model: &'a ScorerModel,
    weights: Vec<f64>,
}

impl Scorer<'_> {
    pub fn raw(&self, text: &str) -> f64 {
        self.model.featurizer.featurize(text).dot(&self.weights) + self.model.bias
    }

    /// `(raw - norm_mean) / norm_std`.
    pub fn score(&self, text: &str) -> f64 {
        normalize_one(self.raw(text), self.model.norm_mean, self.model.norm_std)
    }

    pub fn raw_many(&self, texts: &[&str], mode: Mode) -> Vec<f64> {
        par::map(mode, texts, |t| self.raw(t))
    }
}

pub fn normalize_one(raw: f64, mean: f64, std: f64) -> f64 {
    (raw - mean) / std
}

/// Population mean and standard deviation; a zero or undefined spread maps to 1.
pub fn fit_normalization(raw: &[f64]) -> (f64, f64) {
    if raw.is_empty() {
        return (0.0, 1.0);
    }
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (
        mean,
        if std > 0.0 && std.is_finite() {
            std
        } else {
            1.0
        },
    )
}

pub fn normalize(raw: &[f64]) -> Vec<f64> {
    let (m, s) = fit_normalization(raw);
    raw.iter().map(|&r| normalize_one(r, m, s)).collect()
}

/// Kendall's tau-b between two score lists of equal length.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (mut conc, mut disc, mut tie_a, mut tie_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let da = (a[i] - a[j])
                .partial_cmp(&0.0)
                .unwrap_or(std::cmp::Ordering::Equal);
            let db = (b[i] - b[j])
                .partial_cmp(&0.0)
                .unwrap_or(std::cmp::Ordering::Equal);
            use std::cmp::Ordering::Equal;
            match (da, db) {
                (Equal, Equal) => {}
                (Equal, _) => tie_a += 1,
                (_, Equal) => tie_b += 1,
                (x, y) if x == y => conc += 1,
                _ => disc += 1,
            }
        }
    }
    let n0 = (conc + disc + tie_a) as f64;
    let n1 = (conc + disc + tie_b) as f64;
    if n0 == 0.0 || n1 == 0.0 {
        return 0.0;
    }
    (conc - disc) as f64 / (n0 * n1).sqrt()
}

/// Random train/validation split; at least one pair lands on each side.
pub fn split_validation(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha20Rng::seed_from_u64(
        seed ^ 0x7661_6c69_6461_7465,
    ));
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

pub struct TrainOutput {
    pub model: ScorerModel,
    /// Weights after the final step, before checkpoint selection.
    pub last_weights: Vec<f64>,
}

/// Train on ordered pairs. `norm_texts_raw` receives the trained dense
/// weights and must return raw scores of the training corpus, from which the
/// normalization statistics are fitted.
pub fn train(
    featurizer: Featurizer,
    pairs: &[TrainingPair],
    cfg: &TrainConfig,
    mut norm_raw: impl FnMut(&[f64]) -> Vec<f64>,
) -> Result<TrainOutput, ScorerError> {
    cfg.validate()?;
    featurizer.validate().map_err(ScorerError::Config)?;
    if pairs.len() < 2 {
        return Err(ScorerError::TooFewPairs(pairs.len()));
    }
    let dim = featurizer.dimension;
    let (train_idx, val_idx) = split_validation(pairs.len(), cfg.validation_fraction, cfg.seed);
    let val: Vec<&TrainingPair> = val_idx.iter().map(|&i| &pairs[i]).collect();

    let steps_per_epoch = train_idx.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    let mut w = vec![0.0; dim];
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut best: Option<(Checkpoint, Vec<f64>)> = None;
    let mut checkpoints = Vec::new();
    let mut order = train_idx.clone();
    let mut step = 0;
    let mut window_loss = 0.0;
    let mut window_steps = 0usize;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let batch: Vec<&TrainingPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let loss = mean_loss_and_grad(&w, &batch, &mut grad);
            if !loss.is_finite() {
                let max_weight = w.iter().fold(0.0f64, |a, x| a.max(x.abs()));
                return Err(ScorerError::Diverged {
                    step,
                    loss,
                    max_weight,
                });
            }
            window_loss += loss;
            window_steps += 1;

            let lr = lr_at(cfg, step, total);
            let bc1 = 1.0 - cfg.beta1.powi(step as i32);
            let bc2 = 1.0 - cfg.beta2.powi(step as i32);
            for k in 0..dim {
                let g = grad[k];
                if g == 0.0 && m[k] == 0.0 && w[k] == 0.0 {
                    continue;
                }
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
                let update = (m[k] / bc1) / ((v[k] / bc2).sqrt() + cfg.epsilon);
                w[k] -= lr * (update + cfg.weight_decay * w[k]);
            }

            if step % cfg.checkpoint_interval == 0 || step == total {
                let cp = Checkpoint {
                    step,
                    train_loss: window_loss / window_steps as f64,
                    validation_accuracy: pairwise_accuracy(&w, &val),
                };
                log::debug!("checkpoint {cp:?}");
                window_loss = 0.0;
                window_steps = 0;
                if best
                    .as_ref()
                    .is_none_or(|(b, _)| cp.validation_accuracy > b.validation_accuracy)
                {
                    best = Some((cp.clone(), w.clone()));
                }
                checkpoints.push(cp);
            }
        }
    }

    let (best_cp, best_w) = best.expect("at least one checkpoint");
    let (norm_mean, norm_std) = fit_normalization(&norm_raw(&best_w));
    let model = ScorerModel {
        format_version: MODEL_FORMAT_VERSION,
        featurizer,
        weights: sparse(&best_w),
        bias: 0.0,
        norm_mean,
        norm_std,
        training_meta: TrainingMeta {
            config: cfg.clone(),
            train_pairs: train_idx.len(),
            validation_pairs: val.len(),
            total_steps: total,
            best_step: best_cp.step,
            best_validation_accuracy: best_cp.validation_accuracy,
            checkpoints,
        },
    };
    Ok(TrainOutput {
        model,
        last_weights: w,
    })
}

/// Train on texts directly: featurizes pairs and normalizes over `corpus`.
pub fn train_on_texts(
    featurizer: Featurizer,
    ordered: &[(&str, &str)],
    corpus: &[&str],
    cfg: &TrainConfig,
    mode: Mode,
) -> Result<TrainOutput, ScorerError> {
    featurizer.validate().map_err(ScorerError::Config)?;
    let pairs = par::map(mode, ordered, |(hi, lo)| TrainingPair {
        high: featurizer.featurize(hi),
        low: featurizer.featurize(lo),
    });
    let feats = par::map(mode, corpus, |t| featurizer.featurize(t));
    train(featurizer, &pairs, cfg, |w| {
        feats.iter().map(|f| f.dot(w)).collect()
    })
}
