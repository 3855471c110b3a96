//! Bradley-Terry pairwise loss.

use super::features::FeatureVector;

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln σ(margin)` where `margin = s_high - s_low`.
pub fn bt_loss(margin: f64) -> f64 {
    softplus(-margin)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub high: FeatureVector,
    pub low: FeatureVector,
}

impl TrainingPair {
    pub fn margin(&self, weights: &[f64]) -> f64 {
        self.high.dot(weights) - self.low.dot(weights)
    }
}

/// Mean loss over `pairs` and its gradient with respect to `weights`,
/// accumulated into `grad` (which is overwritten). The bias cancels in every
/// margin, so it has no gradient.
pub fn mean_loss_and_grad(weights: &[f64], pairs: &[&TrainingPair], grad: &mut [f64]) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    if pairs.is_empty() {
        return 0.0;
    }
    let inv = 1.0 / pairs.len() as f64;
    let mut loss = 0.0;
    for p in pairs {
        let m = p.margin(weights);
        loss += bt_loss(m);
        // d/dm softplus(-m) = -σ(-m)
        let coef = -sigmoid(-m) * inv;
        for (&i, &v) in p.high.indices.iter().zip(&p.high.values) {
            grad[i as usize] += coef * v;
        }
        for (&i, &v) in p.low.indices.iter().zip(&p.low.values) {
            grad[i as usize] -= coef * v;
        }
    }
    loss * inv
}

pub fn mean_loss(weights: &[f64], pairs: &[&TrainingPair]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs
        .iter()
        .map(|p| bt_loss(p.margin(weights)))
        .sum::<f64>()
        / pairs.len() as f64
}

/// Fraction of pairs whose high side scores strictly higher; ties count as
/// incorrect.
pub fn pairwise_accuracy(weights: &[f64], pairs: &[&TrainingPair]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().filter(|p| p.margin(weights) > 0.0).count() as f64 / pairs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert!((bt_loss(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bt_loss(-2.0) - 2.126_928_011_042_972_5).abs() < 1e-12);
        assert!(bt_loss(1e6) < 1e-300);
        assert!(bt_loss(-1e6).is_finite());
    }

    #[test]
    fn antisymmetry() {
        for x in [-30.0, -2.5, -1e-3, 0.0, 0.7, 12.0] {
            assert!((bt_loss(x) - bt_loss(-x) + x).abs() < 1e-12);
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }
}
