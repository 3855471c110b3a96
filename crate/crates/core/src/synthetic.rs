//! Planted worlds with known ground truth, shared by tests, benches and the
//! demo pipeline.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Documents that are bags of `vocab` tokens with independent counts in
/// `0..=4`, scored by a hidden linear function of unigram log-counts whose
/// weights are `±U(0.8, 1.2)`.
#[derive(Debug, Clone)]
pub struct PlantedWorld {
    pub texts: Vec<String>,
    pub quality: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn token(v: usize) -> String {
    format!("w{v:03}")
}

impl PlantedWorld {
    pub fn generate(n_docs: usize, vocab: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let weights: Vec<f64> = (0..vocab)
            .map(|_| {
                let m = 0.8 + 0.4 * rng.random::<f64>();
                if rng.random::<bool>() {
                    m
                } else {
                    -m
                }
            })
            .collect();
        let mut texts = Vec::with_capacity(n_docs);
        let mut quality = Vec::with_capacity(n_docs);
        for _ in 0..n_docs {
            let counts: Vec<u32> = (0..vocab).map(|_| rng.random_range(0..5)).collect();
            let mut words: Vec<String> = Vec::new();
            for (v, &c) in counts.iter().enumerate() {
                words.extend((0..c).map(|_| token(v)));
            }
            words.shuffle(&mut rng);
            quality.push(
                counts
                    .iter()
                    .zip(&weights)
                    .map(|(&c, w)| w * f64::from(c).ln_1p())
                    .sum(),
            );
            texts.push(words.join(" "));
        }
        Self {
            texts,
            quality,
            weights,
        }
    }

    /// `n` random ordered pairs `(high, low)` of distinct documents; each
    /// label is flipped with probability `noise`.
    pub fn pairs(&self, n: usize, noise: f64, seed: u64) -> Vec<(usize, usize)> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let n_docs = self.texts.len();
        (0..n)
            .map(|_| {
                let a = rng.random_range(0..n_docs);
                let mut b = rng.random_range(0..n_docs - 1);
                if b >= a {
                    b += 1;
                }
                let (hi, lo) = if self.quality[a] >= self.quality[b] {
                    (a, b)
                } else {
                    (b, a)
                };
                if rng.random::<f64>() < noise {
                    (lo, hi)
                } else {
                    (hi, lo)
                }
            })
            .collect()
    }
}
