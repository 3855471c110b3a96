//! Hashed n-gram features.
//!
//! Tokens are lowercased runs of alphanumerics (plus `_`) and single
//! punctuation characters. Unigrams through `ngram`-grams are hashed into the
//! first `dimension - 1` slots; counts are stored as `ln(1 + count)`. The last
//! slot holds `ln(1 + chars)`.

use serde::{Deserialize, Serialize};

use crate::text::{fnv1a, hash_parts};

pub const DEFAULT_DIMENSION: usize = 1 << 18;

/// Divides the log length so it sits on the same scale as log counts.
const LENGTH_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Featurizer {
    pub dimension: usize,
    pub seed: u64,
    pub ngram: usize,
    /// Text beyond this many characters is ignored.
    #[serde(default)]
    pub max_chars: Option<usize>,
}

impl Default for Featurizer {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
            seed: 0,
            ngram: 1,
            max_chars: None,
        }
    }
}

/// Sparse feature vector: sorted unique indices with finite values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| dense[i as usize] * v)
            .sum()
    }

    pub fn to_dense(&self, dimension: usize) -> Vec<f64> {
        let mut out = vec![0.0; dimension];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] = v;
        }
        out
    }

    /// Build from a dense vector, keeping non-zero entries.
    pub fn from_dense(dense: &[f64]) -> Self {
        let mut fv = Self::default();
        for (i, &v) in dense.iter().enumerate() {
            if v != 0.0 {
                fv.indices.push(i as u32);
                fv.values.push(v);
            }
        }
        fv
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '_' {
            word.extend(ch.to_lowercase());
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

impl Featurizer {
    pub fn validate(&self) -> Result<(), String> {
        if self.dimension < 2 || self.dimension > u32::MAX as usize {
            return Err(format!("feature dimension {} out of range", self.dimension));
        }
        if self.ngram == 0 {
            return Err("ngram must be at least 1".into());
        }
        Ok(())
    }

    pub fn length_index(&self) -> usize {
        self.dimension - 1
    }

    pub fn featurize(&self, text: &str) -> FeatureVector {
        let text = match self.max_chars {
            Some(cap) => match text.char_indices().nth(cap) {
                Some((cut, _)) => &text[..cut],
                None => text,
            },
            None => text,
        };
        let buckets = (self.dimension - 1) as u64;
        let tokens = tokenize(text);
        let mut counts: std::collections::BTreeMap<u32, u32> = Default::default();
        for n in 1..=self.ngram {
            let n_seed = fnv1a(self.seed, &n.to_le_bytes());
            for w in tokens.windows(n) {
                let parts: Vec<&str> = w.iter().map(String::as_str).collect();
                let slot = (hash_parts(n_seed, &parts) % buckets) as u32;
                *counts.entry(slot).or_default() += 1;
            }
        }
        let mut fv = FeatureVector::default();
        for (slot, c) in counts {
            fv.indices.push(slot);
            fv.values.push(f64::from(c).ln_1p());
        }
        let chars = text.chars().count();
        if chars > 0 {
            fv.indices.push(self.length_index() as u32);
            fv.values.push((chars as f64).ln_1p() / LENGTH_SCALE);
        }
        fv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_zero() {
        let f = Featurizer::default();
        assert_eq!(f.featurize(""), FeatureVector::default());
    }

    #[test]
    fn deterministic_and_sorted() {
        let f = Featurizer {
            dimension: 1024,
            ..Default::default()
        };
        let a = f.featurize("def f(x):\n    return x + 1");
        assert_eq!(a, f.featurize("def f(x):\n    return x + 1"));
        assert!(a.indices.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*a.indices.last().unwrap(), 1023);
        assert!(a.values.iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn tokens_split_punctuation() {
        assert_eq!(
            tokenize("Foo(bar_1)+2"),
            ["foo", "(", "bar_1", ")", "+", "2"]
        );
    }

    #[test]
    fn max_chars_truncates() {
        let f = Featurizer {
            dimension: 64,
            max_chars: Some(3),
            ..Default::default()
        };
        assert_eq!(f.featurize("abcdef"), f.featurize("abc"));
    }
}
