//! Human annotation sessions: blinded pair ids, a stable per-annotator order,
//! randomized display sides, and append-only label persistence.
//!
//! Verdicts arrive in display terms (`A` is whatever was shown on the left)
//! and are stored in canonical document order.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Label, Pair, Preference};
use crate::jsonl::{self, Appender, JsonlError};
use crate::prompts::{self, Domain};
use crate::text::hash_parts;

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("unknown pair {0:?}")]
    UnknownPair(String),
    #[error("pair already labeled {existing} by this annotator")]
    Conflict { existing: Preference },
    #[error("annotator id must be non-empty")]
    NoAnnotator,
    #[error("pair references unknown document {0:?}")]
    UnknownDocument(String),
    #[error(transparent)]
    Io(#[from] JsonlError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub labeled: usize,
    pub total: usize,
}

impl Progress {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.labeled as f64 / self.total as f64
        }
    }
}

/// A pair as shown to one annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairView {
    /// Blinded id, unique per (pair, annotator).
    pub pair: String,
    pub a: String,
    pub b: String,
    pub domain: Domain,
    pub progress: Progress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmitOutcome {
    Recorded,
    Duplicate,
}

struct Inner {
    labels: HashMap<(String, String), Preference>,
    /// Blinded token -> pair index, per annotator, built on first contact.
    tokens: HashMap<String, HashMap<String, usize>>,
    orders: HashMap<String, Vec<usize>>,
    log: Appender,
}

pub struct AnnotationSession {
    corpus: Corpus,
    pairs: Vec<Pair>,
    domain: Domain,
    seed: u64,
    path: PathBuf,
    inner: Mutex<Inner>,
}

impl AnnotationSession {
    /// Open a session over `pairs`, replaying labels already in `labels_path`.
    pub fn open(
        corpus: Corpus,
        pairs: Vec<Pair>,
        domain: Domain,
        seed: u64,
        labels_path: &Path,
    ) -> Result<Self, AnnotationError> {
        for p in &pairs {
            for d in [&p.doc_a, &p.doc_b] {
                if corpus.get(d).is_none() {
                    return Err(AnnotationError::UnknownDocument(d.clone()));
                }
            }
        }
        let known: HashSet<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
        let mut labels = HashMap::new();
        for line in jsonl::recover(labels_path)? {
            let l: Label = serde_json::from_str(&line).map_err(|e| JsonlError::Parse {
                line: 0,
                message: e.to_string(),
            })?;
            if known.contains(l.pair.as_str()) {
                labels.insert((l.pair, l.annotator), l.verdict);
            }
        }
        let log = Appender::open(labels_path)?;
        Ok(Self {
            corpus,
            pairs,
            domain,
            seed,
            path: labels_path.to_path_buf(),
            inner: Mutex::new(Inner {
                labels,
                tokens: HashMap::new(),
                orders: HashMap::new(),
                log,
            }),
        })
    }

    pub fn labels_path(&self) -> &Path {
        &self.path
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn guidelines(&self) -> &'static str {
        prompts::guidelines(self.domain)
    }

    fn token(&self, annotator: &str, pair: &Pair) -> String {
        format!(
            "{:016x}",
            hash_parts(self.seed, &["token", annotator, &pair.id])
        )
    }

    /// Whether `annotator` sees this pair's documents swapped.
    fn swapped(&self, annotator: &str, pair: &Pair) -> bool {
        hash_parts(self.seed, &["side", annotator, &pair.id]) & 1 == 1
    }

    fn ensure_annotator(&self, inner: &mut Inner, annotator: &str) {
        if inner.orders.contains_key(annotator) {
            return;
        }
        let mut order: Vec<usize> = (0..self.pairs.len()).collect();
        order.shuffle(&mut ChaCha20Rng::seed_from_u64(hash_parts(
            self.seed,
            &["order", annotator],
        )));
        let tokens = self
            .pairs
            .iter()
            .enumerate()
            .map(|(i, p)| (self.token(annotator, p), i))
            .collect();
        inner.tokens.insert(annotator.to_string(), tokens);
        inner.orders.insert(annotator.to_string(), order);
    }

    fn progress_locked(&self, inner: &Inner, annotator: &str) -> Progress {
        let labeled = self
            .pairs
            .iter()
            .filter(|p| {
                inner
                    .labels
                    .contains_key(&(p.id.clone(), annotator.to_string()))
            })
            .count();
        Progress {
            labeled,
            total: self.pairs.len(),
        }
    }

    pub fn progress(&self, annotator: &str) -> Progress {
        let inner = self.inner.lock().expect("session lock");
        self.progress_locked(&inner, annotator)
    }

    /// The next unlabeled pair for `annotator`, or `None` when exhausted.
    pub fn next_pair(&self, annotator: &str) -> Result<Option<PairView>, AnnotationError> {
        if annotator.is_empty() {
            return Err(AnnotationError::NoAnnotator);
        }
        let mut inner = self.inner.lock().expect("session lock");
        self.ensure_annotator(&mut inner, annotator);
        let next = inner.orders[annotator]
            .iter()
            .map(|&i| &self.pairs[i])
            .find(|p| {
                !inner
                    .labels
                    .contains_key(&(p.id.clone(), annotator.to_string()))
            });
        let Some(pair) = next else {
            return Ok(None);
        };
        let text = |id: &str| {
            self.corpus
                .get(id)
                .map(|d| d.text.clone())
                .expect("checked at open")
        };
        let (left, right) = if self.swapped(annotator, pair) {
            (&pair.doc_b, &pair.doc_a)
        } else {
            (&pair.doc_a, &pair.doc_b)
        };
        Ok(Some(PairView {
            pair: self.token(annotator, pair),
            a: text(left),
            b: text(right),
            domain: self.domain,
            progress: self.progress_locked(&inner, annotator),
        }))
    }

    /// Record a verdict given in display terms. Resubmitting the same verdict
    /// is a no-op; a different one is a conflict.
    pub fn submit(
        &self,
        annotator: &str,
        token: &str,
        shown: Preference,
    ) -> Result<SubmitOutcome, AnnotationError> {
        if annotator.is_empty() {
            return Err(AnnotationError::NoAnnotator);
        }
        let mut inner = self.inner.lock().expect("session lock");
        self.ensure_annotator(&mut inner, annotator);
        let idx = *inner.tokens[annotator]
            .get(token)
            .ok_or_else(|| AnnotationError::UnknownPair(token.to_string()))?;
        let pair = &self.pairs[idx];
        let verdict = if self.swapped(annotator, pair) {
            shown.swapped()
        } else {
            shown
        };
        let key = (pair.id.clone(), annotator.to_string());
        match inner.labels.get(&key) {
            Some(&existing) if existing == verdict => return Ok(SubmitOutcome::Duplicate),
            Some(&existing) => {
                return Err(AnnotationError::Conflict {
                    existing: if self.swapped(annotator, pair) {
                        existing.swapped()
                    } else {
                        existing
                    },
                })
            }
            None => {}
        }
        inner.log.append(&[Label {
            pair: pair.id.clone(),
            annotator: annotator.to_string(),
            verdict,
        }])?;
        inner.labels.insert(key, verdict);
        Ok(SubmitOutcome::Recorded)
    }

    /// All stored labels in canonical document order.
    pub fn labels(&self) -> Vec<Label> {
        let inner = self.inner.lock().expect("session lock");
        let mut out: Vec<Label> = inner
            .labels
            .iter()
            .map(|((pair, annotator), v)| Label {
                pair: pair.clone(),
                annotator: annotator.clone(),
                verdict: *v,
            })
            .collect();
        out.sort_by(|a, b| (&a.pair, &a.annotator).cmp(&(&b.pair, &b.annotator)));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Split};

    fn session(dir: &Path, n: usize) -> AnnotationSession {
        let docs = (0..2 * n)
            .map(|i| Document::new(format!("d{i}"), format!("text {i}"), "code"))
            .collect();
        let corpus = Corpus::from_documents(docs).unwrap();
        let pairs = (0..n)
            .map(|i| Pair {
                id: format!("h{i:06}"),
                doc_a: format!("d{}", 2 * i),
                doc_b: format!("d{}", 2 * i + 1),
                split: Split::Human,
                gold: None,
            })
            .collect();
        AnnotationSession::open(corpus, pairs, Domain::Code, 9, &dir.join("labels.jsonl")).unwrap()
    }

    #[test]
    fn thirty_pairs_to_exhaustion() {
        let dir = tempfile::tempdir().unwrap();
        let s = session(dir.path(), 30);
        for _ in 0..30 {
            let v = s.next_pair("ann").unwrap().unwrap();
            assert_eq!(
                s.submit("ann", &v.pair, Preference::A).unwrap(),
                SubmitOutcome::Recorded
            );
        }
        assert_eq!(
            s.progress("ann"),
            Progress {
                labeled: 30,
                total: 30
            }
        );
        assert!(s.next_pair("ann").unwrap().is_none());
        assert_eq!(s.progress("other").labeled, 0);
    }

    #[test]
    fn verdicts_are_stored_in_document_order() {
        let dir = tempfile::tempdir().unwrap();
        let s = session(dir.path(), 40);
        // Always pick the left text; doc_a holds the even-numbered text.
        while let Some(v) = s.next_pair("ann").unwrap() {
            s.submit("ann", &v.pair, Preference::A).unwrap();
        }
        let mut swaps = 0;
        for (p, l) in s.pairs.iter().zip(s.labels()) {
            assert_eq!(p.id, l.pair);
            let swapped = s.swapped("ann", p);
            swaps += usize::from(swapped);
            assert_eq!(
                l.verdict,
                if swapped {
                    Preference::B
                } else {
                    Preference::A
                }
            );
        }
        assert!(swaps > 5 && swaps < 35, "{swaps}");
    }

    #[test]
    fn idempotent_and_conflicting_submissions() {
        let dir = tempfile::tempdir().unwrap();
        let s = session(dir.path(), 3);
        let v = s.next_pair("x").unwrap().unwrap();
        assert_eq!(
            s.submit("x", &v.pair, Preference::Tie).unwrap(),
            SubmitOutcome::Recorded
        );
        assert_eq!(
            s.submit("x", &v.pair, Preference::Tie).unwrap(),
            SubmitOutcome::Duplicate
        );
        assert!(matches!(
            s.submit("x", &v.pair, Preference::A),
            Err(AnnotationError::Conflict {
                existing: Preference::Tie
            })
        ));
        assert!(matches!(
            s.submit("x", "nope", Preference::A),
            Err(AnnotationError::UnknownPair(_))
        ));
        // Tokens are per annotator.
        assert!(matches!(
            s.submit("y", &v.pair, Preference::A),
            Err(AnnotationError::UnknownPair(_))
        ));
        assert_eq!(
            std::fs::read_to_string(s.labels_path())
                .unwrap()
                .lines()
                .count(),
            1
        );
    }

    #[test]
    fn reopening_resumes_without_reshowing() {
        let dir = tempfile::tempdir().unwrap();
        let first: Vec<String> = {
            let s = session(dir.path(), 5);
            (0..2)
                .map(|_| {
                    let v = s.next_pair("ann").unwrap().unwrap();
                    s.submit("ann", &v.pair, Preference::B).unwrap();
                    v.pair
                })
                .collect()
        };
        let s = session(dir.path(), 5);
        assert_eq!(s.progress("ann").labeled, 2);
        while let Some(v) = s.next_pair("ann").unwrap() {
            assert!(!first.contains(&v.pair));
            s.submit("ann", &v.pair, Preference::A).unwrap();
        }
        assert_eq!(s.labels().len(), 5);
    }
}
