//! Corpus ingestion, length-grouped pair sampling and gold-label attachment.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate document id {id:?} on lines {first} and {second}")]
    DuplicateId {
        id: String,
        first: usize,
        second: usize,
    },
    #[error("need at least 2 documents to sample pairs, corpus has {0}")]
    TooFewDocuments(usize),
    #[error("{buckets} buckets requested but only {distinct} distinct lengths")]
    TooManyBuckets { buckets: usize, distinct: usize },
    #[error("cannot sample {requested} distinct pairs; at most {max} are reachable")]
    Unreachable { requested: usize, max: usize },
    #[error("count and buckets must be positive")]
    ZeroCount,
    #[error("label references unknown pair {0:?}")]
    UnknownPair(String),
    #[error("annotator {annotator:?} gave conflicting labels for pair {pair:?}")]
    ConflictingLabels { pair: String, annotator: String },
    #[error("pair {pair:?} references unknown document {doc:?}")]
    UnknownDocument { pair: String, doc: String },
    #[error("invalid verdict {0:?}")]
    BadVerdict(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub char_length: usize,
    pub domain: String,
    pub metadata: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, domain: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            id: id.into(),
            char_length: text.chars().count(),
            text,
            domain: domain.into(),
            metadata: BTreeMap::new(),
        }
    }
}

/// On-disk document record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl From<&Document> for DocumentRecord {
    fn from(d: &Document) -> Self {
        Self {
            id: d.id.clone(),
            text: d.text.clone(),
            meta: d
                .metadata
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
                .collect(),
        }
    }
}

/// Immutable, id-indexed document collection in ingestion order.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Arc<Document>>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_documents(docs: Vec<Document>) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::default();
        for (i, d) in docs.into_iter().enumerate() {
            if let Some(&first) = corpus.by_id.get(&d.id) {
                return Err(CorpusError::DuplicateId {
                    id: d.id,
                    first: first + 1,
                    second: i + 1,
                });
            }
            corpus.by_id.insert(d.id.clone(), i);
            corpus.docs.push(Arc::new(d));
        }
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Arc<Document>> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn documents(&self) -> &[Arc<Document>] {
        &self.docs
    }

    pub fn records(&self) -> Vec<DocumentRecord> {
        self.docs
            .iter()
            .map(|d| DocumentRecord::from(d.as_ref()))
            .collect()
    }
}

/// Read line-delimited `{"id", "text", "meta"}` records into a corpus.
pub fn ingest_documents<R: Read>(source: R, domain: &str) -> Result<Corpus, CorpusError> {
    let mut docs = Vec::new();
    let mut lines_of: HashMap<String, usize> = HashMap::new();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| CorpusError::Malformed {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DocumentRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: lineno,
                message: e.to_string(),
            })?;
        if rec.id.is_empty() || rec.text.is_empty() {
            return Err(CorpusError::Malformed {
                line: lineno,
                message: "id and text must be non-empty".into(),
            });
        }
        if let Some(&first) = lines_of.get(&rec.id) {
            return Err(CorpusError::DuplicateId {
                id: rec.id,
                first,
                second: lineno,
            });
        }
        lines_of.insert(rec.id.clone(), lineno);
        let mut doc = Document::new(rec.id, rec.text, domain);
        doc.metadata = rec
            .meta
            .into_iter()
            .map(|(k, v)| match v {
                serde_json::Value::String(s) => (k, s),
                other => (k, other.to_string()),
            })
            .collect();
        docs.push(doc);
    }
    Corpus::from_documents(docs)
}

/// A human or gold preference between the two documents of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preference {
    A,
    B,
    Tie,
}

impl Preference {
    pub fn swapped(self) -> Self {
        match self {
            Preference::A => Preference::B,
            Preference::B => Preference::A,
            Preference::Tie => Preference::Tie,
        }
    }
}

impl FromStr for Preference {
    type Err = CorpusError;

    /// Accepts `A`, `B`, `Tie` and the annotation-guideline spelling `C`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Preference::A),
            "B" => Ok(Preference::B),
            "TIE" | "C" => Ok(Preference::Tie),
            _ => Err(CorpusError::BadVerdict(s.to_string())),
        }
    }
}

impl fmt::Display for Preference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preference::A => "A",
            Preference::B => "B",
            Preference::Tie => "Tie",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Human,
    Agent,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Human => "human",
            Split::Agent => "agent",
            Split::Test => "test",
        }
    }

    fn prefix(self) -> char {
        match self {
            Split::Human => 'h',
            Split::Agent => 'g',
            Split::Test => 't',
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Two documents, by id, with an optional gold preference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub id: String,
    #[serde(rename = "a")]
    pub doc_a: String,
    #[serde(rename = "b")]
    pub doc_b: String,
    pub split: Split,
    pub gold: Option<Preference>,
}

impl Pair {
    /// Gold label usable for accuracy: `A` or `B` only.
    pub fn decisive_gold(&self) -> Option<Preference> {
        self.gold.filter(|g| *g != Preference::Tie)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub split: Split,
    pub pairs: Vec<Pair>,
}

impl PairSet {
    pub fn new(split: Split, pairs: Vec<Pair>) -> Self {
        debug_assert!(pairs.iter().all(|p| p.split == split));
        Self { split, pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Pair> {
        self.pairs.iter().find(|p| p.id == id)
    }

    /// Pairs whose gold label is `A` or `B`.
    pub fn decisive(&self) -> Vec<&Pair> {
        self.pairs
            .iter()
            .filter(|p| p.decisive_gold().is_some())
            .collect()
    }

    /// Check that every referenced document exists.
    pub fn validate_against(&self, corpus: &Corpus) -> Result<(), CorpusError> {
        for p in &self.pairs {
            for d in [&p.doc_a, &p.doc_b] {
                if corpus.get(d).is_none() {
                    return Err(CorpusError::UnknownDocument {
                        pair: p.id.clone(),
                        doc: d.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Equal-frequency length buckets: indices into `corpus.documents()`,
/// grouped by quantile of `char_length` (ties broken by ingestion order).
pub fn length_buckets(corpus: &Corpus, buckets: usize) -> Result<Vec<Vec<usize>>, CorpusError> {
    let n = corpus.len();
    if buckets == 0 {
        return Err(CorpusError::ZeroCount);
    }
    let distinct: HashSet<usize> = corpus.docs.iter().map(|d| d.char_length).collect();
    if buckets > distinct.len() {
        return Err(CorpusError::TooManyBuckets {
            buckets,
            distinct: distinct.len(),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (corpus.docs[i].char_length, i));
    Ok((0..buckets)
        .map(|b| order[b * n / buckets..(b + 1) * n / buckets].to_vec())
        .collect())
}

fn pair_capacity(bucket_sizes: &[usize]) -> usize {
    bucket_sizes
        .iter()
        .map(|&m| m * m.saturating_sub(1) / 2)
        .sum()
}

/// Sample `count` distinct unordered pairs, both members from the same length
/// bucket, uniformly without replacement over all within-bucket pairs.
pub fn sample_pairs(
    corpus: &Corpus,
    count: usize,
    buckets: usize,
    seed: u64,
    split: Split,
) -> Result<PairSet, CorpusError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let picked = draw_pairs(corpus, count, buckets, &mut rng)?;
    Ok(PairSet::new(split, materialize(corpus, &picked, split)))
}

/// Sample disjoint human, test and agent splits from one pool of pairs.
pub fn sample_splits(
    corpus: &Corpus,
    counts: SplitCounts,
    buckets: usize,
    seed: u64,
) -> Result<[PairSet; 3], CorpusError> {
    let total = counts.human + counts.test + counts.agent;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let picked = draw_pairs(corpus, total, buckets, &mut rng)?;
    let (h, rest) = picked.split_at(counts.human);
    let (t, g) = rest.split_at(counts.test);
    Ok([
        PairSet::new(Split::Human, materialize(corpus, h, Split::Human)),
        PairSet::new(Split::Test, materialize(corpus, t, Split::Test)),
        PairSet::new(Split::Agent, materialize(corpus, g, Split::Agent)),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub human: usize,
    pub test: usize,
    pub agent: usize,
}

fn materialize(corpus: &Corpus, picked: &[(usize, usize)], split: Split) -> Vec<Pair> {
    picked
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| Pair {
            id: format!("{}{:06}", split.prefix(), i),
            doc_a: corpus.docs[a].id.clone(),
            doc_b: corpus.docs[b].id.clone(),
            split,
            gold: None,
        })
        .collect()
}

fn draw_pairs(
    corpus: &Corpus,
    count: usize,
    buckets: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<(usize, usize)>, CorpusError> {
    if corpus.len() < 2 {
        return Err(CorpusError::TooFewDocuments(corpus.len()));
    }
    if count == 0 {
        return Err(CorpusError::ZeroCount);
    }
    let groups = length_buckets(corpus, buckets)?;
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let max = pair_capacity(&sizes);
    if count > max {
        return Err(CorpusError::Unreachable {
            requested: count,
            max,
        });
    }

    let mut unordered: Vec<(usize, usize)> = if count * 2 > max {
        // Dense request: enumerate everything and take a random prefix.
        let mut all = Vec::with_capacity(max);
        for g in &groups {
            for i in 0..g.len() {
                for j in i + 1..g.len() {
                    all.push((g[i], g[j]));
                }
            }
        }
        all.shuffle(rng);
        all.truncate(count);
        all
    } else {
        // Sparse request: rejection sampling, bucket chosen by pair capacity.
        let cumulative: Vec<usize> = sizes
            .iter()
            .scan(0, |acc, &m| {
                *acc += m * m.saturating_sub(1) / 2;
                Some(*acc)
            })
            .collect();
        let mut seen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let r = rng.random_range(0..max);
            let b = cumulative.partition_point(|&c| c <= r);
            let g = &groups[b];
            let i = rng.random_range(0..g.len());
            let mut j = rng.random_range(0..g.len() - 1);
            if j >= i {
                j += 1;
            }
            let key = (g[i].min(g[j]), g[i].max(g[j]));
            if seen.insert(key) {
                out.push(key);
            }
        }
        out
    };
    // Random side assignment so position carries no length or order signal.
    for p in unordered.iter_mut() {
        if rng.random::<bool>() {
            *p = (p.1, p.0);
        }
    }
    Ok(unordered)
}

/// One annotator's verdict on one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub pair: String,
    pub annotator: String,
    #[serde(with = "pref_str")]
    pub verdict: Preference,
}

mod pref_str {
    use super::Preference;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &Preference, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&p.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Preference, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Attach gold labels.
///
/// Test pairs keep gold only when at least `min_test_annotators` annotators
/// all agree; other test pairs are dropped. Human and agent pairs take the
/// majority label (a single label suffices) and are dropped on a tie or when
/// unlabeled.
pub fn attach_gold_with(
    pairs: &PairSet,
    labels: &[Label],
    min_test_annotators: usize,
) -> Result<PairSet, CorpusError> {
    let known: HashSet<&str> = pairs.pairs.iter().map(|p| p.id.as_str()).collect();
    let mut by_pair: HashMap<&str, BTreeMap<&str, Preference>> = HashMap::new();
    for l in labels {
        if !known.contains(l.pair.as_str()) {
            return Err(CorpusError::UnknownPair(l.pair.clone()));
        }
        let per = by_pair.entry(l.pair.as_str()).or_default();
        match per.get(l.annotator.as_str()) {
            Some(prev) if *prev != l.verdict => {
                return Err(CorpusError::ConflictingLabels {
                    pair: l.pair.clone(),
                    annotator: l.annotator.clone(),
                })
            }
            _ => {
                per.insert(l.annotator.as_str(), l.verdict);
            }
        }
    }

    let mut out = Vec::new();
    for p in &pairs.pairs {
        let Some(votes) = by_pair.get(p.id.as_str()) else {
            continue;
        };
        let gold = match pairs.split {
            Split::Test => {
                let mut it = votes.values();
                let first = *it.next().expect("non-empty");
                (votes.len() >= min_test_annotators && it.all(|v| *v == first)).then_some(first)
            }
            Split::Human | Split::Agent => majority(votes.values().copied()),
        };
        if let Some(g) = gold {
            out.push(Pair {
                gold: Some(g),
                ..p.clone()
            });
        }
    }
    Ok(PairSet::new(pairs.split, out))
}

/// [`attach_gold_with`] requiring unanimity among however many test
/// annotators labeled a pair.
pub fn attach_gold(pairs: &PairSet, labels: &[Label]) -> Result<PairSet, CorpusError> {
    attach_gold_with(pairs, labels, 1)
}

fn majority(votes: impl Iterator<Item = Preference>) -> Option<Preference> {
    let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
    let key = |p: Preference| match p {
        Preference::A => 0u8,
        Preference::B => 1,
        Preference::Tie => 2,
    };
    for v in votes {
        *counts.entry(key(v)).or_default() += 1;
    }
    let best = *counts.values().max()?;
    let winners: Vec<u8> = counts
        .iter()
        .filter(|(_, c)| **c == best)
        .map(|(k, _)| *k)
        .collect();
    match winners.as_slice() {
        [0] => Some(Preference::A),
        [1] => Some(Preference::B),
        [2] => Some(Preference::Tie),
        _ => None,
    }
}
