//! Mining verbal data-quality criteria from a handful of human pairwise
//! preferences, and turning them into a corpus-scale data selector.
//!
//! The pipeline has four stages:
//!
//! 1. [`corpus`]: ingest documents and sample length-grouped pairs.
//! 2. [`evolution`]: a manager model evolves criteria (seeded from the
//!    [`knowledge_base`]) while worker models judge pairs under each one
//!    ([`judgment`]), keeping only criteria that agree with human gold labels.
//! 3. [`scorer`]: the mined criteria annotate many more pairs, and a
//!    Bradley-Terry model is trained on those preferences.
//! 4. [`selector`]: documents are sampled without replacement with probability
//!    proportional to `exp(score / temperature)` via the Gumbel top-k trick.
//!
//! All model traffic goes through [`llm_gateway`], which also ships
//! deterministic offline providers for tests and demos.

pub mod annotation;
pub mod corpus;
pub mod evolution;
pub mod jsonl;
pub mod judgment;
pub mod knowledge_base;
pub mod llm_gateway;
pub mod par;
pub mod prompts;
pub mod scorer;
pub mod selector;
pub mod synthetic;
pub mod text;

pub use corpus::{Corpus, Document, Pair, PairSet, Preference, Split};
pub use judgment::{CriterionStats, Judgment, Verdict};
pub use prompts::Domain;
