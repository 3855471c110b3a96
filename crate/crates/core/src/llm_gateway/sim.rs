//! A self-contained offline "world" that answers every role deterministically.
//!
//! Documents have a hidden quality computed from surface features of their
//! text ([`planted_quality`]). A worker judging under a criterion sees that
//! quality through noise whose scale is fixed by a hash of the criterion's
//! name and description, so some criteria are sharp, some are useless, and
//! rewriting a description re-rolls its sharpness. The manager proposes
//! criteria from a fixed vocabulary (so collisions with the deny-list happen)
//! and rewrites descriptions on request. Used by the demo pipeline and by the
//! end-to-end tests; nothing here is meant to model a real LLM.

use serde_json::{Map, Value};

use super::{AgentRole, ChatProvider, ChatRequest, ProviderError, ProviderReply};
use crate::prompts::{self, Domain};
use crate::text::{hash_parts, unit_float};

/// Hidden quality of a text in the simulated world.
pub fn planted_quality(text: &str) -> f64 {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let n_lines = lines.len().max(1) as f64;
    let explanatory = lines
        .iter()
        .filter(|l| {
            let t = l.trim_start();
            t.starts_with('#')
                || t.contains("\"\"\"")
                || t.starts_with("Proof")
                || t.starts_with("Therefore")
        })
        .count() as f64
        / n_lines;
    let structure = text.matches("def ").count()
        + text.matches("class ").count()
        + text.matches("Lemma").count();
    let structure = (structure.min(5) as f64) / 5.0;
    let chars = text.chars().count().max(1) as f64;
    let digit_density = text.chars().filter(char::is_ascii_digit).count() as f64 / chars;
    let shortness = 1.0 - chars.min(400.0) / 400.0;
    let words: Vec<&str> = text.split_whitespace().collect();
    let richness = if words.is_empty() {
        0.0
    } else {
        let distinct: std::collections::HashSet<&str> = words.iter().copied().collect();
        distinct.len() as f64 / words.len() as f64
    };
    1.2 * explanatory + 0.8 * structure - 2.5 * digit_density - 0.8 * shortness + 0.4 * richness
}

/// Gold preference in the simulated world: the higher planted quality wins.
pub fn planted_preference(a: &str, b: &str) -> crate::corpus::Preference {
    use crate::corpus::Preference;
    let (qa, qb) = (planted_quality(a), planted_quality(b));
    if qa >= qb {
        Preference::A
    } else {
        Preference::B
    }
}

/// Noise scale and abstention margin for a criterion text.
pub fn criterion_profile(seed: u64, name: &str, description: &str) -> (f64, f64) {
    let h = hash_parts(seed, &["profile", name, description]);
    let u1 = unit_float(h);
    let u2 = unit_float(hash_parts(h, &["margin"]));
    (0.02 + 0.9 * u1 * u1, 0.005 + 0.03 * u2)
}

fn std_normal(h: u64) -> f64 {
    let u1 = unit_float(h).max(1e-300);
    let u2 = unit_float(crate::text::finalize(h ^ 0x5bd1_e995));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

const ADJECTIVES: [&str; 12] = [
    "clear",
    "consistent",
    "rigorous",
    "modular",
    "explicit",
    "coherent",
    "complete",
    "idiomatic",
    "documented",
    "focused",
    "general",
    "correct",
];
const NOUNS: [&str; 10] = [
    "structure",
    "naming",
    "reasoning",
    "comments",
    "interfaces",
    "notation",
    "examples",
    "error_handling",
    "purpose",
    "logic",
];

#[derive(Debug, Clone)]
pub struct SimulatedProvider {
    pub domain: Domain,
    pub seed: u64,
}

impl SimulatedProvider {
    pub fn new(domain: Domain, seed: u64) -> Self {
        Self { domain, seed }
    }

    fn worker(&self, prompt: &str) -> String {
        let Some(parts) = prompts::parse_judgment(self.domain, prompt) else {
            return "I cannot read this request.".into();
        };
        let (noise, margin) = criterion_profile(self.seed, parts.name, parts.description);
        let qa = planted_quality(parts.a);
        let qb = planted_quality(parts.b);
        let z = std_normal(hash_parts(
            self.seed,
            &["judge", parts.name, parts.description, parts.a, parts.b],
        ));
        let diff = qa - qb + noise * z;
        let answer = if diff.abs() < margin {
            "NULL"
        } else if diff > 0.0 {
            "A"
        } else {
            "B"
        };
        format!(
            "Under {} text A reads as {qa:.3} and text B as {qb:.3}.\nFINAL: {answer}",
            parts.name
        )
    }

    fn manager(&self, prompt: &str) -> String {
        let h = hash_parts(self.seed, &["manager", prompt]);
        if prompt.starts_with(prompts::PROPOSE_HEADER) {
            let count = prompt
                .split("List and describe ")
                .nth(1)
                .and_then(|s| s.split_whitespace().next())
                .and_then(|s| s.parse::<usize>().ok())
                .unwrap_or(5);
            let mut out = Map::new();
            let mut k = 0u64;
            while out.len() < count && k < 1000 {
                let hk = hash_parts(h, &[&k.to_string()]);
                let adj = ADJECTIVES[(hk % ADJECTIVES.len() as u64) as usize];
                let noun = NOUNS[((hk >> 16) % NOUNS.len() as u64) as usize];
                let name = format!("{adj}_{noun}");
                let desc = format!(
                    "Prefer the text whose {} is more {adj}. Variant {:08x}.",
                    noun.replace('_', " "),
                    hk as u32
                );
                out.entry(name).or_insert(Value::String(desc));
                k += 1;
            }
            format!("```json\n{}\n```", Value::Object(out))
        } else if prompt.starts_with(prompts::ANALYZE_HEADER) {
            format!(
                "ANALYSIS: The worker weighed surface features over substance.\n\
                 SUGGESTION: Say when the criterion applies and when to answer NULL. [{:08x}]",
                h as u32
            )
        } else if prompt.starts_with(prompts::REFINE_HEADER) {
            let name = prompt
                .split("criterion **")
                .nth(1)
                .and_then(|s| s.split("**").next())
                .unwrap_or("criterion");
            format!(
                "Compare the texts on {}. Apply it only when both texts contain relevant content; \
                 otherwise answer NULL. Revision {:08x}.",
                name.replace('_', " "),
                h as u32
            )
        } else {
            "I do not understand the request.".into()
        }
    }

    fn relevance(&self, prompt: &str) -> String {
        let h = hash_parts(self.seed, &["relevance", prompt]);
        if h.is_multiple_of(5) {
            "No.".into()
        } else {
            "yes".into()
        }
    }
}

impl ChatProvider for SimulatedProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        let prompt = request.prompt_text();
        let text = match request.tag {
            AgentRole::Worker => self.worker(&prompt),
            AgentRole::Manager => self.manager(&prompt),
            AgentRole::Relevance => self.relevance(&prompt),
        };
        Ok(ProviderReply::text(text))
    }
}

/// Copy of `pairs` with every gold label set by [`planted_preference`].
pub fn label_planted(
    corpus: &crate::corpus::Corpus,
    pairs: &crate::corpus::PairSet,
) -> crate::corpus::PairSet {
    let mut out = pairs.clone();
    for p in &mut out.pairs {
        if let (Some(a), Some(b)) = (corpus.get(&p.doc_a), corpus.get(&p.doc_b)) {
            p.gold = Some(planted_preference(&a.text, &b.text));
        }
    }
    out
}

const IDENTS: [&str; 16] = [
    "total", "items", "count", "value", "result", "index", "buffer", "name", "score", "limit",
    "offset", "record", "parser", "cache", "window", "node",
];
const VERBS: [&str; 10] = [
    "load", "parse", "merge", "count", "update", "render", "filter", "score", "split", "build",
];

/// A synthetic Python-like snippet whose planted quality varies with the seed:
/// documented multi-function modules score high, terse numeric ones low.
pub fn synthetic_code(seed: u64, index: usize) -> String {
    let h = hash_parts(seed, &["doc", &index.to_string()]);
    let pick = |k: u64, n: usize| (hash_parts(h, &[&k.to_string()]) % n as u64) as usize;
    let care = unit_float(hash_parts(h, &["care"]));
    let n_funcs = 1 + pick(1, 4);
    let mut out = String::new();
    if care > 0.5 {
        out.push_str(&format!(
            "# Helpers for {} handling.\n",
            IDENTS[pick(2, IDENTS.len())]
        ));
    }
    for f in 0..n_funcs {
        let k = 10 + 10 * f as u64;
        let verb = VERBS[pick(k, VERBS.len())];
        let noun = IDENTS[pick(k + 1, IDENTS.len())];
        let arg = IDENTS[pick(k + 2, IDENTS.len())];
        out.push_str(&format!("def {verb}_{noun}({arg}):\n"));
        if unit_float(hash_parts(h, &["docstring", &f.to_string()])) < care {
            out.push_str(&format!(
                "    \"\"\"{} the {noun} from {arg}.\"\"\"\n",
                capitalize(verb)
            ));
        }
        let body = 1 + pick(k + 3, 4);
        for b in 0..body {
            let v = IDENTS[pick(k + 4 + b as u64, IDENTS.len())];
            if unit_float(hash_parts(h, &["comment", &f.to_string(), &b.to_string()])) < care * 0.6
            {
                out.push_str(&format!("    # keep {v} in range\n"));
            }
            if unit_float(hash_parts(h, &["magic", &f.to_string(), &b.to_string()])) > care {
                out.push_str(&format!(
                    "    {v} = {arg} * {} + {}\n",
                    10 + pick(k + 7, 9000),
                    pick(k + 8, 999)
                ));
            } else {
                out.push_str(&format!("    {v} = {verb}_{v}({arg})\n"));
            }
        }
        out.push_str(&format!("    return {arg}\n\n"));
    }
    out
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}
