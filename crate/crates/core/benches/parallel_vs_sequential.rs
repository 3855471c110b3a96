//! Sequential versus rayon execution of the data-parallel hot paths.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qcrit_core::corpus::{sample_pairs, Corpus, Document, Split};
use qcrit_core::judgment::{CriterionText, Judge};
use qcrit_core::llm_gateway::sim::{label_planted, synthetic_code, SimulatedProvider};
use qcrit_core::llm_gateway::Gateway;
use qcrit_core::par::{self, Mode};
use qcrit_core::prompts::Domain;
use qcrit_core::scorer::Featurizer;
use qcrit_core::selector::inclusion_counts;

const MODES: [(&str, Mode); 2] = [
    ("sequential", Mode::Sequential),
    ("parallel", Mode::Parallel),
];

fn corpus(n: usize) -> Corpus {
    let docs = (0..n)
        .map(|i| Document::new(format!("d{i:04}"), synthetic_code(7, i), "code"))
        .collect();
    Corpus::from_documents(docs).unwrap()
}

fn featurize(c: &mut Criterion) {
    let corpus = corpus(2000);
    let texts: Vec<&str> = corpus.documents().iter().map(|d| d.text.as_str()).collect();
    let featurizer = Featurizer::default();
    let mut group = c.benchmark_group("featurize_corpus");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::map(mode, &texts, |t| featurizer.featurize(t)))
        });
    }
    group.finish();
}

fn gumbel(c: &mut Criterion) {
    let scores: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut group = c.benchmark_group("gumbel_monte_carlo");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| inclusion_counts(&scores, 1.0, 8, 20_000, 3, mode).unwrap())
        });
    }
    group.finish();
}

fn judgment(c: &mut Criterion) {
    let corpus = corpus(200);
    let pairs = label_planted(
        &corpus,
        &sample_pairs(&corpus, 100, 4, 5, Split::Human).unwrap(),
    );
    let criteria: Vec<CriterionText> = (0..8)
        .map(|i| CriterionText::new(format!("criterion_{i}"), "Prefer the clearer snippet."))
        .collect();
    let gateway = Arc::new(Gateway::single(Arc::new(SimulatedProvider::new(
        Domain::Code,
        1,
    ))));
    let mut group = c.benchmark_group("judgment_fan_out");
    group.sample_size(20);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                // A fresh judge per iteration so the cache never short-circuits.
                let judge = Judge::new(gateway.clone(), Domain::Code).with_mode(mode);
                judge.evaluate_criteria(&corpus, &pairs, &criteria).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, featurize, gumbel, judgment);
criterion_main!(benches);
