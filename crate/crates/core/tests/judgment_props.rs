//! Judgment, voting and retrieval checks against brute-force references.

use std::sync::Arc;
use std::time::Instant;

use proptest::prelude::*;
use qcrit_core::corpus::{Corpus, Document, Pair, PairSet, Preference, Split};
use qcrit_core::judgment::{vote_verdicts, CriterionText, Judge, Verdict};
use qcrit_core::knowledge_base::{collides, ingest_criteria, retrieve_top, CriterionSeed};
use qcrit_core::llm_gateway::{ChatRequest, FnProvider, Gateway, ProviderReply};
use qcrit_core::prompts::{self, Domain};

/// Reference accuracy: correct / (correct + wrong), undefined when nothing was
/// decided; Null verdicts are refusals; Tie gold pairs are skipped.
fn reference(verdicts: &[Verdict], gold: &[Preference]) -> (Option<f64>, f64) {
    let (mut correct, mut wrong, mut null, mut judged) = (0u32, 0u32, 0u32, 0u32);
    for (v, g) in verdicts.iter().zip(gold) {
        if *g == Preference::Tie {
            continue;
        }
        judged += 1;
        match (v, g) {
            (Verdict::Null, _) => null += 1,
            (Verdict::A, Preference::A) | (Verdict::B, Preference::B) => correct += 1,
            _ => wrong += 1,
        }
    }
    let acc = (correct + wrong > 0).then(|| f64::from(correct) / f64::from(correct + wrong));
    let refuse = if judged == 0 {
        0.0
    } else {
        f64::from(null) / f64::from(judged)
    };
    (acc, refuse)
}

/// Three pairs per position, one per worker verdict. The provider answers from
/// the document text, so a pattern is just a choice of pair per position.
fn world(n: usize) -> (Corpus, Vec<[Pair; 3]>) {
    let mut docs = Vec::new();
    let mut slots = Vec::new();
    for i in 0..n {
        let slot = [0, 1, 2].map(|v| {
            let (a, b) = (format!("d{i}_{v}_a"), format!("d{i}_{v}_b"));
            docs.push(Document::new(&a, format!("verdict {v} left {i}"), "code"));
            docs.push(Document::new(&b, format!("verdict {v} right {i}"), "code"));
            Pair {
                id: format!("h{i:03}{v}"),
                doc_a: a,
                doc_b: b,
                split: Split::Human,
                gold: None,
            }
        });
        slots.push(slot);
    }
    (Corpus::from_documents(docs).unwrap(), slots)
}

fn pattern_judge() -> Judge {
    let provider = FnProvider::new(|req: &ChatRequest| {
        let prompt = req.prompt_text();
        let parts = prompts::parse_judgment(Domain::Code, &prompt).expect("judgment prompt");
        let digit: usize = parts.a["verdict ".len().."verdict ".len() + 1]
            .parse()
            .unwrap();
        Ok(ProviderReply::text(format!(
            "thinking\nFINAL: {}",
            ["A", "B", "NULL"][digit]
        )))
    });
    Judge::new(Arc::new(Gateway::single(Arc::new(provider))), Domain::Code)
}

#[test]
fn accuracy_formula_over_all_verdict_patterns() {
    let t = Instant::now();
    let judge = pattern_judge();
    let criterion = CriterionText::new("c", "d");
    let (corpus, slots) = world(10);
    let mut checked = 0;
    for n in 1..=10usize {
        let gold: Vec<Preference> = (0..n)
            .map(|i| {
                if i % 3 == 1 {
                    Preference::B
                } else {
                    Preference::A
                }
            })
            .collect();
        for code in 0..3usize.pow(n as u32) {
            let mut c = code;
            let mut pairs = Vec::with_capacity(n);
            let mut verdicts = Vec::with_capacity(n);
            for (i, g) in gold.iter().enumerate() {
                let v = c % 3;
                c /= 3;
                pairs.push(Pair {
                    gold: Some(*g),
                    ..slots[i][v].clone()
                });
                verdicts.push([Verdict::A, Verdict::B, Verdict::Null][v]);
            }
            let e = judge
                .evaluate_criterion(&corpus, &PairSet::new(Split::Human, pairs), &criterion)
                .unwrap();
            let (acc, refuse) = reference(&verdicts, &gold);
            assert_eq!(e.stats.accuracy, acc);
            assert_eq!(e.stats.refuse_rate, refuse);
            checked += 1;
        }
    }
    eprintln!("{checked} patterns in {:?}", t.elapsed());
}

fn binomial_majority(judges: u32, p: f64) -> f64 {
    let choose =
        |n: u32, k: u32| (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1));
    (judges / 2 + 1..=judges)
        .map(|k| choose(judges, k) * p.powi(k as i32) * (1.0 - p).powi((judges - k) as i32))
        .sum()
}

#[test]
fn majority_vote_of_independent_judges_matches_binomial() {
    let t = Instant::now();
    let n = 1000;
    let docs: Vec<Document> = (0..n)
        .flat_map(|i| {
            [
                Document::new(format!("a{i}"), format!("better {i}"), "code"),
                Document::new(format!("b{i}"), format!("worse {i}"), "code"),
            ]
        })
        .collect();
    let corpus = Corpus::from_documents(docs).unwrap();
    let pairs: Vec<Pair> = (0..n)
        .map(|i| {
            // Alternate sides so a judge biased towards one slot cannot score.
            let (a, b, g) = if i % 2 == 0 {
                (format!("a{i}"), format!("b{i}"), Preference::A)
            } else {
                (format!("b{i}"), format!("a{i}"), Preference::B)
            };
            Pair {
                id: format!("p{i:04}"),
                doc_a: a,
                doc_b: b,
                split: Split::Human,
                gold: Some(g),
            }
        })
        .collect();
    let pairs = PairSet::new(Split::Human, pairs);

    let provider = FnProvider::new(|req: &ChatRequest| {
        let prompt = req.prompt_text();
        let parts = prompts::parse_judgment(Domain::Code, &prompt).expect("judgment prompt");
        let better_is_a = parts.a.starts_with("better");
        let right = qcrit_core::text::unit_float(qcrit_core::text::finalize(
            qcrit_core::text::hash_parts(99, &[parts.name, parts.a]),
        )) < 0.8;
        let answer = if better_is_a == right { "A" } else { "B" };
        Ok(ProviderReply::text(format!("FINAL: {answer}")))
    });
    let judge = Judge::new(Arc::new(Gateway::single(Arc::new(provider))), Domain::Code);
    let criteria: Vec<CriterionText> = (0..5)
        .map(|j| CriterionText::new(format!("judge{j}"), "d"))
        .collect();
    let set = judge.evaluate_set(&corpus, &pairs, &criteria).unwrap();

    let individual: f64 = set
        .per_criterion
        .iter()
        .map(|e| e.stats.accuracy.unwrap())
        .sum::<f64>()
        / 5.0;
    let majority = set.accuracy.unwrap();
    let expected = binomial_majority(5, 0.8);
    assert!((expected - 0.9421).abs() < 1e-4);
    assert_eq!(set.null, 0);
    assert!(
        majority > individual,
        "majority {majority} vs individual {individual}"
    );
    assert!(
        (majority - expected).abs() <= 0.03,
        "majority {majority} vs {expected}"
    );
    eprintln!(
        "individual {individual:.4} majority {majority:.4} in {:?}",
        t.elapsed()
    );
}

/// Independent reference: filter, stable sort by accuracy, truncate.
fn retrieve_reference(accs: &[Option<f64>], n: usize, threshold: f64) -> Vec<usize> {
    let mut kept: Vec<(usize, f64)> = accs
        .iter()
        .enumerate()
        .filter_map(|(i, a)| a.filter(|&a| a > threshold).map(|a| (i, a)))
        .collect();
    // Insertion sort keeps equal accuracies in input order.
    for i in 1..kept.len() {
        let mut j = i;
        while j > 0 && kept[j - 1].1 < kept[j].1 {
            kept.swap(j - 1, j);
            j -= 1;
        }
    }
    kept.into_iter().take(n).map(|(i, _)| i).collect()
}

fn reference_vote(verdicts: &[Verdict]) -> Verdict {
    let a = verdicts.iter().filter(|v| **v == Verdict::A).count();
    let b = verdicts.iter().filter(|v| **v == Verdict::B).count();
    if a > b {
        Verdict::A
    } else if b > a {
        Verdict::B
    } else {
        Verdict::Null
    }
}

fn verdict() -> impl Strategy<Value = Verdict> {
    prop_oneof![Just(Verdict::A), Just(Verdict::B), Just(Verdict::Null)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn retrieve_top_matches_sort_and_filter(
        accs in prop::collection::vec(prop::option::of((0u32..=10).prop_map(|k| f64::from(k) / 10.0)), 0..40),
        n in 0usize..25,
    ) {
        let seeds: Vec<CriterionSeed> = (0..accs.len()).map(|i| CriterionSeed::new(&format!("c{i}"), "d", "t")).collect();
        let mut calls = 0;
        let got = retrieve_top(&seeds, n, 0.5, |s| {
            calls += 1;
            accs[s.name[1..].parse::<usize>().unwrap()]
        });
        prop_assert_eq!(calls, seeds.len());
        let want = retrieve_reference(&accs, n, 0.5);
        let got_idx: Vec<usize> = got.iter().map(|(s, _)| s.name[1..].parse().unwrap()).collect();
        prop_assert_eq!(&got_idx, &want);
        for (s, a) in &got {
            prop_assert_eq!(*a, accs[s.name[1..].parse::<usize>().unwrap()]);
        }
    }

    #[test]
    fn vote_matches_reference_and_is_symmetric(
        verdicts in prop::collection::vec(verdict(), 0..12),
        rot in 0usize..12,
    ) {
        let v = vote_verdicts(verdicts.iter().copied());
        prop_assert_eq!(v, reference_vote(&verdicts));
        prop_assert_eq!(vote_verdicts(verdicts.iter().map(|v| v.swapped())), v.swapped());
        let mut rotated = verdicts.clone();
        if !rotated.is_empty() {
            let k = rot % rotated.len();
            rotated.rotate_left(k);
        }
        prop_assert_eq!(vote_verdicts(rotated), v);
    }
}

proptest! {
    #[test]
    fn dedup_is_idempotent(names in prop::collection::vec("[a-e]{1,3}( [a-e]{1,3}){0,2}", 1..15), t in 0.0f64..=1.0) {
        let seeds: Vec<CriterionSeed> = names.iter().map(|n| CriterionSeed::new(n, "d", "t")).collect();
        let Ok(kb) = ingest_criteria(seeds, t) else { return Ok(()); };
        let again = ingest_criteria(kb.criteria.clone(), t).unwrap();
        prop_assert!(again.dropped.is_empty());
        prop_assert_eq!(again.criteria, kb.criteria.clone());
        for (i, a) in kb.criteria.iter().enumerate() {
            for b in &kb.criteria[i + 1..] {
                prop_assert!(collides(&b.name, [a.name.as_str()], t).is_none());
            }
        }
    }
}
