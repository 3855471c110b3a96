//! `report`: CSV tables and static SVG plots from a finished run.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use qcrit_core::evolution::EvolutionStore;
use qcrit_core::evolution::{EvolutionState, IterationReport, Origin, Status};
use qcrit_core::jsonl;
use qcrit_core::selector::SelectionRow;

use crate::error::CliError;
use crate::stages::{load_final, Ctx, Evaluation, ScoreRecord, SplitEvaluation};

#[derive(Serialize)]
struct CriterionRow<'a> {
    name: &'a str,
    origin: Origin,
    status: Status,
    versions: usize,
    current_accuracy: Option<f64>,
    best_accuracy: Option<f64>,
    final_criterion: bool,
    human_accuracy: Option<f64>,
    human_refuse_rate: Option<f64>,
    test_accuracy: Option<f64>,
    test_refuse_rate: Option<f64>,
}

#[derive(Serialize)]
struct IterationRow<'a> {
    iteration: usize,
    name: &'a str,
    correct: usize,
    wrong: usize,
    refused: usize,
    accuracy: Option<f64>,
    refuse_rate: f64,
    decision: &'static str,
}

#[derive(Serialize)]
struct EvaluationRow<'a> {
    split: &'a str,
    criterion: &'a str,
    accuracy: Option<f64>,
    refuse_rate: Option<f64>,
    correct: usize,
    wrong: usize,
    refused: usize,
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    id: &'a str,
    raw: f64,
    score: f64,
    perturbed: f64,
    selected: bool,
}

#[derive(Serialize)]
struct Summary {
    iterations: usize,
    criteria_total: usize,
    criteria_removed: usize,
    final_criteria: usize,
    human_ensemble_accuracy: Option<f64>,
    test_ensemble_accuracy: Option<f64>,
    test_mean_individual_accuracy: Option<f64>,
    documents: usize,
    selected: usize,
}

fn csv_file<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(CliError::failed)?;
    }
    let bytes = w.into_inner().map_err(CliError::failed)?;
    Ok(jsonl::write_atomic(path, &bytes)?)
}

pub fn report(ctx: &Ctx) -> Result<(), CliError> {
    let out = ctx.dir.path("report");
    let store = EvolutionStore::new(ctx.dir.path("evolution"));
    let state: EvolutionState = store
        .load_state()?
        .ok_or_else(|| CliError::Failed("evolution/state.json is missing".into()))?;
    let reports = store.load_reports(state.iteration)?;
    let finals = load_final(ctx)?;
    let evaluation: Evaluation = jsonl::read_json(&ctx.dir.path("evaluation.json"))?;
    let scores: Vec<ScoreRecord> = jsonl::read(&ctx.dir.path("scores.jsonl"))?;
    let selection: Vec<SelectionRow> = jsonl::read(&ctx.dir.path("selection.jsonl"))?;

    let lookup = |e: &Option<SplitEvaluation>, name: &str| {
        e.as_ref()
            .and_then(|s| s.per_criterion.iter().find(|c| c.name == name))
            .map(|c| (c.accuracy, c.refuse_rate))
    };
    let criteria: Vec<CriterionRow> = state
        .criteria
        .iter()
        .map(|c| {
            let human = lookup(&evaluation.human, &c.name);
            let test = lookup(&evaluation.test, &c.name);
            CriterionRow {
                name: &c.name,
                origin: c.origin,
                status: c.status,
                versions: c.versions.len(),
                current_accuracy: c.accuracy(),
                best_accuracy: c.best_version().and_then(|(_, v)| v.accuracy),
                final_criterion: finals.iter().any(|f| f.name == c.name),
                human_accuracy: human.and_then(|h| h.0),
                human_refuse_rate: human.map(|h| h.1),
                test_accuracy: test.and_then(|t| t.0),
                test_refuse_rate: test.map(|t| t.1),
            }
        })
        .collect();
    csv_file(&out.join("criteria.csv"), &criteria)?;
    csv_file(&out.join("history.csv"), &state.history)?;
    csv_file(&out.join("iterations.csv"), &iteration_rows(&reports))?;
    csv_file(&out.join("evaluation.csv"), &evaluation_rows(&evaluation))?;

    let perturbed: HashMap<&str, &SelectionRow> =
        selection.iter().map(|r| (r.id.as_str(), r)).collect();
    let score_rows: Vec<ScoreRow> = scores
        .iter()
        .map(|s| {
            let sel = perturbed.get(s.id.as_str());
            ScoreRow {
                id: &s.id,
                raw: s.raw,
                score: s.score,
                perturbed: sel.map_or(f64::NAN, |r| r.perturbed),
                selected: sel.is_some_and(|r| r.selected),
            }
        })
        .collect();
    csv_file(&out.join("scores.csv"), &score_rows)?;
    ctx.dir.checkpoint();

    let t = &ctx.cfg.evolution;
    jsonl::write_atomic(
        &out.join("iterations.svg"),
        iterations_svg(&reports, t.t_high, t.t_low).as_bytes(),
    )?;
    let selected: Vec<bool> = score_rows.iter().map(|r| r.selected).collect();
    let z: Vec<f64> = score_rows.iter().map(|r| r.score).collect();
    jsonl::write_atomic(&out.join("scores.svg"), score_svg(&z, &selected).as_bytes())?;

    let summary = Summary {
        iterations: state.iteration,
        criteria_total: state.criteria.len(),
        criteria_removed: state.criteria.iter().filter(|c| !c.is_active()).count(),
        final_criteria: finals.len(),
        human_ensemble_accuracy: evaluation.human.as_ref().and_then(|e| e.ensemble_accuracy),
        test_ensemble_accuracy: evaluation.test.as_ref().and_then(|e| e.ensemble_accuracy),
        test_mean_individual_accuracy: evaluation
            .test
            .as_ref()
            .and_then(|e| e.mean_individual_accuracy),
        documents: scores.len(),
        selected: selected.iter().filter(|s| **s).count(),
    };
    jsonl::write_json(&out.join("summary.json"), &summary)?;
    ctx.dir.checkpoint();
    Ok(())
}

fn iteration_rows(reports: &[IterationReport]) -> Vec<IterationRow<'_>> {
    let mut rows = Vec::new();
    for r in reports {
        for s in &r.stats {
            let p = &r.partition;
            let decision = if p.keep.contains(&s.criterion_name) {
                "keep"
            } else if p.reflect.contains(&s.criterion_name) {
                "reflect"
            } else if p.remove.contains(&s.criterion_name) {
                "remove"
            } else {
                "candidate"
            };
            rows.push(IterationRow {
                iteration: r.iteration,
                name: &s.criterion_name,
                correct: s.correct,
                wrong: s.wrong,
                refused: s.refused,
                accuracy: s.accuracy,
                refuse_rate: s.refuse_rate,
                decision,
            });
        }
    }
    rows
}

fn evaluation_rows(e: &Evaluation) -> Vec<EvaluationRow<'_>> {
    let mut rows = Vec::new();
    for (label, split) in [("human", &e.human), ("test", &e.test)] {
        let Some(s) = split else { continue };
        for c in &s.per_criterion {
            rows.push(EvaluationRow {
                split: label,
                criterion: &c.name,
                accuracy: c.accuracy,
                refuse_rate: Some(c.refuse_rate),
                correct: c.correct,
                wrong: c.wrong,
                refused: c.refused,
            });
        }
        rows.push(EvaluationRow {
            split: label,
            criterion: "(mean of individual criteria)",
            accuracy: s.mean_individual_accuracy,
            refuse_rate: None,
            correct: 0,
            wrong: 0,
            refused: 0,
        });
        let total = s.ensemble_correct + s.ensemble_wrong + s.ensemble_null;
        rows.push(EvaluationRow {
            split: label,
            criterion: "(majority vote)",
            accuracy: s.ensemble_accuracy,
            refuse_rate: (total > 0).then(|| s.ensemble_null as f64 / total as f64),
            correct: s.ensemble_correct,
            wrong: s.ensemble_wrong,
            refused: s.ensemble_null,
        });
    }
    rows
}

const PANEL: f64 = 220.0;
const MARGIN: f64 = 40.0;

/// One refuse-rate vs accuracy scatter panel per iteration, with the keep
/// and remove thresholds drawn as dashed lines.
pub fn iterations_svg(reports: &[IterationReport], t_high: f64, t_low: f64) -> String {
    let n = reports.len().max(1) as f64;
    let width = n * (PANEL + MARGIN) + MARGIN;
    let height = PANEL + 2.0 * MARGIN;
    let mut s = svg_open(width, height);
    for (i, r) in reports.iter().enumerate() {
        let x0 = MARGIN + i as f64 * (PANEL + MARGIN);
        let y0 = MARGIN;
        let px = |v: f64| x0 + v * PANEL;
        let py = |v: f64| y0 + (1.0 - v) * PANEL;
        let _ = writeln!(
            s,
            r##"<rect x="{x0:.1}" y="{y0:.1}" width="{PANEL}" height="{PANEL}" fill="none" stroke="#444"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12">iteration {}</text>"#,
            x0 + PANEL / 2.0,
            y0 - 8.0,
            r.iteration
        );
        for (t, color) in [(t_high, "#2a7"), (t_low, "#c33")] {
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{color}" stroke-dasharray="4 3"/>"#,
                px(0.0),
                px(1.0),
                y = py(t)
            );
        }
        for st in &r.stats {
            let (acc, fill) = match st.accuracy {
                Some(a) => (a, "#357"),
                None => (0.0, "#c33"),
            };
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{fill}" fill-opacity="0.7"><title>{}</title></circle>"#,
                px(st.refuse_rate),
                py(acc),
                xml_escape(&st.criterion_name)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">refuse rate</text>"#,
            x0 + PANEL / 2.0,
            y0 + PANEL + 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" transform="rotate(-90 {:.1} {:.1})">accuracy</text>"#,
            x0 - 8.0,
            y0 + PANEL / 2.0 + 20.0,
            x0 - 8.0,
            y0 + PANEL / 2.0 + 20.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Histogram of normalized scores, selected documents stacked on top.
pub fn score_svg(scores: &[f64], selected: &[bool]) -> String {
    const BINS: usize = 20;
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let (lo, hi) = if lo.is_finite() && hi > lo {
        (lo, hi)
    } else {
        (-1.0, 1.0)
    };
    let mut all = [0usize; BINS];
    let mut chosen = [0usize; BINS];
    for (&v, &sel) in scores.iter().zip(selected) {
        let b = (((v - lo) / (hi - lo)) * BINS as f64)
            .floor()
            .clamp(0.0, (BINS - 1) as f64) as usize;
        all[b] += 1;
        if sel {
            chosen[b] += 1;
        }
    }
    let max = all.iter().copied().max().unwrap_or(1).max(1) as f64;
    let (w, h) = (2.0 * PANEL, PANEL);
    let mut s = svg_open(w + 2.0 * MARGIN, h + 2.0 * MARGIN);
    let bw = w / BINS as f64;
    for b in 0..BINS {
        let x = MARGIN + b as f64 * bw;
        for (count, fill) in [(all[b], "#bbb"), (chosen[b], "#357")] {
            let bh = count as f64 / max * h;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{bh:.1}" fill="{fill}"/>"#,
                MARGIN + h - bh,
                bw - 1.0
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">normalized score ({lo:.2} to {hi:.2}); dark = selected</text>"#,
        MARGIN + w / 2.0,
        MARGIN + h + 18.0
    );
    s.push_str("</svg>\n");
    s
}

fn svg_open(width: f64, height: f64) -> String {
    format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">
"#
    )
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
