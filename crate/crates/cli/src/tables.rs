//! CSV data tables derived from the pipeline artifacts.

use std::path::Path;

use controstim_core::evaluation::EvaluationReport;
use controstim_core::experiment::ExperimentExport;
use controstim_core::selection::SelectionReport;
use controstim_core::stimulus::StimulusManifest;
use serde::Serialize;

type TableResult = Result<(), Box<dyn std::error::Error>>;

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> TableResult {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ModelScoreRow<'a> {
    model: &'a str,
    measure: &'static str,
    split: &'static str,
    value: Option<f64>,
    slope: Option<f64>,
    intercept: Option<f64>,
}

#[derive(Serialize)]
struct SubjectScoreRow<'a> {
    model: &'a str,
    subject: &'a str,
    score: Option<f64>,
}

#[derive(Serialize)]
struct ComparisonRow<'a> {
    model_1: &'a str,
    model_2: &'a str,
    difference: f64,
    p_value: f64,
    p_adjusted: f64,
}

#[derive(Serialize)]
struct CeilingRow {
    lower: Option<f64>,
    upper: Option<f64>,
    upper_converged: bool,
}

#[derive(Serialize)]
struct SelectionRow<'a> {
    condition: &'a str,
    model_a: &'a str,
    model_b: &'a str,
    status: String,
    requested: usize,
    selected: usize,
    objective: f64,
}

#[derive(Serialize)]
struct SynthesisRow<'a> {
    id: &'a str,
    model_a: &'a str,
    model_b: &'a str,
    class_a: usize,
    class_b: usize,
    score: f64,
    accepted: bool,
    iterations: usize,
    attempts: usize,
}

#[derive(Serialize)]
struct ReliabilityRow<'a> {
    subject: &'a str,
    session_id: &'a str,
    pairs: usize,
    reliability: Option<f64>,
}

pub fn write_tables(
    dir: &Path,
    evaluation: &EvaluationReport,
    export: &ExperimentExport,
    selection: &SelectionReport,
    synthesis: &StimulusManifest,
) -> TableResult {
    let mut scores = Vec::new();
    for m in &evaluation.models {
        for (measure, s) in [("r", &m.r), ("mse", &m.mse)] {
            for (split, value) in [("all", s.all), ("controversial", s.controversial), ("natural", s.natural)] {
                scores.push(ModelScoreRow {
                    model: &m.model,
                    measure,
                    split,
                    value,
                    slope: m.recalibration.as_ref().map(|r| r.slope),
                    intercept: m.recalibration.as_ref().map(|r| r.intercept),
                });
            }
        }
    }
    write_csv(&dir.join("model_scores.csv"), scores)?;

    let subjects = export.matrix.subjects();
    write_csv(
        &dir.join("subject_scores.csv"),
        evaluation.models.iter().flat_map(|m| {
            m.per_subject.iter().zip(subjects).map(|(score, subject)| SubjectScoreRow { model: &m.model, subject, score: *score })
        }),
    )?;
    write_csv(
        &dir.join("comparisons.csv"),
        evaluation.comparisons.iter().map(|c| ComparisonRow {
            model_1: &c.model_1,
            model_2: &c.model_2,
            difference: c.difference,
            p_value: c.p_value,
            p_adjusted: c.p_adjusted,
        }),
    )?;
    write_csv(
        &dir.join("noise_ceiling.csv"),
        evaluation.noise_ceiling.iter().map(|n| CeilingRow { lower: n.lower, upper: n.upper, upper_converged: n.upper_converged }),
    )?;
    write_csv(
        &dir.join("selection.csv"),
        selection.pairs.iter().map(|p| SelectionRow {
            condition: &p.condition,
            model_a: &p.model_a,
            model_b: &p.model_b,
            status: format!("{:?}", p.status).to_lowercase(),
            requested: p.requested,
            selected: p.selected.len(),
            objective: p.objective,
        }),
    )?;
    write_csv(
        &dir.join("synthesis_scores.csv"),
        synthesis.stimuli.iter().filter_map(|s| {
            s.provenance.as_ref().map(|p| SynthesisRow {
                id: &s.id,
                model_a: &p.assignment.model_a,
                model_b: &p.assignment.model_b,
                class_a: p.assignment.class_a,
                class_b: p.assignment.class_b,
                score: p.score,
                accepted: p.accepted,
                iterations: p.iterations,
                attempts: p.attempts,
            })
        }),
    )?;
    write_csv(
        &dir.join("repeat_reliability.csv"),
        export.repeats.iter().map(|r| ReliabilityRow {
            subject: &r.subject,
            session_id: &r.session_id,
            pairs: r.pairs,
            reliability: r.reliability,
        }),
    )
}
