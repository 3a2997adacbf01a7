//! IoU@0.5 accuracy, overall and by difficulty and area bin, plus report
//! output.

use std::collections::BTreeMap;
use std::fmt::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{Difficulty, GroundingSample};
use crate::error::{shape_err, Error, Result};
use crate::geometry::{area_bin, iou, AreaBin, BBox};
use crate::kevili::{Kevili, KeviliInput};
use crate::levilm::{select_prediction, Levilm, Prepared, Strategy, TextVariant};

pub const IOU_THRESHOLD: f64 = 0.5;

/// Criteria tag of single-box models.
pub const SINGLE_BOX: &str = "-";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl Cell {
    fn new(correct: usize, total: usize) -> Self {
        let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        Cell {
            correct,
            total,
            accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// e.g. `KeViLI` or `LeViLM (FT)`.
    pub method: String,
    pub text: TextVariant,
    /// `H`, `R`, `U` or `-`.
    pub criteria: String,
    pub overall: Cell,
    pub difficulty: BTreeMap<String, Cell>,
    pub area: BTreeMap<String, Cell>,
}

impl EvalReport {
    pub fn difficulty(&self, d: Difficulty) -> Cell {
        self.difficulty[d.name()]
    }

    pub fn area(&self, a: AreaBin) -> Cell {
        self.area[a.name()]
    }
}

/// Names a report row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportMeta {
    pub method: String,
    pub text: TextVariant,
    pub criteria: String,
}

pub fn is_correct(prediction: Option<&BBox>, gt: &BBox) -> bool {
    prediction.is_some_and(|p| iou(p, gt) >= IOU_THRESHOLD)
}

/// Scores `(sample, prediction)` pairs; a missing prediction is wrong.
pub fn score<'a>(
    pairs: impl IntoIterator<Item = (&'a GroundingSample, Option<BBox>)>,
    meta: ReportMeta,
) -> Result<EvalReport> {
    let mut overall = (0, 0);
    let mut diff: BTreeMap<&str, (usize, usize)> = Difficulty::ALL.iter().map(|d| (d.name(), (0, 0))).collect();
    let mut area: BTreeMap<&str, (usize, usize)> = AreaBin::ALL.iter().map(|a| (a.name(), (0, 0))).collect();
    for (s, pred) in pairs {
        let d = s
            .difficulty
            .ok_or_else(|| Error::Config(format!("sample {} has no difficulty label", s.id)))?;
        let ok = is_correct(pred.as_ref(), &s.bbox) as usize;
        for cell in [
            &mut overall,
            diff.get_mut(d.name()).expect("all levels"),
            area.get_mut(area_bin(&s.bbox).name()).expect("all bins"),
        ] {
            cell.0 += ok;
            cell.1 += 1;
        }
    }
    if overall.1 == 0 {
        return Err(Error::Empty("evaluation set"));
    }
    let cells = |m: BTreeMap<&str, (usize, usize)>| {
        m.into_iter()
            .map(|(k, (c, t))| (k.to_string(), Cell::new(c, t)))
            .collect()
    };
    Ok(EvalReport {
        method: meta.method,
        text: meta.text,
        criteria: meta.criteria,
        overall: Cell::new(overall.0, overall.1),
        difficulty: cells(diff),
        area: cells(area),
    })
}

/// Head-entity probabilities of every prepared sample, in order.
pub fn levilm_probs(model: &Levilm, prepared: &[Prepared]) -> Result<Vec<Vec<f64>>> {
    prepared.par_iter().map(|p| model.head_probs(p)).collect()
}

/// Selected boxes under `strategy`; `draws` seeded repetitions per sample
/// (only R differs between draws).
pub fn select_all(
    prepared: &[Prepared],
    probs: &[Vec<f64>],
    strategy: Strategy,
    seed: u64,
    draws: usize,
) -> Result<Vec<Vec<Option<BBox>>>> {
    if prepared.len() != probs.len() {
        return Err(shape_err("select_all", "one probability vector per sample required"));
    }
    let draws = if strategy == Strategy::R { draws.max(1) } else { 1 };
    prepared
        .iter()
        .zip(probs)
        .enumerate()
        .map(|(i, (p, pr))| {
            (0..draws)
                .map(|d| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream((i * draws + d) as u64);
                    let pick = select_prediction(&p.regions, pr, strategy, Some(&p.gt), &mut rng)?;
                    Ok(pick.map(|k| p.regions[k]))
                })
                .collect()
        })
        .collect()
}

/// Report for one strategy from precomputed probabilities.
pub fn evaluate_probs(
    samples: &[GroundingSample],
    prepared: &[Prepared],
    probs: &[Vec<f64>],
    strategy: Strategy,
    seed: u64,
    draws: usize,
    method: &str,
    text: TextVariant,
) -> Result<EvalReport> {
    if samples.len() != prepared.len() {
        return Err(shape_err("evaluate", "samples and prepared inputs differ in length"));
    }
    let picks = select_all(prepared, probs, strategy, seed, draws)?;
    let pairs = samples
        .iter()
        .zip(picks)
        .flat_map(|(s, ps)| ps.into_iter().map(move |p| (s, p)));
    score(
        pairs,
        ReportMeta {
            method: method.into(),
            text,
            criteria: strategy.name().into(),
        },
    )
}

pub fn evaluate_levilm(
    model: &Levilm,
    samples: &[GroundingSample],
    prepared: &[Prepared],
    strategy: Strategy,
    seed: u64,
    method: &str,
    text: TextVariant,
) -> Result<EvalReport> {
    let probs = levilm_probs(model, prepared)?;
    evaluate_probs(samples, prepared, &probs, strategy, seed, 1, method, text)
}

/// Single-box evaluation, recorded with criteria `-`.
pub fn evaluate_kevili(
    model: &Kevili,
    samples: &[GroundingSample],
    inputs: &[KeviliInput],
    text: TextVariant,
) -> Result<EvalReport> {
    if samples.len() != inputs.len() {
        return Err(shape_err("evaluate", "samples and inputs differ in length"));
    }
    let preds: Vec<BBox> = inputs.par_iter().map(|x| model.predict(x)).collect::<Result<_>>()?;
    score(
        samples.iter().zip(preds.into_iter().map(Some)),
        ReportMeta {
            method: "KeViLI".into(),
            text,
            criteria: SINGLE_BOX.into(),
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Table,
}

pub fn emit_report(reports: &[EvalReport], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(reports)? + "\n"),
        ReportFormat::Table => Ok(report_table(reports)),
    }
}

pub fn parse_reports(json: &str) -> Result<Vec<EvalReport>> {
    Ok(serde_json::from_str(json)?)
}

const HEADERS: [&str; 11] = [
    "Method", "Text", "Criteria", "ID", "Overall", "Acc_de", "Acc_dm", "Acc_dh", "Acc_as", "Acc_am", "Acc_al",
];

/// One aligned row per report, accuracies in percent.
pub fn report_table(reports: &[EvalReport]) -> String {
    let pct = |c: Cell| format!("{:.2}", 100.0 * c.accuracy);
    let rows: Vec<Vec<String>> = reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = vec![
                r.method.clone(),
                r.text.name().into(),
                r.criteria.clone(),
                (i + 1).to_string(),
            ];
            row.push(pct(r.overall));
            row.extend(Difficulty::ALL.iter().map(|&d| pct(r.difficulty(d))));
            row.extend(AreaBin::ALL.iter().map(|&a| pct(r.area(a))));
            row
        })
        .collect();
    let widths: Vec<usize> = (0..HEADERS.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].len())
                .chain([HEADERS[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (c, v) in cells.iter().enumerate() {
            if c > 0 {
                s.push_str("  ");
            }
            if c < 3 {
                let _ = write!(s, "{v:<w$}", w = widths[c]);
            } else {
                let _ = write!(s, "{v:>w$}", w = widths[c]);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(HEADERS.to_vec());
    for r in &rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}
