//! Layer-by-layer comparison of two models' ranking curves, plus
//! data-only chart output (long-form CSV and a Vega-Lite spec).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metric::{CurveTarget, DenominatorMode, LayerRankingCurve, Scorer};
use crate::probe::Task;

pub const CSV_HEADER: [&str; 4] = ["layer", "percentage_a", "percentage_b", "delta"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("curves are not comparable: {0}")]
    CurveMismatch(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub layer: usize,
    pub percentage_a: f64,
    pub percentage_b: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub task: Task,
    pub scorer: Scorer,
    pub mode: DenominatorMode,
    pub has_layer0: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<CurveTarget>,
    pub model_a: String,
    pub model_b: String,
    pub rows: Vec<ComparisonRow>,
}

/// Mean deltas over the lower and upper transformer layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub task: Task,
    pub scorer: Scorer,
    pub mode: DenominatorMode,
    pub has_layer0: bool,
    pub model_a: String,
    pub model_b: String,
    pub mean_delta_layers_1_to_5: Option<f64>,
    pub mean_delta_layers_6_to_12: Option<f64>,
    pub max_abs_delta_layers_1_to_5: Option<f64>,
    pub min_delta_layers_6_to_12: Option<f64>,
}

fn mismatch<T: std::fmt::Debug>(what: &str, a: T, b: T) -> ReportError {
    ReportError::CurveMismatch(format!("{what} differs: {a:?} vs {b:?}"))
}

/// Pairs up two curves layer by layer; `delta = b - a`.
pub fn compare_curves(
    a: &LayerRankingCurve,
    b: &LayerRankingCurve,
) -> Result<ComparisonReport, ReportError> {
    if a.task != b.task {
        return Err(mismatch("task", a.task, b.task));
    }
    if a.scorer != b.scorer {
        return Err(mismatch("scorer", a.scorer, b.scorer));
    }
    if a.mode != b.mode {
        return Err(mismatch("denominator mode", a.mode, b.mode));
    }
    if a.target != b.target {
        return Err(mismatch("boundary target", a.target, b.target));
    }
    let layers_a: Vec<usize> = a.layers.iter().map(|p| p.layer).collect();
    let layers_b: Vec<usize> = b.layers.iter().map(|p| p.layer).collect();
    if layers_a != layers_b {
        return Err(mismatch("layer set", layers_a, layers_b));
    }
    let rows = a
        .layers
        .iter()
        .zip(&b.layers)
        .map(|(pa, pb)| ComparisonRow {
            layer: pa.layer,
            percentage_a: pa.percentage,
            percentage_b: pb.percentage,
            delta: pb.percentage - pa.percentage,
        })
        .collect();
    Ok(ComparisonReport {
        task: a.task,
        scorer: a.scorer,
        mode: a.mode,
        has_layer0: a.has_layer0,
        target: a.target,
        model_a: a.model_tag.clone(),
        model_b: b.model_tag.clone(),
        rows,
    })
}

impl ComparisonReport {
    fn deltas(&self, range: std::ops::RangeInclusive<usize>) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| range.contains(&r.layer))
            .map(|r| r.delta)
            .collect()
    }

    pub fn summary(&self) -> ComparisonSummary {
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let early = self.deltas(1..=5);
        let late = self.deltas(6..=12);
        ComparisonSummary {
            task: self.task,
            scorer: self.scorer,
            mode: self.mode,
            has_layer0: self.has_layer0,
            model_a: self.model_a.clone(),
            model_b: self.model_b.clone(),
            mean_delta_layers_1_to_5: mean(&early),
            mean_delta_layers_6_to_12: mean(&late),
            max_abs_delta_layers_1_to_5: early.iter().map(|d| d.abs()).reduce(f64::max),
            min_delta_layers_6_to_12: late.iter().copied().reduce(f64::min),
        }
    }

    /// `layer,percentage_a,percentage_b,delta`, one row per layer.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ReportError> {
        write_rows(out, &self.rows)
    }
}

pub fn write_rows<W: Write>(out: W, rows: &[ComparisonRow]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(CSV_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<ComparisonRow>, ReportError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(ReportError::CurveMismatch(format!(
            "unexpected CSV header {headers:?}"
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(ReportError::from))
        .collect()
}

/// One row per (curve, layer) for plotting several curves together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub model_tag: String,
    pub task: Task,
    pub scorer: Scorer,
    pub mode: DenominatorMode,
    pub target: String,
    pub layer: usize,
    pub count: u64,
    pub denominator: u64,
    pub percentage: f64,
}

pub fn long_form_rows(curves: &[LayerRankingCurve]) -> Vec<CurveRow> {
    let mut rows: Vec<CurveRow> = curves
        .iter()
        .flat_map(|c| {
            let target = match c.target {
                Some(CurveTarget::Start) => "start",
                Some(CurveTarget::End) => "end",
                Some(CurveTarget::Mean) => "mean",
                None => "",
            };
            c.layers.iter().map(move |p| CurveRow {
                model_tag: c.model_tag.clone(),
                task: c.task,
                scorer: c.scorer,
                mode: c.mode,
                target: target.to_string(),
                layer: p.layer,
                count: p.count,
                denominator: p.denominator,
                percentage: p.percentage,
            })
        })
        .collect();
    rows.sort_by(|a, b| {
        (
            a.task,
            a.scorer.to_string(),
            &a.target,
            &a.model_tag,
            a.layer,
        )
            .cmp(&(
                b.task,
                b.scorer.to_string(),
                &b.target,
                &b.model_tag,
                b.layer,
            ))
    });
    rows
}

pub fn write_long_form<W: Write>(out: W, rows: &[CurveRow]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Vega-Lite spec: one panel per task (columns) and scorer (rows), layer
/// on x, percentage on y, one line per model.
pub fn chart_spec(data_file: &str, mode: DenominatorMode) -> serde_json::Value {
    serde_json::json!({
        "$schema": "https://vega.github.io/schema/vega-lite/v5.json",
        "description": format!("Pairwise ranking percentage per layer (denominator: {mode})"),
        "data": { "url": data_file, "format": { "type": "csv" } },
        "mark": { "type": "line", "point": true },
        "encoding": {
            "x": { "field": "layer", "type": "ordinal", "title": "layer" },
            "y": { "field": "percentage", "type": "quantitative", "title": "pairwise ranking percentage" },
            "color": { "field": "model_tag", "type": "nominal" },
            "strokeDash": { "field": "target", "type": "nominal" },
            "column": { "field": "task", "type": "nominal" },
            "row": { "field": "scorer", "type": "nominal" }
        }
    })
}
