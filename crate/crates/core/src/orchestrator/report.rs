use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeKind, NodeSpec};

use super::evaluate::{MetricRow, ENSEMBLE};
use super::metrics::{table_metrics, Metric};
use super::pipeline::IterationReport;

/// Digits kept in summary values.
pub const SUMMARY_DIGITS: usize = 6;

/// Rounds to `digits` significant digits, going through the decimal
/// representation so the result prints without float noise.
pub fn round_sig(v: f64, digits: usize) -> f64 {
    if !v.is_finite() || v == 0.0 || digits == 0 {
        return v;
    }
    format!("{:.*e}", digits - 1, v).parse().unwrap_or(v)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// One row of the pretraining report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainRow {
    pub edge: String,
    /// Input node names joined by `+`.
    pub inputs: String,
    pub output: String,
    pub metric: Metric,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub representation: String,
    pub metric: String,
    /// One value per column; `None` where the column has no such metric.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionRow {
    pub iteration: usize,
    pub node: String,
    pub paths: usize,
    pub before: f64,
    pub after: f64,
    pub reduction_percent: Option<f64>,
}

/// Evaluation results laid out with one row per (representation, metric)
/// and columns for the first-generation edge, then for each iteration the
/// teacher ensemble and the distilled edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub columns: Vec<String>,
    pub rows: Vec<SummaryRow>,
    #[serde(default)]
    pub dispersion: Vec<DispersionRow>,
}

/// Display name of a representation.
pub fn representation_label(node: &str) -> String {
    match node {
        "depth" => "Depth".into(),
        "normals_camera" => "Surface Normals (C)".into(),
        "normals_world" => "Surface Normals (W)".into(),
        "segmentation" => "Semantic Segmentation".into(),
        "wireframe" => "Wireframe".into(),
        "halftone" => "Halftone".into(),
        "pose" => "Pose".into(),
        other => other.into(),
    }
}

fn row_label(node: &NodeSpec, metric: Metric) -> String {
    match (node.kind, metric) {
        (NodeKind::Vector { .. }, Metric::PositionL2) => "Position".into(),
        (NodeKind::Vector { .. }, Metric::OrientationL1) => "Orientation".into(),
        _ => representation_label(&node.name),
    }
}

pub fn summary_columns(iterations: usize) -> Vec<String> {
    let mut c = vec!["Iter 0 EdgeNet".to_string()];
    for k in 1..=iterations {
        c.push(format!("Iter {k} NGC"));
        c.push(format!("Iter {k} Distil. EdgeNet"));
    }
    c
}

fn lookup(rows: &[MetricRow], iteration: usize, node: &str, ensemble: bool, metric: Metric) -> Option<f64> {
    rows.iter()
        .find(|r| r.iteration == iteration && r.node == node && (r.edge == ENSEMBLE) == ensemble && r.metric == metric)
        .map(|r| round_sig(r.value, SUMMARY_DIGITS))
}

impl SummaryTable {
    /// Arranges metric rows for `iterations` iterations. The ensemble column
    /// of iteration `k` is the teacher that trained generation `k`, so it
    /// reads the ensemble rows of generation `k - 1`.
    pub fn from_rows(nodes: &[NodeSpec], rows: &[MetricRow], iterations: usize) -> Self {
        let mut out = Vec::new();
        for node in nodes.iter().filter(|n| !n.sensor) {
            if !rows.iter().any(|r| r.node == node.name) {
                continue;
            }
            for metric in table_metrics(node) {
                let mut values = vec![lookup(rows, 0, &node.name, false, metric)];
                for k in 1..=iterations {
                    values.push(lookup(rows, k - 1, &node.name, true, metric));
                    values.push(lookup(rows, k, &node.name, false, metric));
                }
                out.push(SummaryRow {
                    representation: row_label(node, metric),
                    metric: metric.label().to_string(),
                    values,
                });
            }
        }
        SummaryTable {
            columns: summary_columns(iterations),
            rows: out,
            dispersion: Vec::new(),
        }
    }

    pub fn with_dispersion(mut self, reports: &[IterationReport]) -> Self {
        self.dispersion = reports
            .iter()
            .flat_map(|r| {
                r.nodes.iter().map(move |n| DispersionRow {
                    iteration: r.iteration,
                    node: n.name.clone(),
                    paths: n.paths,
                    before: round_sig(n.before, SUMMARY_DIGITS),
                    after: round_sig(n.after, SUMMARY_DIGITS),
                    reduction_percent: n.reduction_percent.map(|v| round_sig(v, SUMMARY_DIGITS)),
                })
            })
            .collect();
        self
    }

    /// Plain-text table; missing values print as `-`.
    pub fn render(&self) -> String {
        let mut header = vec!["Representation".to_string(), "Metric".to_string()];
        header.extend(self.columns.iter().cloned());
        let mut lines: Vec<Vec<String>> = vec![header];
        for r in &self.rows {
            let mut l = vec![r.representation.clone(), r.metric.clone()];
            l.extend(r.values.iter().map(|v| v.map_or_else(|| "-".to_string(), |x| x.to_string())));
            lines.push(l);
        }
        let mut text = render_grid(&lines);
        if !self.dispersion.is_empty() {
            let mut d = vec![vec![
                "Iteration".to_string(),
                "Node".to_string(),
                "Paths".to_string(),
                "Dispersion before".to_string(),
                "Dispersion after".to_string(),
                "Reduction (%)".to_string(),
            ]];
            for r in &self.dispersion {
                d.push(vec![
                    r.iteration.to_string(),
                    r.node.clone(),
                    r.paths.to_string(),
                    r.before.to_string(),
                    r.after.to_string(),
                    r.reduction_percent.map_or_else(|| "-".to_string(), |x| x.to_string()),
                ]);
            }
            text.push('\n');
            text.push_str(&render_grid(&d));
        }
        text
    }
}

fn render_grid(lines: &[Vec<String>]) -> String {
    let cols = lines.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| lines.iter().filter_map(|l| l.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, l) in lines.iter().enumerate() {
        let cells: Vec<String> = l.iter().zip(&widths).map(|(s, &w)| format!("{s:<w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  "));
        }
    }
    out
}
