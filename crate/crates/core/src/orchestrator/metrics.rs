use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeKind, NodeSpec};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Mean absolute error in the node's native units.
    L1,
    /// Mean absolute error of angle-valued maps, in degrees.
    AngularL1,
    /// Mean Euclidean error of the first three vector components, in meters.
    PositionL2,
    /// Mean absolute error of the last three vector components, in degrees.
    OrientationL1,
    /// Mean absolute error after the node's normalization.
    NormalizedL1,
    Accuracy,
    /// Mean over classes present in the ground truth of intersection over union.
    MeanIou,
    /// Percentage of elements strictly closer to ground truth than a baseline.
    PixelsImproved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    LowerIsBetter,
    HigherIsBetter,
}

impl Metric {
    pub fn polarity(self) -> Polarity {
        match self {
            Metric::Accuracy | Metric::MeanIou | Metric::PixelsImproved => Polarity::HigherIsBetter,
            _ => Polarity::LowerIsBetter,
        }
    }

    /// True when `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self.polarity() {
            Polarity::LowerIsBetter => a < b,
            Polarity::HigherIsBetter => a > b,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::L1 => "l1",
            Metric::AngularL1 => "angular_l1",
            Metric::PositionL2 => "position_l2",
            Metric::OrientationL1 => "orientation_l1",
            Metric::NormalizedL1 => "normalized_l1",
            Metric::Accuracy => "accuracy",
            Metric::MeanIou => "miou",
            Metric::PixelsImproved => "pixels_improved",
        }
    }

    /// Column label used in summary tables.
    pub fn label(self) -> &'static str {
        match self {
            Metric::L1 => "L1",
            Metric::AngularL1 => "L1 (degrees)",
            Metric::PositionL2 => "L2 (meters)",
            Metric::OrientationL1 => "L1 (degrees)",
            Metric::NormalizedL1 => "L1 (normalized)",
            Metric::Accuracy => "Accuracy",
            Metric::MeanIou => "mIOU",
            Metric::PixelsImproved => "Pixels improved (%)",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            Metric::L1,
            Metric::AngularL1,
            Metric::PositionL2,
            Metric::OrientationL1,
            Metric::NormalizedL1,
            Metric::Accuracy,
            Metric::MeanIou,
            Metric::PixelsImproved,
        ]
        .into_iter()
        .find(|m| m.name() == name)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn unit_list(node: &NodeSpec) -> Vec<&str> {
    node.units.split(',').map(str::trim).collect()
}

fn is_pose(node: &NodeSpec) -> bool {
    matches!(node.kind, NodeKind::Vector { dimension: 6 })
        && unit_list(node) == ["meters", "meters", "meters", "degrees", "degrees", "degrees"]
}

/// The metrics reported for a node, primary metric first.
pub fn table_metrics(node: &NodeSpec) -> Vec<Metric> {
    match node.kind {
        NodeKind::ContinuousMap { .. } if node.units == "degrees" => vec![Metric::AngularL1, Metric::PixelsImproved],
        NodeKind::ContinuousMap { .. } => vec![Metric::L1, Metric::PixelsImproved],
        NodeKind::CategoricalMap { classes } if classes > 2 => {
            vec![Metric::Accuracy, Metric::MeanIou, Metric::PixelsImproved]
        }
        NodeKind::CategoricalMap { .. } => vec![Metric::Accuracy, Metric::PixelsImproved],
        NodeKind::Vector { .. } if is_pose(node) => vec![Metric::PositionL2, Metric::OrientationL1],
        NodeKind::Vector { .. } => vec![Metric::L1],
    }
}

pub fn primary_metric(node: &NodeSpec) -> Metric {
    table_metrics(node)[0]
}

/// Metric used to rank paths and ensembles during graph construction.
pub fn selection_metric(node: &NodeSpec) -> Metric {
    match node.kind {
        NodeKind::Vector { .. } => Metric::NormalizedL1,
        _ => primary_metric(node),
    }
}

fn check_units(metric: Metric, node: &NodeSpec) -> Result<()> {
    let ok = match metric {
        Metric::AngularL1 => node.kind.is_map() && !node.kind.is_categorical() && node.units == "degrees",
        Metric::PositionL2 | Metric::OrientationL1 => is_pose(node),
        Metric::L1 | Metric::NormalizedL1 => !node.kind.is_categorical(),
        Metric::Accuracy | Metric::MeanIou => node.kind.is_categorical(),
        Metric::PixelsImproved => node.kind.is_map(),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::UnitMismatch(format!(
            "metric {metric} does not apply to `{}` ({:?}, units `{}`)",
            node.name, node.kind, node.units
        )))
    }
}

/// A metric over a whole set of (prediction, ground truth) pairs. Errors are
/// averaged over every element of every pair; position error per pair.
pub fn compute_metric(metric: Metric, node: &NodeSpec, pairs: &[(&Tensor, &Tensor)]) -> Result<f64> {
    check_units(metric, node)?;
    if pairs.is_empty() {
        return Err(Error::invalid("metric needs at least one prediction"));
    }
    for (p, g) in pairs {
        p.ensure_same_shape(g)?;
    }
    match metric {
        Metric::L1 | Metric::AngularL1 => mean_abs(pairs, |_, v| v as f64),
        Metric::NormalizedL1 => {
            let w = node.kind.stored_width();
            mean_abs(pairs, |i, v| node.normalize(i % w, v) as f64)
        }
        Metric::PositionL2 => {
            let mut total = 0.0;
            for (p, g) in pairs {
                let (p, g) = (p.f32_values()?, g.f32_values()?);
                total += (0..3).map(|i| (p[i] as f64 - g[i] as f64).powi(2)).sum::<f64>().sqrt();
            }
            Ok(total / pairs.len() as f64)
        }
        Metric::OrientationL1 => {
            let mut total = 0.0;
            for (p, g) in pairs {
                let (p, g) = (p.f32_values()?, g.f32_values()?);
                total += (3..6).map(|i| (p[i] as f64 - g[i] as f64).abs()).sum::<f64>();
            }
            Ok(total / (3 * pairs.len()) as f64)
        }
        Metric::Accuracy => {
            let (mut hit, mut n) = (0usize, 0usize);
            for (p, g) in pairs {
                let (p, g) = (p.label_values()?, g.label_values()?);
                hit += p.iter().zip(g).filter(|(a, b)| a == b).count();
                n += p.len();
            }
            Ok(hit as f64 / n as f64)
        }
        Metric::MeanIou => {
            let classes = node.kind.feature_width();
            let mut inter = vec![0u64; classes];
            let mut union = vec![0u64; classes];
            let mut present = vec![false; classes];
            for (p, g) in pairs {
                let (p, g) = (p.label_values()?, g.label_values()?);
                for (&a, &b) in p.iter().zip(g) {
                    let (a, b) = (a as usize, b as usize);
                    if a >= classes || b >= classes {
                        return Err(Error::invalid("label outside the node's classes"));
                    }
                    present[b] = true;
                    if a == b {
                        inter[a] += 1;
                        union[a] += 1;
                    } else {
                        union[a] += 1;
                        union[b] += 1;
                    }
                }
            }
            let ious: Vec<f64> = (0..classes)
                .filter(|&c| present[c])
                .map(|c| inter[c] as f64 / union[c] as f64)
                .collect();
            Ok(ious.iter().sum::<f64>() / ious.len() as f64)
        }
        Metric::PixelsImproved => Err(Error::invalid("pixels improved needs a baseline; use pixels_improved")),
    }
}

fn mean_abs(pairs: &[(&Tensor, &Tensor)], f: impl Fn(usize, f32) -> f64) -> Result<f64> {
    let (mut total, mut n) = (0.0f64, 0usize);
    for (p, g) in pairs {
        let (p, g) = (p.f32_values()?, g.f32_values()?);
        for (i, (&a, &b)) in p.iter().zip(g).enumerate() {
            total += (f(i, a) - f(i, b)).abs();
        }
        n += p.len();
    }
    Ok(total / n as f64)
}

/// Percentage of elements where `new` is strictly closer to the ground
/// truth than `baseline` (continuous), or correct where the baseline is
/// wrong (categorical).
pub fn pixels_improved(triples: &[(&Tensor, &Tensor, &Tensor)]) -> Result<f64> {
    if triples.is_empty() {
        return Err(Error::invalid("pixels improved needs at least one element"));
    }
    let (mut better, mut n) = (0usize, 0usize);
    for (new, base, gt) in triples {
        new.ensure_same_shape(gt)?;
        base.ensure_same_shape(gt)?;
        match (new.as_labels(), base.as_labels(), gt.as_labels()) {
            (Some(a), Some(b), Some(g)) => {
                better += (0..g.len()).filter(|&i| a[i] == g[i] && b[i] != g[i]).count();
            }
            (None, None, None) => {
                let (a, b, g) = (new.f32_values()?, base.f32_values()?, gt.f32_values()?);
                better += (0..g.len()).filter(|&i| (a[i] - g[i]).abs() < (b[i] - g[i]).abs()).count();
            }
            _ => return Err(Error::invalid("pixels improved needs matching dtypes")),
        }
        n += gt.len();
    }
    Ok(100.0 * better as f64 / n as f64)
}
