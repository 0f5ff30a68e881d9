use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeKind {
    ContinuousMap { channels: usize },
    CategoricalMap { classes: usize },
    Vector { dimension: usize },
}

impl NodeKind {
    pub fn is_map(self) -> bool {
        !matches!(self, NodeKind::Vector { .. })
    }

    pub fn is_categorical(self) -> bool {
        matches!(self, NodeKind::CategoricalMap { .. })
    }

    /// Width of this node's per-pixel (or per-vector) feature encoding:
    /// channels, one-hot classes, or vector dimension.
    pub fn feature_width(self) -> usize {
        match self {
            NodeKind::ContinuousMap { channels } => channels,
            NodeKind::CategoricalMap { classes } => classes,
            NodeKind::Vector { dimension } => dimension,
        }
    }

    /// Number of values stored per pixel (maps) or in total (vectors).
    pub fn stored_width(self) -> usize {
        match self {
            NodeKind::ContinuousMap { channels } => channels,
            NodeKind::CategoricalMap { .. } => 1,
            NodeKind::Vector { dimension } => dimension,
        }
    }
}

/// Per-channel affine map `(x - offset) / scale` applied before a value
/// enters or leaves a learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub offset: Vec<f32>,
    pub scale: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub name: String,
    #[serde(flatten)]
    pub kind: NodeKind,
    /// Free text such as "meters" or "degrees".
    pub units: String,
    pub sensor: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
}

impl NodeSpec {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            NodeKind::CategoricalMap { classes } if classes < 2 => {
                return Err(Error::invalid(format!(
                    "categorical node `{}` needs at least two classes",
                    self.name
                )))
            }
            NodeKind::ContinuousMap { channels: 0 } | NodeKind::Vector { dimension: 0 } => {
                return Err(Error::invalid(format!("node `{}` has zero width", self.name)))
            }
            _ => {}
        }
        if let Some(n) = &self.normalization {
            let w = self.kind.stored_width();
            if self.kind.is_categorical() || n.offset.len() != w || n.scale.len() != w {
                return Err(Error::invalid(format!(
                    "normalization of `{}` must have one entry per channel",
                    self.name
                )));
            }
            if n.scale.iter().any(|&s| !(s.is_finite() && s != 0.0)) {
                return Err(Error::invalid(format!("zero normalization scale on `{}`", self.name)));
            }
        }
        Ok(())
    }

    /// Checks that `layer` has the dtype, rank and range this node declares.
    pub fn check_layer(&self, layer: &Tensor) -> Result<()> {
        let shape = layer.shape();
        let ok = match self.kind {
            NodeKind::ContinuousMap { channels } => {
                layer.dtype() == DType::F32 && shape.len() == 3 && shape[2] == channels
            }
            NodeKind::CategoricalMap { classes } => {
                layer.dtype() == DType::Label
                    && shape.len() == 2
                    && layer.max_label().map_or(true, |m| (m as usize) < classes)
            }
            NodeKind::Vector { dimension } => {
                layer.dtype() == DType::F32 && shape.len() == 1 && shape[0] == dimension
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "layer {:?} {:?} does not fit node `{}` ({:?})",
                layer.dtype(),
                shape,
                self.name,
                self.kind
            )))
        }
    }

    pub fn normalize(&self, channel: usize, value: f32) -> f32 {
        match &self.normalization {
            Some(n) => (value - n.offset[channel]) / n.scale[channel],
            None => value,
        }
    }

    pub fn denormalize(&self, channel: usize, value: f32) -> f32 {
        match &self.normalization {
            Some(n) => value * n.scale[channel] + n.offset[channel],
            None => value,
        }
    }
}

/// Representation layers of one scene keyed by node.
pub type LayerSet = BTreeMap<NodeId, Tensor>;
