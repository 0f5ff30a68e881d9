use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{Activation, DenseModel, Head, ModelSpec, TrainTargets};
use crate::tensor::Tensor;

use super::node::{NodeId, NodeKind, NodeSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub u32);

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

/// How clique layers become learner input rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Encoding {
    /// Map to map: the `(2r+1)^2` neighbourhood of each pixel predicts that pixel.
    Patch { radius: usize },
    /// Maps to vector: block means over a `grid x grid` partition.
    Pooled { grid: usize },
    /// Vectors to vector.
    Dense,
}

impl Encoding {
    pub fn default_for(inputs: &[&NodeSpec], output: &NodeSpec) -> Result<Self> {
        let maps = inputs.iter().filter(|n| n.kind.is_map()).count();
        match (maps, output.kind.is_map()) {
            (m, true) if m == inputs.len() => Ok(Encoding::Patch { radius: 1 }),
            (m, false) if m == inputs.len() => Ok(Encoding::Pooled { grid: 4 }),
            (0, false) => Ok(Encoding::Dense),
            _ => Err(Error::invalid(format!(
                "no encoding maps this clique onto `{}`",
                output.name
            ))),
        }
    }

    /// Input width of the learner for this clique, after checking the clique
    /// and output kinds suit the encoding.
    pub fn input_width(self, inputs: &[&NodeSpec], output: &NodeSpec) -> Result<usize> {
        let all_maps = inputs.iter().all(|n| n.kind.is_map());
        let ok = match self {
            Encoding::Patch { .. } => all_maps && output.kind.is_map(),
            Encoding::Pooled { grid } => all_maps && !output.kind.is_map() && grid > 0,
            Encoding::Dense => inputs.iter().all(|n| !n.kind.is_map()) && !output.kind.is_map(),
        };
        if !ok || inputs.is_empty() {
            return Err(Error::invalid(format!(
                "encoding {self:?} does not fit clique {:?} -> `{}`",
                inputs.iter().map(|n| n.name.as_str()).collect::<Vec<_>>(),
                output.name
            )));
        }
        let per_input: usize = inputs.iter().map(|n| n.kind.feature_width()).sum();
        Ok(match self {
            Encoding::Patch { radius } => per_input * (2 * radius + 1).pow(2),
            Encoding::Pooled { grid } => per_input * grid * grid,
            Encoding::Dense => per_input,
        })
    }
}

/// Learner hyperparameters used when an edge is created.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            hidden: vec![16],
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperEdge {
    pub id: EdgeId,
    pub inputs: Vec<NodeId>,
    pub output: NodeId,
    pub encoding: Encoding,
    pub model: DenseModel,
}

/// Output width and head of the learner that predicts `node`.
pub fn output_head(node: &NodeSpec) -> (usize, Head) {
    match node.kind {
        NodeKind::CategoricalMap { classes } => (classes, Head::Classification),
        k => (k.feature_width(), Head::Regression),
    }
}

impl HyperEdge {
    /// Creates an edge with a freshly initialized learner.
    pub fn new(
        id: EdgeId,
        inputs: &[&NodeSpec],
        output: &NodeSpec,
        encoding: Encoding,
        learner: &LearnerConfig,
        seed: u64,
    ) -> Result<Self> {
        let input_dim = encoding.input_width(inputs, output)?;
        let (output_dim, head) = output_head(output);
        let model = DenseModel::new(ModelSpec {
            input_dim,
            hidden: learner.hidden.clone(),
            output_dim,
            activation: learner.activation,
            head,
            seed,
        })?;
        Ok(HyperEdge {
            id,
            inputs: inputs.iter().map(|n| n.id).collect(),
            output: output.id,
            encoding,
            model,
        })
    }

    /// Learner input rows for the given clique layers. Map outputs give one
    /// row per pixel in `pixels` (all pixels when `None`); vector outputs
    /// give a single row.
    pub fn features(&self, inputs: &[(&NodeSpec, &Tensor)], pixels: Option<&[usize]>) -> Result<Vec<f32>> {
        encode_features(self.encoding, inputs, pixels)
    }

    /// Predicts the output layer: denormalized values, argmax labels or a vector.
    pub fn predict(&self, out_node: &NodeSpec, inputs: &[(&NodeSpec, &Tensor)]) -> Result<Tensor> {
        let rows = self.features(inputs, None)?;
        let mut raw = Vec::new();
        self.model.forward_rows(&rows, &mut raw);
        decode_output(out_node, &raw, map_extent(inputs))
    }
}

fn map_extent(inputs: &[(&NodeSpec, &Tensor)]) -> Option<(usize, usize)> {
    inputs
        .iter()
        .find(|(n, _)| n.kind.is_map())
        .map(|(_, t)| (t.shape()[0], t.shape()[1]))
}

/// Turns raw learner outputs into a layer of `node`.
pub fn decode_output(node: &NodeSpec, raw: &[f32], extent: Option<(usize, usize)>) -> Result<Tensor> {
    match node.kind {
        NodeKind::ContinuousMap { channels } => {
            let (h, w) = extent.ok_or_else(|| Error::invalid("map output needs a map input"))?;
            let values = raw
                .iter()
                .enumerate()
                .map(|(i, &v)| node.denormalize(i % channels, v))
                .collect();
            Tensor::from_f32(vec![h, w, channels], values)
        }
        NodeKind::CategoricalMap { classes } => {
            let (h, w) = extent.ok_or_else(|| Error::invalid("map output needs a map input"))?;
            let labels = raw.chunks_exact(classes).map(argmax).collect();
            Tensor::from_labels(vec![h, w], labels)
        }
        NodeKind::Vector { dimension } => {
            let values = raw.iter().enumerate().map(|(i, &v)| node.denormalize(i, v)).collect();
            Tensor::from_f32(vec![dimension], values)
        }
    }
}

fn argmax(row: &[f32]) -> u16 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u16
}

/// Per-pixel feature vectors of one map: normalized channels or one-hot labels.
fn pixel_features(node: &NodeSpec, layer: &Tensor) -> Result<Vec<f32>> {
    node.check_layer(layer)?;
    Ok(match node.kind {
        NodeKind::ContinuousMap { channels } => layer
            .f32_values()?
            .iter()
            .enumerate()
            .map(|(i, &v)| node.normalize(i % channels, v))
            .collect(),
        NodeKind::CategoricalMap { classes } => {
            let labels = layer.label_values()?;
            let mut out = vec![0.0; labels.len() * classes];
            for (i, &l) in labels.iter().enumerate() {
                out[i * classes + l as usize] = 1.0;
            }
            out
        }
        NodeKind::Vector { .. } => unreachable!("vectors have no pixels"),
    })
}

fn encode_features(encoding: Encoding, inputs: &[(&NodeSpec, &Tensor)], pixels: Option<&[usize]>) -> Result<Vec<f32>> {
    if inputs.is_empty() {
        return Err(Error::invalid("edge has no inputs"));
    }
    match encoding {
        Encoding::Dense => {
            let mut row = Vec::new();
            for (node, t) in inputs {
                node.check_layer(t)?;
                row.extend(t.f32_values()?.iter().enumerate().map(|(i, &v)| node.normalize(i, v)));
            }
            Ok(row)
        }
        Encoding::Patch { radius } => {
            let (h, w) = map_extent(inputs).ok_or_else(|| Error::invalid("patch encoding needs maps"))?;
            let feats = map_features(inputs, h, w)?;
            let r = radius as i64;
            let width: usize = inputs.iter().map(|(n, _)| n.kind.feature_width()).sum::<usize>() * (2 * radius + 1).pow(2);
            let all: Vec<usize>;
            let pixels = match pixels {
                Some(p) => p,
                None => {
                    all = (0..h * w).collect();
                    &all
                }
            };
            let mut out = Vec::with_capacity(pixels.len() * width);
            for &p in pixels {
                if p >= h * w {
                    return Err(Error::invalid(format!("pixel {p} outside {h}x{w} map")));
                }
                let (y, x) = ((p / w) as i64, (p % w) as i64);
                for (f, fw) in &feats {
                    for dy in -r..=r {
                        let yy = (y + dy).clamp(0, h as i64 - 1) as usize;
                        for dx in -r..=r {
                            let xx = (x + dx).clamp(0, w as i64 - 1) as usize;
                            let at = (yy * w + xx) * fw;
                            out.extend_from_slice(&f[at..at + fw]);
                        }
                    }
                }
            }
            Ok(out)
        }
        Encoding::Pooled { grid } => {
            let (h, w) = map_extent(inputs).ok_or_else(|| Error::invalid("pooled encoding needs maps"))?;
            if grid > h || grid > w {
                return Err(Error::invalid(format!("pooling grid {grid} exceeds map {h}x{w}")));
            }
            let feats = map_features(inputs, h, w)?;
            let mut out = Vec::new();
            for (f, fw) in &feats {
                for by in 0..grid {
                    let (y0, y1) = (by * h / grid, (by + 1) * h / grid);
                    for bx in 0..grid {
                        let (x0, x1) = (bx * w / grid, (bx + 1) * w / grid);
                        let mut acc = vec![0.0f64; *fw];
                        for y in y0..y1 {
                            for x in x0..x1 {
                                let at = (y * w + x) * fw;
                                for (a, &v) in acc.iter_mut().zip(&f[at..at + fw]) {
                                    *a += v as f64;
                                }
                            }
                        }
                        let n = ((y1 - y0) * (x1 - x0)) as f64;
                        out.extend(acc.iter().map(|a| (a / n) as f32));
                    }
                }
            }
            Ok(out)
        }
    }
}

fn map_features(inputs: &[(&NodeSpec, &Tensor)], h: usize, w: usize) -> Result<Vec<(Vec<f32>, usize)>> {
    inputs
        .iter()
        .map(|(node, t)| {
            if !node.kind.is_map() || t.shape()[0] != h || t.shape()[1] != w {
                return Err(Error::ShapeMismatch {
                    expected: vec![h, w],
                    got: t.shape().to_vec(),
                });
            }
            Ok((pixel_features(node, t)?, node.kind.feature_width()))
        })
        .collect()
}

/// Training targets of `node` taken from `layer` at `pixels` (all when `None`).
pub fn encode_targets(node: &NodeSpec, layer: &Tensor, pixels: Option<&[usize]>) -> Result<TrainTargets> {
    node.check_layer(layer)?;
    let width = node.kind.stored_width();
    let rows: Vec<usize> = match (node.kind.is_map(), pixels) {
        (false, _) => vec![0],
        (true, Some(p)) => p.to_vec(),
        (true, None) => (0..layer.len() / width).collect(),
    };
    Ok(match node.kind {
        NodeKind::CategoricalMap { .. } => {
            let l = layer.label_values()?;
            TrainTargets::Labels(rows.iter().map(|&p| l[p]).collect())
        }
        _ => {
            let v = layer.f32_values()?;
            let mut out = Vec::with_capacity(rows.len() * width);
            for &p in &rows {
                for c in 0..width {
                    out.push(node.normalize(c, v[p * width + c]));
                }
            }
            TrainTargets::Values(out)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Normalization;

    fn cont(id: u32, channels: usize) -> NodeSpec {
        NodeSpec {
            id: NodeId(id),
            name: format!("c{id}"),
            kind: NodeKind::ContinuousMap { channels },
            units: "u".into(),
            sensor: id == 0,
            normalization: Some(Normalization {
                offset: vec![1.0; channels],
                scale: vec![2.0; channels],
            }),
        }
    }

    fn cat(id: u32, classes: usize) -> NodeSpec {
        NodeSpec {
            id: NodeId(id),
            name: format!("k{id}"),
            kind: NodeKind::CategoricalMap { classes },
            units: "class".into(),
            sensor: false,
            normalization: None,
        }
    }

    #[test]
    fn patch_rows_clamp_at_the_border() {
        let a = cont(0, 1);
        let t = Tensor::from_f32(vec![2, 2, 1], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let rows = encode_features(Encoding::Patch { radius: 1 }, &[(&a, &t)], Some(&[0])).unwrap();
        // normalized: 0, 1, 2, 3; pixel 0's window clamps to the 2x2 map.
        assert_eq!(rows, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 2.0, 2.0, 3.0]);
    }

    #[test]
    fn categorical_inputs_are_one_hot_and_pooled() {
        let k = cat(1, 3);
        let t = Tensor::from_labels(vec![2, 2], vec![0, 2, 2, 2]).unwrap();
        let rows = encode_features(Encoding::Pooled { grid: 1 }, &[(&k, &t)], None).unwrap();
        assert_eq!(rows, vec![0.25, 0.0, 0.75]);
        let rows = encode_features(Encoding::Patch { radius: 0 }, &[(&k, &t)], Some(&[1])).unwrap();
        assert_eq!(rows, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn predictions_have_the_output_layout() {
        let a = cont(0, 2);
        let k = cat(1, 4);
        let e = HyperEdge::new(EdgeId(0), &[&a], &k, Encoding::Patch { radius: 1 }, &LearnerConfig::default(), 3).unwrap();
        assert_eq!(e.model.spec().input_dim, 18);
        let t = Tensor::from_f32(vec![3, 5, 2], (0..30).map(|v| v as f32 / 10.0).collect()).unwrap();
        let out = e.predict(&k, &[(&a, &t)]).unwrap();
        assert_eq!(out.shape(), &[3, 5]);
        k.check_layer(&out).unwrap();
    }

    #[test]
    fn targets_are_normalized() {
        let a = cont(0, 1);
        let t = Tensor::from_f32(vec![1, 2, 1], vec![3.0, 5.0]).unwrap();
        assert_eq!(encode_targets(&a, &t, Some(&[1])).unwrap(), TrainTargets::Values(vec![2.0]));
    }

    #[test]
    fn unsuitable_encodings_are_rejected() {
        let a = cont(0, 1);
        let v = NodeSpec {
            kind: NodeKind::Vector { dimension: 2 },
            normalization: None,
            ..cont(2, 1)
        };
        assert!(Encoding::Patch { radius: 1 }.input_width(&[&a], &v).is_err());
        assert!(Encoding::Dense.input_width(&[&a], &v).is_err());
        assert_eq!(Encoding::default_for(&[&a], &v).unwrap(), Encoding::Pooled { grid: 4 });
        assert!(Encoding::default_for(&[&v], &a).is_err());
    }
}
