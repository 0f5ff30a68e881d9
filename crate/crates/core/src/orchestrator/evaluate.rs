use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{consensus_for, Graph, HyperEdge, IntermediateMode, LayerSet, NodeId, NodeSpec, PathEvaluator};
use crate::tensor::Tensor;

use super::metrics::{compute_metric, pixels_improved, table_metrics, Metric};

/// `edge` value of rows that score a whole ensemble.
pub const ENSEMBLE: &str = "ensemble";

/// One line of the metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iteration: usize,
    pub node: String,
    /// `ensemble`, or the id of the direct edge that was scored.
    pub edge: String,
    pub metric: Metric,
    pub value: f64,
}

/// Per-scene predictions of each node.
pub type PredictionSet = BTreeMap<NodeId, Vec<Tensor>>;

/// The lowest-numbered edge feeding `target` from sensors alone.
pub fn direct_edge(graph: &Graph, target: NodeId) -> Option<&HyperEdge> {
    graph
        .edges()
        .iter()
        .filter(|e| e.output == target && e.inputs.iter().all(|&i| graph.is_sensor(i)))
        .min_by_key(|e| e.id)
}

fn sensor_inputs<'a>(graph: &'a Graph, edge: &HyperEdge, scene: &'a LayerSet) -> Result<Vec<(&'a NodeSpec, &'a Tensor)>> {
    edge.inputs
        .iter()
        .map(|&i| {
            let spec = graph.node(i)?;
            let t = scene.get(&i).ok_or_else(|| Error::MissingRepresentation(spec.name.clone()))?;
            Ok((spec, t))
        })
        .collect()
}

/// Direct-edge predictions for every non-sensor node that has a direct edge.
pub fn direct_predictions(graph: &Graph, scenes: &[LayerSet]) -> Result<PredictionSet> {
    let mut out = PredictionSet::new();
    for node in graph.nodes().iter().filter(|n| !n.sensor) {
        let Some(edge) = direct_edge(graph, node.id) else {
            continue;
        };
        let preds = scenes
            .par_iter()
            .map(|s| edge.predict(node, &sensor_inputs(graph, edge, s)?))
            .collect::<Result<Vec<_>>>()?;
        out.insert(node.id, preds);
    }
    Ok(out)
}

/// Consensus of every selected ensemble.
pub fn ensemble_predictions(graph: &Graph, scenes: &[LayerSet], mode: IntermediateMode) -> Result<PredictionSet> {
    let per_scene = scenes
        .par_iter()
        .map(|s| {
            let mut ev = PathEvaluator::default();
            graph
                .ensembles()
                .keys()
                .map(|&t| {
                    let outs = ev.ensemble_outputs(graph, t, s, mode)?;
                    Ok((t, consensus_for(graph.node(t)?, &outs)?.pseudo_label))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = PredictionSet::new();
    for scene in per_scene {
        for (t, p) in scene {
            out.entry(t).or_insert_with(Vec::new).push(p);
        }
    }
    Ok(out)
}

/// Table metrics of one node's predictions. Pixels improved is only
/// reported when a baseline is given.
pub fn score_node(
    node: &NodeSpec,
    preds: &[Tensor],
    truth: &[&Tensor],
    baseline: Option<&[Tensor]>,
) -> Result<Vec<(Metric, f64)>> {
    if preds.len() != truth.len() || baseline.is_some_and(|b| b.len() != preds.len()) {
        return Err(Error::invalid(format!("misaligned predictions for `{}`", node.name)));
    }
    let pairs: Vec<(&Tensor, &Tensor)> = preds.iter().zip(truth.iter().copied()).collect();
    let mut out = Vec::new();
    for m in table_metrics(node) {
        if m == Metric::PixelsImproved {
            if let Some(b) = baseline {
                let triples: Vec<_> = preds.iter().zip(b).zip(truth).map(|((p, b), g)| (p, b, *g)).collect();
                out.push((m, pixels_improved(&triples)?));
            }
        } else {
            out.push((m, compute_metric(m, node, &pairs)?));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct GenerationEval {
    pub rows: Vec<MetricRow>,
    /// Direct-edge predictions, the baseline when this is generation zero.
    pub direct: PredictionSet,
}

/// Scores the direct edges and the ensembles of one generation on scenes
/// holding ground truth. Without `baseline` the direct predictions of this
/// generation serve as their own baseline and pixels improved is skipped
/// for them.
pub fn evaluate_generation(
    graph: &Graph,
    scenes: &[LayerSet],
    iteration: usize,
    mode: IntermediateMode,
    baseline: Option<&PredictionSet>,
) -> Result<GenerationEval> {
    let direct = direct_predictions(graph, scenes)?;
    let ensembles = ensemble_predictions(graph, scenes, mode)?;
    let base = baseline.unwrap_or(&direct);
    let mut rows = Vec::new();
    for node in graph.nodes().iter().filter(|n| !n.sensor) {
        let truth = scenes
            .iter()
            .map(|s| s.get(&node.id).ok_or_else(|| Error::MissingRepresentation(node.name.clone())))
            .collect::<Result<Vec<_>>>()?;
        if let Some(p) = direct.get(&node.id) {
            let edge = direct_edge(graph, node.id).expect("direct predictions imply a direct edge");
            let b = baseline.and_then(|b| b.get(&node.id)).map(Vec::as_slice);
            for (metric, value) in score_node(node, p, &truth, b)? {
                rows.push(MetricRow {
                    iteration,
                    node: node.name.clone(),
                    edge: edge.id.to_string(),
                    metric,
                    value,
                });
            }
        }
        if let Some(p) = ensembles.get(&node.id) {
            let b = base.get(&node.id).map(Vec::as_slice);
            for (metric, value) in score_node(node, p, &truth, b)? {
                rows.push(MetricRow {
                    iteration,
                    node: node.name.clone(),
                    edge: ENSEMBLE.to_string(),
                    metric,
                    value,
                });
            }
        }
    }
    Ok(GenerationEval { rows, direct })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Encoding, LearnerConfig, NodeKind, Path};
    use crate::graph::EdgeId;

    fn tiny_graph() -> (Graph, Vec<LayerSet>) {
        let mk = |id, name: &str, sensor| NodeSpec {
            id: NodeId(id),
            name: name.into(),
            kind: NodeKind::ContinuousMap { channels: 1 },
            units: "meters".into(),
            sensor,
            normalization: None,
        };
        let nodes = vec![mk(0, "a", true), mk(1, "b", false)];
        let e = HyperEdge::new(
            EdgeId(0),
            &[&nodes[0]],
            &nodes[1],
            Encoding::Patch { radius: 0 },
            &LearnerConfig::default(),
            4,
        )
        .unwrap();
        let mut g = Graph::new(nodes, vec![e]).unwrap();
        g.set_ensemble(NodeId(1), vec![Path::new(vec![EdgeId(0)])]).unwrap();
        let scenes = (0..3)
            .map(|k| {
                let t = |o: f32| Tensor::from_f32(vec![2, 2, 1], vec![o, 1.0 + o, 2.0, k as f32]).unwrap();
                LayerSet::from([(NodeId(0), t(0.0)), (NodeId(1), t(0.5))])
            })
            .collect();
        (g, scenes)
    }

    #[test]
    fn evaluation_is_pure() {
        let (g, s) = tiny_graph();
        let a = evaluate_generation(&g, &s, 0, IntermediateMode::SingleEdge, None).unwrap();
        let b = evaluate_generation(&g, &s, 0, IntermediateMode::SingleEdge, None).unwrap();
        assert_eq!(a.rows, b.rows);
        // a single-path ensemble equals its edge; no baseline, no pixels row
        // for the edge, and zero improvement for the ensemble
        let edge: Vec<_> = a.rows.iter().filter(|r| r.edge != ENSEMBLE).collect();
        let ens: Vec<_> = a.rows.iter().filter(|r| r.edge == ENSEMBLE).collect();
        assert_eq!(edge.len(), 1);
        assert_eq!(ens.len(), 2);
        assert_eq!(edge[0].value, ens[0].value);
        assert_eq!(ens[1].metric, Metric::PixelsImproved);
        assert_eq!(ens[1].value, 0.0);
    }

    #[test]
    fn missing_ground_truth_is_named() {
        let (g, mut s) = tiny_graph();
        s[1].remove(&NodeId(1));
        let err = evaluate_generation(&g, &s, 0, IntermediateMode::SingleEdge, None).unwrap_err();
        assert!(matches!(err, Error::MissingRepresentation(ref n) if n == "b"));
    }
}
