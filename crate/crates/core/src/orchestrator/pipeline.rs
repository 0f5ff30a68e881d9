use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    consensus_for, encode_targets, enumerate_paths, gate_confidence, ConsensusResult, EdgeId, Encoding, Gate, Graph,
    HyperEdge, IntermediateMode, LayerSet, LearnerConfig, NodeId, NodeSpec, PathEvaluator,
};
use crate::learner::{fit_set, TrainConfig, TrainSet, TrainTargets};
use crate::seed::derive_seed;
use crate::tensor::Tensor;

use super::greedy::{greedy_select, Candidate, GreedySelection, SelectionRule};
use super::metrics::{compute_metric, selection_metric, Metric};

const STREAM_INIT: u64 = 11;
const STREAM_PIXELS: u64 = 12;
const STREAM_SHUFFLE: u64 = 13;

/// An edge described by node names, resolved against a node list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeDef {
    pub inputs: Vec<String>,
    pub output: String,
}

impl EdgeDef {
    pub fn new(inputs: &[&str], output: &str) -> Self {
        EdgeDef {
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            output: output.to_string(),
        }
    }
}

/// rgb to every other representation, plus the second links of the
/// discovered structure: depth from halftone, segmentation and both normals;
/// camera normals from wireframe and world normals; world normals from
/// wireframe, camera normals and halftone; segmentation from halftone and
/// world normals; wireframe from halftone; pose from both normals,
/// segmentation and halftone.
pub fn default_candidate_edges() -> Vec<EdgeDef> {
    let mut defs: Vec<EdgeDef> = [
        "depth",
        "normals_camera",
        "normals_world",
        "segmentation",
        "wireframe",
        "halftone",
        "pose",
    ]
    .iter()
    .map(|t| EdgeDef::new(&["rgb"], t))
    .collect();
    let second = [
        ("halftone", "depth"),
        ("segmentation", "depth"),
        ("normals_camera", "depth"),
        ("normals_world", "depth"),
        ("wireframe", "normals_camera"),
        ("normals_world", "normals_camera"),
        ("wireframe", "normals_world"),
        ("normals_camera", "normals_world"),
        ("halftone", "normals_world"),
        ("halftone", "segmentation"),
        ("normals_world", "segmentation"),
        ("halftone", "wireframe"),
        ("normals_camera", "pose"),
        ("normals_world", "pose"),
        ("segmentation", "pose"),
        ("halftone", "pose"),
    ];
    defs.extend(second.iter().map(|(i, o)| EdgeDef::new(&[i], o)));
    defs
}

fn node_by_name<'a>(nodes: &'a [NodeSpec], name: &str) -> Result<&'a NodeSpec> {
    nodes
        .iter()
        .find(|n| n.name == name)
        .ok_or_else(|| Error::MissingRepresentation(name.to_string()))
}

/// Creates freshly initialized edges, numbered in definition order.
pub fn build_edges(nodes: &[NodeSpec], defs: &[EdgeDef], learner: &LearnerConfig, seed: u64) -> Result<Vec<HyperEdge>> {
    defs.iter()
        .enumerate()
        .map(|(i, d)| {
            let inputs: Vec<&NodeSpec> = d.inputs.iter().map(|n| node_by_name(nodes, n)).collect::<Result<_>>()?;
            let output = node_by_name(nodes, &d.output)?;
            let encoding = Encoding::default_for(&inputs, output)?;
            HyperEdge::new(
                EdgeId(i as u32),
                &inputs,
                output,
                encoding,
                learner,
                derive_seed(seed, &[STREAM_INIT, i as u64]),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub supervised: TrainConfig,
    pub unsupervised: TrainConfig,
    /// Training pixels sampled per scene for map outputs.
    pub pixels_per_scene: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            supervised: TrainConfig::default(),
            unsupervised: TrainConfig {
                epochs: 25,
                ..TrainConfig::default()
            },
            pixels_per_scene: 16,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.supervised.validate()?;
        self.unsupervised.validate()?;
        if self.pixels_per_scene == 0 {
            return Err(Error::invalid("need at least one pixel per scene"));
        }
        Ok(())
    }
}

fn sample_pixels(seed: u64, parts: &[u64], total: usize, k: usize) -> Vec<usize> {
    if k >= total {
        return (0..total).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, parts));
    let mut p = sample(&mut rng, total, k).into_vec();
    p.sort_unstable();
    p
}

fn layer<'a>(nodes: &[NodeSpec], layers: &'a LayerSet, id: NodeId) -> Result<&'a Tensor> {
    layers.get(&id).ok_or_else(|| {
        let name = nodes.iter().find(|n| n.id == id).map_or_else(|| id.to_string(), |n| n.name.clone());
        Error::MissingRepresentation(name)
    })
}

fn spec<'a>(nodes: &'a [NodeSpec], id: NodeId) -> Result<&'a NodeSpec> {
    nodes
        .iter()
        .find(|n| n.id == id)
        .ok_or_else(|| Error::invalid(format!("unknown node {id}")))
}

/// Rows for one edge from scenes holding its clique inputs and a target.
/// `target` yields the output layer and an optional per-element mask.
fn edge_rows<'a>(
    nodes: &[NodeSpec],
    edge: &HyperEdge,
    scenes: impl Iterator<Item = (u64, Vec<&'a Tensor>, &'a Tensor, Option<&'a [bool]>)>,
    pixels_per_scene: usize,
    seed_parts: &[u64],
    seed: u64,
) -> Result<TrainSet> {
    let out = spec(nodes, edge.output)?;
    let in_specs: Vec<&NodeSpec> = edge.inputs.iter().map(|&i| spec(nodes, i)).collect::<Result<_>>()?;
    let stored = out.kind.stored_width();
    let mut inputs = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut weights = Vec::new();
    let mut any_mask = false;
    for (scene, clique, target, mask) in scenes {
        let pairs: Vec<(&NodeSpec, &Tensor)> = in_specs.iter().copied().zip(clique).collect();
        let pixels = if out.kind.is_map() {
            let total = target.len() / stored;
            let mut parts = seed_parts.to_vec();
            parts.push(scene);
            Some(sample_pixels(seed, &parts, total, pixels_per_scene))
        } else {
            None
        };
        inputs.extend(edge.features(&pairs, pixels.as_deref())?);
        let rows: Vec<usize> = pixels.clone().unwrap_or_else(|| vec![0]);
        match encode_targets(out, target, pixels.as_deref())? {
            TrainTargets::Values(v) => {
                values.extend(v);
                for &p in &rows {
                    for c in 0..stored {
                        let keep = mask.map_or(true, |m| m[p * stored + c]);
                        weights.push(keep as u8 as f32);
                    }
                }
            }
            TrainTargets::Labels(l) => {
                labels.extend(l);
                weights.extend(rows.iter().map(|&p| mask.map_or(true, |m| m[p]) as u8 as f32));
            }
        }
        any_mask |= mask.is_some();
    }
    let targets = if out.kind.is_categorical() {
        TrainTargets::Labels(labels)
    } else {
        TrainTargets::Values(values)
    };
    Ok(TrainSet {
        input_dim: edge.model.spec().input_dim,
        output_dim: edge.model.spec().output_dim,
        inputs,
        targets,
        weights: any_mask.then_some(weights),
    })
}

fn supervised_rows(
    nodes: &[NodeSpec],
    edge: &HyperEdge,
    scenes: &[LayerSet],
    ids: &[u64],
    cfg: &TrainingConfig,
    generation: u64,
) -> Result<TrainSet> {
    let items = scenes
        .iter()
        .zip(ids)
        .map(|(l, &id)| {
            let clique = edge.inputs.iter().map(|&i| layer(nodes, l, i)).collect::<Result<Vec<_>>>()?;
            Ok((id, clique, layer(nodes, l, edge.output)?, None))
        })
        .collect::<Result<Vec<_>>>()?;
    edge_rows(
        nodes,
        edge,
        items.into_iter(),
        cfg.pixels_per_scene,
        &[STREAM_PIXELS, generation, edge.id.0 as u64],
        cfg.seed,
    )
}

fn concat_sets(mut a: TrainSet, b: TrainSet) -> TrainSet {
    let ones = |s: &TrainSet| match &s.targets {
        TrainTargets::Values(v) => vec![1.0; v.len()],
        TrainTargets::Labels(l) => vec![1.0; l.len()],
    };
    let wa = a.weights.take().unwrap_or_else(|| ones(&a));
    let wb = b.weights.clone().unwrap_or_else(|| ones(&b));
    a.inputs.extend(b.inputs);
    a.targets = match (a.targets, b.targets) {
        (TrainTargets::Values(mut x), TrainTargets::Values(y)) => {
            x.extend(y);
            TrainTargets::Values(x)
        }
        (TrainTargets::Labels(mut x), TrainTargets::Labels(y)) => {
            x.extend(y);
            TrainTargets::Labels(x)
        }
        _ => unreachable!("both sets come from the same edge"),
    };
    a.weights = Some([wa, wb].concat());
    a
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeMetric {
    pub edge: EdgeId,
    pub output: String,
    pub metric: Metric,
    pub value: f64,
}

/// Validation score of an edge fed with ground-truth clique layers.
pub fn edge_validation_metric(nodes: &[NodeSpec], edge: &HyperEdge, scenes: &[LayerSet]) -> Result<EdgeMetric> {
    let out = spec(nodes, edge.output)?;
    let in_specs: Vec<&NodeSpec> = edge.inputs.iter().map(|&i| spec(nodes, i)).collect::<Result<_>>()?;
    let preds = scenes
        .par_iter()
        .map(|l| {
            let pairs = in_specs
                .iter()
                .zip(&edge.inputs)
                .map(|(s, &i)| Ok((*s, layer(nodes, l, i)?)))
                .collect::<Result<Vec<_>>>()?;
            edge.predict(out, &pairs)
        })
        .collect::<Result<Vec<_>>>()?;
    let gts = scenes.iter().map(|l| layer(nodes, l, edge.output)).collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(&Tensor, &Tensor)> = preds.iter().zip(gts).collect();
    let metric = selection_metric(out);
    Ok(EdgeMetric {
        edge: edge.id,
        output: out.name.clone(),
        metric,
        value: compute_metric(metric, out, &pairs)?,
    })
}

/// Trains every edge independently on ground truth, then scores it on the
/// validation scenes.
pub fn pretrain_supervised(
    nodes: &[NodeSpec],
    edges: Vec<HyperEdge>,
    train: &[LayerSet],
    train_ids: &[u64],
    validation: &[LayerSet],
    cfg: &TrainingConfig,
) -> Result<(Vec<HyperEdge>, Vec<EdgeMetric>)> {
    cfg.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::invalid("pretraining needs training and validation scenes"));
    }
    let trained = edges
        .into_par_iter()
        .map(|mut e| {
            let set = supervised_rows(nodes, &e, train, train_ids, cfg, 0)?;
            let tc = TrainConfig {
                shuffle_seed: derive_seed(cfg.seed, &[STREAM_SHUFFLE, 0, e.id.0 as u64]),
                ..cfg.supervised.clone()
            };
            e.model = fit_set(e.model, &set, &tc)?.model;
            let m = edge_validation_metric(nodes, &e, validation)?;
            Ok((e, m))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(trained.into_iter().unzip())
}

/// Every non-sensor node written by some edge, in id order.
pub fn target_nodes(graph: &Graph) -> Vec<NodeId> {
    let mut t: Vec<NodeId> = graph
        .nodes()
        .iter()
        .filter(|n| !n.sensor && graph.edges().iter().any(|e| e.output == n.id))
        .map(|n| n.id)
        .collect();
    t.sort();
    t
}

/// Ranks all paths of every target by validation score and keeps the
/// ensemble chosen by `rule`.
pub fn build_graph_greedy(
    nodes: Vec<NodeSpec>,
    edges: Vec<HyperEdge>,
    validation: &[LayerSet],
    max_hops: usize,
    rule: SelectionRule,
) -> Result<(Graph, Vec<GreedySelection>)> {
    if max_hops == 0 {
        return Err(Error::invalid("max hops must be at least 1"));
    }
    let mut graph = Graph::new(nodes, edges)?;
    let mut candidates: BTreeMap<NodeId, Vec<crate::graph::Path>> = BTreeMap::new();
    for t in target_nodes(&graph) {
        let paths = enumerate_paths(&graph, t, max_hops);
        if paths.is_empty() {
            log::warn!("no candidate paths reach {}; leaving it out", graph.node(t)?.name);
            continue;
        }
        candidates.insert(t, paths);
    }
    // outputs[scene][target] = one tensor per candidate path
    let outputs = validation
        .par_iter()
        .map(|scene| {
            let mut ev = PathEvaluator::default();
            candidates
                .iter()
                .map(|(t, paths)| {
                    let o = paths
                        .iter()
                        .map(|p| ev.evaluate(&graph, p, scene, IntermediateMode::SingleEdge))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((*t, o))
                })
                .collect::<Result<BTreeMap<_, _>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut selections = Vec::new();
    for (t, paths) in &candidates {
        let node = graph.node(*t)?.clone();
        let metric = selection_metric(&node);
        let gts = validation.iter().map(|l| layer(graph.nodes(), l, *t)).collect::<Result<Vec<_>>>()?;
        let mut cands = Vec::with_capacity(paths.len());
        for (i, p) in paths.iter().enumerate() {
            let pairs: Vec<(&Tensor, &Tensor)> = outputs.iter().map(|o| &o[t][i]).zip(gts.iter().copied()).collect();
            let first = graph.edge(p.edges[0])?;
            cands.push(Candidate {
                path: p.clone(),
                score: compute_metric(metric, &node, &pairs)?,
                direct: p.hops() == 1 && first.inputs.iter().all(|&n| graph.is_sensor(n)),
            });
        }
        let index_of = |c: &Candidate| paths.iter().position(|p| *p == c.path).unwrap();
        let ranked_order: Vec<usize> = super::greedy::rank_candidates(cands.clone(), metric)
            .iter()
            .map(index_of)
            .collect();
        let sel = greedy_select(*t, metric, cands, rule, |prefix| {
            let cons = outputs
                .par_iter()
                .map(|o| {
                    let chosen: Vec<Tensor> = prefix.iter().map(|&k| o[t][ranked_order[k]].clone()).collect();
                    consensus_for(&node, &chosen).map(|c| c.pseudo_label)
                })
                .collect::<Result<Vec<_>>>()?;
            let pairs: Vec<(&Tensor, &Tensor)> = cons.iter().zip(gts.iter().copied()).collect();
            compute_metric(metric, &node, &pairs)
        })?;
        graph.set_ensemble(*t, sel.selected_paths())?;
        selections.push(sel);
    }
    Ok((graph, selections))
}

/// Gated consensus of every ensemble on one scene.
pub fn scene_consensus(
    graph: &Graph,
    scene: &LayerSet,
    targets: &[NodeId],
    gate: Gate,
    mode: IntermediateMode,
) -> Result<BTreeMap<NodeId, ConsensusResult>> {
    let mut ev = PathEvaluator::default();
    targets
        .iter()
        .map(|&t| {
            let outs = ev.ensemble_outputs(graph, t, scene, mode)?;
            let c = consensus_for(graph.node(t)?, &outs)?;
            Ok((t, gate_confidence(c, gate)))
        })
        .collect()
}

/// Pseudo-labels for every scene, computed with the graph's current weights.
pub fn pseudo_labels(
    graph: &Graph,
    scenes: &[LayerSet],
    targets: &[NodeId],
    gate: Gate,
    mode: IntermediateMode,
) -> Result<Vec<BTreeMap<NodeId, ConsensusResult>>> {
    scenes
        .par_iter()
        .map(|s| scene_consensus(graph, s, targets, gate, mode))
        .collect()
}

/// Mean dispersion of each ensemble over `scenes`.
pub fn mean_dispersions(graph: &Graph, scenes: &[LayerSet], mode: IntermediateMode) -> Result<BTreeMap<NodeId, f64>> {
    let targets: Vec<NodeId> = graph.ensembles().keys().copied().collect();
    let per_scene = scenes
        .par_iter()
        .map(|s| {
            let c = scene_consensus(graph, s, &targets, Gate::default(), mode)?;
            Ok(c.into_iter().map(|(k, v)| (k, v.mean_dispersion())).collect::<BTreeMap<_, _>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(targets
        .iter()
        .map(|t| (*t, per_scene.iter().map(|m| m[t]).sum::<f64>() / scenes.len().max(1) as f64))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Every student learns from the frozen previous generation; all new
    /// weights are published together at the end.
    #[default]
    Synchronous,
    /// Students train one at a time in edge order and replace their teacher
    /// weights immediately.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationConfig {
    pub training: TrainingConfig,
    pub gate: Gate,
    pub intermediates: IntermediateMode,
    pub schedule: Schedule,
    /// Also train students on the labeled set.
    pub mix_labeled: bool,
}

impl Default for IterationConfig {
    fn default() -> Self {
        IterationConfig {
            training: TrainingConfig::default(),
            gate: Gate {
                tau: None,
                alpha: Some(0.5),
            },
            intermediates: IntermediateMode::SingleEdge,
            schedule: Schedule::Synchronous,
            mix_labeled: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeChange {
    pub edge: EdgeId,
    pub output: String,
    pub metric: Metric,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDispersion {
    pub node: NodeId,
    pub name: String,
    pub paths: usize,
    pub before: f64,
    pub after: f64,
    /// `100 (1 - after / before)`; absent when `before` is zero.
    pub reduction_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    /// Validation metrics of every edge with ground-truth inputs.
    pub edges: Vec<EdgeChange>,
    /// Ensemble dispersion on the validation scenes.
    pub nodes: Vec<NodeDispersion>,
    /// Seconds spent; kept out of the serialized report so reruns match.
    #[serde(skip)]
    pub wall_time: f64,
}

pub fn reduction_percent(before: f64, after: f64) -> Option<f64> {
    (before > 0.0).then(|| 100.0 * (1.0 - after / before))
}

/// Labeled scenes mixed into student training when enabled.
pub struct LabeledPool<'a> {
    pub scenes: &'a [LayerSet],
    pub ids: &'a [u64],
}

fn student_set(
    graph: &Graph,
    edge: &HyperEdge,
    scenes: &[LayerSet],
    ids: &[u64],
    pseudo: &[BTreeMap<NodeId, ConsensusResult>],
    cfg: &IterationConfig,
    iteration: u64,
) -> Result<TrainSet> {
    let nodes = graph.nodes();
    let items = scenes
        .iter()
        .zip(ids)
        .zip(pseudo)
        .map(|((scene, &id), p)| {
            let clique = edge
                .inputs
                .iter()
                .map(|&i| {
                    if graph.is_sensor(i) {
                        layer(nodes, scene, i)
                    } else {
                        p.get(&i)
                            .map(|c| &c.pseudo_label)
                            .ok_or_else(|| Error::invalid(format!("no consensus for input {i} of {}", edge.id)))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let target = p
                .get(&edge.output)
                .ok_or_else(|| Error::invalid(format!("no consensus for output of {}", edge.id)))?;
            Ok((id, clique, &target.pseudo_label, target.mask.as_deref()))
        })
        .collect::<Result<Vec<_>>>()?;
    edge_rows(
        nodes,
        edge,
        items.into_iter(),
        cfg.training.pixels_per_scene,
        &[STREAM_PIXELS, iteration, edge.id.0 as u64],
        cfg.training.seed,
    )
}

/// Fine-tunes one student on pseudo-labels from its previous parameters.
pub fn train_student(
    graph: &Graph,
    edge: &HyperEdge,
    scenes: &[LayerSet],
    ids: &[u64],
    pseudo: &[BTreeMap<NodeId, ConsensusResult>],
    labeled: Option<&LabeledPool<'_>>,
    cfg: &IterationConfig,
    iteration: u64,
) -> Result<HyperEdge> {
    let mut set = student_set(graph, edge, scenes, ids, pseudo, cfg, iteration)?;
    if let (true, Some(l)) = (cfg.mix_labeled, labeled) {
        let sup = supervised_rows(graph.nodes(), edge, l.scenes, l.ids, &cfg.training, iteration)?;
        set = concat_sets(set, sup);
    }
    let tc = TrainConfig {
        shuffle_seed: derive_seed(cfg.training.seed, &[STREAM_SHUFFLE, iteration, edge.id.0 as u64]),
        ..cfg.training.unsupervised.clone()
    };
    let mut e = edge.clone();
    e.model = fit_set(e.model, &set, &tc)?.model;
    Ok(e)
}

/// Nodes whose consensus a student needs: its output and non-sensor inputs.
fn student_targets(graph: &Graph, edge: &HyperEdge) -> Vec<NodeId> {
    let mut t: Vec<NodeId> = edge.inputs.iter().copied().filter(|&i| !graph.is_sensor(i)).collect();
    t.push(edge.output);
    t.sort();
    t.dedup();
    t
}

/// One round of consensus self-training on a fresh unlabeled pool. Returns
/// the next generation of the graph and a report measured on `validation`.
#[allow(clippy::too_many_arguments)]
pub fn run_unsupervised_iteration(
    graph: &Graph,
    unlabeled: &[LayerSet],
    unlabeled_ids: &[u64],
    validation: &[LayerSet],
    labeled: Option<&LabeledPool<'_>>,
    cfg: &IterationConfig,
    iteration: usize,
) -> Result<(Graph, IterationReport)> {
    cfg.training.validate()?;
    cfg.gate.validate()?;
    if unlabeled.is_empty() {
        return Err(Error::invalid("unlabeled pool is empty"));
    }
    if graph.ensembles().is_empty() {
        return Err(Error::invalid("graph has no selected ensembles"));
    }
    let start = Instant::now();
    let it = iteration as u64;
    let before_disp = mean_dispersions(graph, validation, cfg.intermediates)?;
    let before_edges = graph
        .edges()
        .par_iter()
        .map(|e| edge_validation_metric(graph.nodes(), e, validation))
        .collect::<Result<Vec<_>>>()?;

    let trainable: Vec<&HyperEdge> = graph
        .edges()
        .iter()
        .filter(|e| student_targets(graph, e).iter().all(|t| !graph.ensemble(*t).is_empty()))
        .collect();
    let next = match cfg.schedule {
        Schedule::Synchronous => {
            let targets: Vec<NodeId> = graph.ensembles().keys().copied().collect();
            let pseudo = pseudo_labels(graph, unlabeled, &targets, cfg.gate, cfg.intermediates)?;
            let students = trainable
                .par_iter()
                .map(|e| train_student(graph, e, unlabeled, unlabeled_ids, &pseudo, labeled, cfg, it))
                .collect::<Result<Vec<_>>>()?;
            let mut next = graph.clone();
            for s in students {
                next.replace_model(s.id, s.model)?;
            }
            next
        }
        Schedule::Sequential => {
            let mut next = graph.clone();
            for e in &trainable {
                let targets = student_targets(&next, e);
                let pseudo = pseudo_labels(&next, unlabeled, &targets, cfg.gate, cfg.intermediates)?;
                let s = train_student(&next, next.edge(e.id)?, unlabeled, unlabeled_ids, &pseudo, labeled, cfg, it)?;
                next.replace_model(s.id, s.model)?;
            }
            next
        }
    };

    let after_disp = mean_dispersions(&next, validation, cfg.intermediates)?;
    let after_edges = next
        .edges()
        .par_iter()
        .map(|e| edge_validation_metric(next.nodes(), e, validation))
        .collect::<Result<Vec<_>>>()?;
    let edges = before_edges
        .into_iter()
        .zip(after_edges)
        .map(|(b, a)| EdgeChange {
            edge: b.edge,
            output: b.output,
            metric: b.metric,
            before: b.value,
            after: a.value,
        })
        .collect();
    let nodes = before_disp
        .iter()
        .map(|(t, &b)| {
            let a = after_disp[t];
            Ok(NodeDispersion {
                node: *t,
                name: graph.node(*t)?.name.clone(),
                paths: graph.ensemble(*t).len(),
                before: b,
                after: a,
                reduction_percent: reduction_percent(b, a),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        next,
        IterationReport {
            iteration,
            edges,
            nodes,
            wall_time: start.elapsed().as_secs_f64(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_scene, world_nodes, Representation, WorldConfig};

    fn tiny_world() -> WorldConfig {
        WorldConfig {
            height: 12,
            width: 12,
            ..Default::default()
        }
    }

    fn scenes(w: &WorldConfig, ids: std::ops::Range<u64>) -> (Vec<LayerSet>, Vec<u64>) {
        let ids: Vec<u64> = ids.collect();
        (ids.iter().map(|&i| generate_scene(w, i).unwrap().to_layer_set()).collect(), ids)
    }

    fn quick() -> TrainingConfig {
        TrainingConfig {
            supervised: TrainConfig {
                epochs: 30,
                learning_rate: 1e-2,
                ..Default::default()
            },
            unsupervised: TrainConfig {
                epochs: 5,
                learning_rate: 1e-2,
                ..Default::default()
            },
            pixels_per_scene: 16,
            seed: 5,
        }
    }

    #[test]
    fn candidate_set_shape() {
        let defs = default_candidate_edges();
        assert_eq!(defs.len(), 23);
        let nodes = world_nodes(&WorldConfig::default());
        let edges = build_edges(&nodes, &defs, &LearnerConfig::default(), 1).unwrap();
        let g = Graph::new(nodes, edges).unwrap();
        let count = |name: &str| {
            let id = Representation::from_name(name).unwrap().node_id();
            enumerate_paths(&g, id, 2).len()
        };
        assert_eq!(count("depth"), 5);
        assert_eq!(count("normals_camera"), 3);
        assert_eq!(count("normals_world"), 4);
        assert_eq!(count("segmentation"), 3);
        assert_eq!(count("wireframe"), 2);
        assert_eq!(count("pose"), 5);
    }

    #[test]
    fn identity_edge_learns_to_copy() {
        let w = tiny_world();
        let nodes = world_nodes(&w);
        let (train, ids) = scenes(&w, 0..40);
        let (val, _) = scenes(&w, 100..110);
        // depth -> depth is not a legal edge, so copy depth through a node
        // with the same layout: a relabelled clone of depth as a sensor.
        let mut src = nodes[1].clone();
        src.id = NodeId(50);
        src.name = "depth_sensor".into();
        src.sensor = true;
        let mut all = nodes.clone();
        all.push(src.clone());
        let add = |ls: &[LayerSet]| -> Vec<LayerSet> {
            ls.iter()
                .map(|l| {
                    let mut l = l.clone();
                    l.insert(NodeId(50), l[&NodeId(1)].clone());
                    l
                })
                .collect()
        };
        // a single-pixel window keeps the copy well conditioned
        let edges = vec![HyperEdge::new(
            EdgeId(0),
            &[&src],
            &nodes[1],
            Encoding::Patch { radius: 0 },
            &LearnerConfig {
                hidden: vec![],
                ..Default::default()
            },
            3,
        )
        .unwrap()];
        let cfg = TrainingConfig {
            supervised: TrainConfig {
                epochs: 300,
                learning_rate: 1e-2,
                weight_decay: 0.0,
                ..Default::default()
            },
            ..quick()
        };
        let (_, m) = pretrain_supervised(&all, edges, &add(&train), &ids, &add(&val), &cfg).unwrap();
        assert!(m[0].value < 1e-3, "{:?}", m[0]);
    }

    #[test]
    fn pretraining_is_deterministic_and_beats_the_mean() {
        let w = tiny_world();
        let nodes = world_nodes(&w);
        let (train, ids) = scenes(&w, 0..30);
        let (val, _) = scenes(&w, 100..110);
        let defs = vec![EdgeDef::new(&["rgb"], "depth")];
        let run = || {
            let edges = build_edges(&nodes, &defs, &LearnerConfig::default(), 2).unwrap();
            pretrain_supervised(&nodes, edges, &train, &ids, &val, &quick()).unwrap()
        };
        let (e1, m1) = run();
        let (e2, m2) = run();
        assert_eq!(m1, m2);
        assert_eq!(e1, e2);
        let depth = NodeId(1);
        let mean = train.iter().flat_map(|l| l[&depth].as_f32().unwrap().to_vec()).map(|v| v as f64).sum::<f64>()
            / (train.len() * 144) as f64;
        let baseline = val
            .iter()
            .flat_map(|l| l[&depth].as_f32().unwrap().to_vec())
            .map(|v| (v as f64 - mean).abs())
            .sum::<f64>()
            / (val.len() * 144) as f64;
        assert!(m1[0].value < baseline, "{} vs {baseline}", m1[0].value);
    }

    #[test]
    fn missing_representation_is_named() {
        let w = tiny_world();
        let nodes = world_nodes(&w);
        let (mut train, ids) = scenes(&w, 0..3);
        for l in &mut train {
            l.remove(&NodeId(1));
        }
        let edges = build_edges(&nodes, &[EdgeDef::new(&["rgb"], "depth")], &LearnerConfig::default(), 2).unwrap();
        let err = pretrain_supervised(&nodes, edges, &train, &ids, &train, &quick()).unwrap_err();
        assert!(matches!(err, Error::MissingRepresentation(ref n) if n == "depth"), "{err}");
    }

    #[test]
    fn synchronous_students_ignore_training_order() {
        let w = tiny_world();
        let nodes = world_nodes(&w);
        let (train, ids) = scenes(&w, 0..20);
        let (val, _) = scenes(&w, 100..106);
        let (unl, uids) = scenes(&w, 200..210);
        let unl: Vec<LayerSet> = unl
            .into_iter()
            .map(|l| l.into_iter().filter(|(k, _)| *k == NodeId(0)).collect())
            .collect();
        let defs = vec![
            EdgeDef::new(&["rgb"], "depth"),
            EdgeDef::new(&["rgb"], "segmentation"),
            EdgeDef::new(&["segmentation"], "depth"),
        ];
        let edges = build_edges(&nodes, &defs, &LearnerConfig::default(), 2).unwrap();
        let (edges, _) = pretrain_supervised(&nodes, edges, &train, &ids, &val, &quick()).unwrap();
        let (g, sel) = build_graph_greedy(nodes, edges, &val, 2, SelectionRule::BestPrefix).unwrap();
        assert_eq!(sel.len(), 2);
        let cfg = IterationConfig {
            training: quick(),
            ..Default::default()
        };
        let targets: Vec<NodeId> = g.ensembles().keys().copied().collect();
        let pseudo = pseudo_labels(&g, &unl, &targets, cfg.gate, cfg.intermediates).unwrap();
        let forward: Vec<HyperEdge> = g
            .edges()
            .iter()
            .map(|e| train_student(&g, e, &unl, &uids, &pseudo, None, &cfg, 1).unwrap())
            .collect();
        let mut backward: Vec<HyperEdge> = g
            .edges()
            .iter()
            .rev()
            .map(|e| train_student(&g, e, &unl, &uids, &pseudo, None, &cfg, 1).unwrap())
            .collect();
        backward.reverse();
        assert_eq!(forward, backward);
        let (next, report) = run_unsupervised_iteration(&g, &unl, &uids, &val, None, &cfg, 1).unwrap();
        for (e, f) in next.edges().iter().zip(&forward) {
            assert_eq!(e, f);
        }
        assert_eq!(report.edges.len(), 3);
        assert!(run_unsupervised_iteration(&g, &[], &[], &val, None, &cfg, 1).is_err());
    }
}
