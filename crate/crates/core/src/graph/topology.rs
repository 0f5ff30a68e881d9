use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{read_checkpoint, Head};
use crate::tensor::Tensor;

use super::consensus::{consensus_median, consensus_vote, ConsensusResult};
use super::edge::{output_head, EdgeId, Encoding, HyperEdge};
use super::node::{LayerSet, NodeId, NodeSpec};

pub const DEFAULT_MAX_HOPS: usize = 2;

/// A chain of edges from sensor layers to a target node.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Path {
    pub edges: Vec<EdgeId>,
}

impl Path {
    pub fn new(edges: Vec<EdgeId>) -> Self {
        Path { edges }
    }

    pub fn hops(&self) -> usize {
        self.edges.len()
    }
}

/// Where a path's non-terminal inputs come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntermediateMode {
    /// The output of the previous edge on the path.
    #[default]
    SingleEdge,
    /// The consensus of that node's own ensemble (evaluated edge by edge),
    /// falling back to the edge output when the node has no ensemble.
    Consensus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    nodes: Vec<NodeSpec>,
    edges: Vec<HyperEdge>,
    /// Selected paths per target, best validation rank first.
    ensembles: BTreeMap<NodeId, Vec<Path>>,
}

impl Graph {
    pub fn new(nodes: Vec<NodeSpec>, edges: Vec<HyperEdge>) -> Result<Self> {
        let g = Graph {
            nodes,
            edges,
            ensembles: BTreeMap::new(),
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            n.validate()?;
            if !ids.insert(n.id) {
                return Err(Error::invalid(format!("duplicate node id {}", n.id)));
            }
        }
        let mut edge_ids = BTreeSet::new();
        let mut signatures = BTreeSet::new();
        for e in &self.edges {
            if !edge_ids.insert(e.id) {
                return Err(Error::invalid(format!("duplicate edge id {}", e.id)));
            }
            if !signatures.insert((e.inputs.clone(), e.output)) {
                return Err(Error::invalid(format!("edge {} repeats an existing clique and output", e.id)));
            }
            self.check_edge(e)?;
        }
        Ok(())
    }

    fn check_edge(&self, e: &HyperEdge) -> Result<()> {
        let out = self.node(e.output)?;
        if out.sensor {
            return Err(Error::invalid(format!("edge {} writes sensor node `{}`", e.id, out.name)));
        }
        if e.inputs.is_empty() || e.inputs.contains(&e.output) {
            return Err(Error::invalid(format!("edge {} has an empty clique or feeds itself", e.id)));
        }
        let inputs: Vec<&NodeSpec> = e.inputs.iter().map(|&i| self.node(i)).collect::<Result<_>>()?;
        let width = e.encoding.input_width(&inputs, out)?;
        let (out_dim, head) = output_head(out);
        let spec = e.model.spec();
        if spec.input_dim != width || spec.output_dim != out_dim || spec.head != head {
            return Err(Error::invalid(format!(
                "learner of edge {} ({} -> {}, {:?}) does not fit its nodes ({width} -> {out_dim}, {head:?})",
                e.id, spec.input_dim, spec.output_dim, spec.head
            )));
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn edges(&self) -> &[HyperEdge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> Result<&NodeSpec> {
        self.nodes
            .iter()
            .find(|n| n.id == id)
            .ok_or_else(|| Error::invalid(format!("unknown node {id}")))
    }

    pub fn edge(&self, id: EdgeId) -> Result<&HyperEdge> {
        self.edges
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::invalid(format!("unknown edge {id}")))
    }

    /// Replaces the learner of an edge, keeping its shape.
    pub fn replace_model(&mut self, id: EdgeId, model: crate::learner::DenseModel) -> Result<()> {
        let idx = self
            .edges
            .iter()
            .position(|e| e.id == id)
            .ok_or_else(|| Error::invalid(format!("unknown edge {id}")))?;
        if model.spec().input_dim != self.edges[idx].model.spec().input_dim
            || model.spec().output_dim != self.edges[idx].model.spec().output_dim
            || model.spec().head != self.edges[idx].model.spec().head
        {
            return Err(Error::invalid(format!("replacement learner for {id} has a different shape")));
        }
        self.edges[idx].model = model;
        Ok(())
    }

    pub fn is_sensor(&self, id: NodeId) -> bool {
        self.node(id).is_ok_and(|n| n.sensor)
    }

    pub fn ensembles(&self) -> &BTreeMap<NodeId, Vec<Path>> {
        &self.ensembles
    }

    pub fn ensemble(&self, target: NodeId) -> &[Path] {
        self.ensembles.get(&target).map_or(&[], |v| v.as_slice())
    }

    /// Sets the ranked ensemble of `target` after checking every path.
    pub fn set_ensemble(&mut self, target: NodeId, paths: Vec<Path>) -> Result<()> {
        if paths.is_empty() {
            return Err(Error::invalid(format!("empty ensemble for {target}")));
        }
        for p in &paths {
            self.check_path(p, target)?;
        }
        self.ensembles.insert(target, paths);
        Ok(())
    }

    pub fn clear_ensembles(&mut self) {
        self.ensembles.clear();
    }

    /// A path is valid when its first edge reads only sensors, each later
    /// edge reads the previous output plus sensors or earlier outputs, no
    /// node is produced twice, and the last edge writes `target`.
    pub fn check_path(&self, path: &Path, target: NodeId) -> Result<()> {
        if path_is_chainable(self, &path.edges, target) {
            Ok(())
        } else {
            Err(Error::invalid(format!("path {:?} is not a chain to {target}", path.edges)))
        }
    }
}

fn path_is_chainable(g: &Graph, edges: &[EdgeId], target: NodeId) -> bool {
    let mut produced: Vec<NodeId> = Vec::new();
    for (i, id) in edges.iter().enumerate() {
        let Ok(e) = g.edge(*id) else { return false };
        let readable = |n: &NodeId| g.is_sensor(*n) || produced.contains(n);
        if !e.inputs.iter().all(readable) {
            return false;
        }
        if i > 0 && !e.inputs.contains(produced.last().unwrap()) {
            return false;
        }
        if produced.contains(&e.output) {
            return false;
        }
        produced.push(e.output);
    }
    produced.last() == Some(&target)
}

/// Every chainable sensor-rooted path of at most `max_hops` edges ending at
/// `target`, sorted by edge-id sequence.
pub fn enumerate_paths(graph: &Graph, target: NodeId, max_hops: usize) -> Vec<Path> {
    let mut out = BTreeSet::new();
    let mut stack: Vec<EdgeId> = Vec::new();
    extend_paths(graph, target, max_hops, &mut stack, &mut out);
    out.into_iter().map(Path::new).collect()
}

fn extend_paths(g: &Graph, target: NodeId, max_hops: usize, prefix: &mut Vec<EdgeId>, out: &mut BTreeSet<Vec<EdgeId>>) {
    if prefix.len() == max_hops {
        return;
    }
    let produced: Vec<NodeId> = prefix.iter().map(|&id| g.edge(id).unwrap().output).collect();
    for e in g.edges() {
        let readable = e.inputs.iter().all(|n| g.is_sensor(*n) || produced.contains(n));
        let chained = produced.last().map_or(true, |last| e.inputs.contains(last));
        if !readable || !chained || produced.contains(&e.output) {
            continue;
        }
        prefix.push(e.id);
        if e.output == target {
            out.insert(prefix.clone());
        } else {
            extend_paths(g, target, max_hops, prefix, out);
        }
        prefix.pop();
    }
}

fn sensor_layer<'a>(graph: &Graph, sensors: &'a LayerSet, id: NodeId) -> Result<&'a Tensor> {
    sensors.get(&id).ok_or_else(|| {
        let name = graph.node(id).map_or_else(|_| id.to_string(), |n| n.name.clone());
        Error::invalid(format!("sensor layer `{name}` not supplied"))
    })
}

fn run_edge(graph: &Graph, e: &HyperEdge, local: &BTreeMap<NodeId, Tensor>, sensors: &LayerSet) -> Result<Tensor> {
    let mut inputs = Vec::with_capacity(e.inputs.len());
    for &n in &e.inputs {
        let spec = graph.node(n)?;
        let t = if spec.sensor {
            sensor_layer(graph, sensors, n)?
        } else {
            local
                .get(&n)
                .ok_or_else(|| Error::invalid(format!("node `{}` is not produced on this path", spec.name)))?
        };
        inputs.push((spec, t));
    }
    e.predict(graph.node(e.output)?, &inputs)
}

/// Runs a path on sensor layers. Non-sensor entries of `sensors` are ignored:
/// intermediate layers always come from the path's own learners.
pub fn evaluate_path(graph: &Graph, path: &Path, sensors: &LayerSet) -> Result<Tensor> {
    PathEvaluator::default().evaluate(graph, path, sensors, IntermediateMode::SingleEdge)
}

/// Evaluates paths on one scene, reusing shared prefixes.
#[derive(Default)]
pub struct PathEvaluator {
    prefixes: HashMap<Vec<EdgeId>, Tensor>,
    consensus: HashMap<NodeId, Tensor>,
}

impl PathEvaluator {
    pub fn evaluate(&mut self, graph: &Graph, path: &Path, sensors: &LayerSet, mode: IntermediateMode) -> Result<Tensor> {
        if path.edges.is_empty() {
            return Err(Error::invalid("empty path"));
        }
        let mut local: BTreeMap<NodeId, Tensor> = BTreeMap::new();
        let last = path.edges.len() - 1;
        for (i, &id) in path.edges.iter().enumerate() {
            let e = graph.edge(id)?;
            let key = path.edges[..=i].to_vec();
            let out = match self.prefixes.get(&key) {
                Some(t) => t.clone(),
                None => {
                    let t = run_edge(graph, e, &local, sensors)?;
                    self.prefixes.insert(key, t.clone());
                    t
                }
            };
            let value = if i < last && mode == IntermediateMode::Consensus {
                self.node_consensus(graph, e.output, sensors)?.unwrap_or(out)
            } else {
                out
            };
            local.insert(e.output, value);
        }
        Ok(local.remove(&graph.edge(path.edges[last])?.output).unwrap())
    }

    fn node_consensus(&mut self, graph: &Graph, node: NodeId, sensors: &LayerSet) -> Result<Option<Tensor>> {
        if let Some(t) = self.consensus.get(&node) {
            return Ok(Some(t.clone()));
        }
        let paths = graph.ensemble(node);
        if paths.is_empty() {
            return Ok(None);
        }
        let outputs = paths
            .iter()
            .map(|p| self.evaluate(graph, p, sensors, IntermediateMode::SingleEdge))
            .collect::<Result<Vec<_>>>()?;
        let t = consensus_for(graph.node(node)?, &outputs)?.pseudo_label;
        self.consensus.insert(node, t.clone());
        Ok(Some(t))
    }

    /// Outputs of every selected path of `target`, in rank order.
    pub fn ensemble_outputs(
        &mut self,
        graph: &Graph,
        target: NodeId,
        sensors: &LayerSet,
        mode: IntermediateMode,
    ) -> Result<Vec<Tensor>> {
        let paths = graph.ensemble(target);
        if paths.is_empty() {
            let name = graph.node(target).map_or_else(|_| target.to_string(), |n| n.name.clone());
            return Err(Error::invalid(format!("no selected ensemble for `{name}`")));
        }
        paths.iter().map(|p| self.evaluate(graph, p, sensors, mode)).collect()
    }
}

/// Median for continuous nodes, rank-ordered vote for categorical ones.
pub fn consensus_for(node: &NodeSpec, outputs: &[Tensor]) -> Result<ConsensusResult> {
    if node.kind.is_categorical() {
        let ranks: Vec<usize> = (0..outputs.len()).collect();
        consensus_vote(outputs, &ranks)
    } else {
        consensus_median(outputs)
    }
}

/// Consensus of the selected ensemble of `target`.
pub fn ensemble_predict(graph: &Graph, target: NodeId, sensors: &LayerSet, mode: IntermediateMode) -> Result<ConsensusResult> {
    let outputs = PathEvaluator::default().ensemble_outputs(graph, target, sensors, mode)?;
    consensus_for(graph.node(target)?, &outputs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeEntry {
    pub id: EdgeId,
    pub inputs: Vec<NodeId>,
    pub output: NodeId,
    pub encoding: Encoding,
    /// Relative to the topology file's directory.
    pub checkpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEntry {
    pub target: NodeId,
    /// Best rank first; this order decides vote ties.
    pub paths: Vec<Path>,
}

/// JSON form of a graph. Learner parameters live in checkpoint files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<EdgeEntry>,
    pub ensembles: Vec<EnsembleEntry>,
}

impl Topology {
    pub fn of(graph: &Graph, checkpoint: impl Fn(EdgeId) -> String) -> Self {
        Topology {
            nodes: graph.nodes.clone(),
            edges: graph
                .edges
                .iter()
                .map(|e| EdgeEntry {
                    id: e.id,
                    inputs: e.inputs.clone(),
                    output: e.output,
                    encoding: e.encoding,
                    checkpoint: checkpoint(e.id),
                })
                .collect(),
            ensembles: graph
                .ensembles
                .iter()
                .map(|(t, p)| EnsembleEntry {
                    target: *t,
                    paths: p.clone(),
                })
                .collect(),
        }
    }

    pub fn write(&self, path: &FsPath) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &FsPath) -> Result<Self> {
        if !path.exists() {
            return Err(Error::TopologyMissing);
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Rebuilds the graph, loading checkpoints relative to `base`.
    pub fn load(&self, base: &FsPath) -> Result<Graph> {
        let edges = self
            .edges
            .iter()
            .map(|e| {
                let model = read_checkpoint(&base.join(PathBuf::from(&e.checkpoint)))?;
                Ok(HyperEdge {
                    id: e.id,
                    inputs: e.inputs.clone(),
                    output: e.output,
                    encoding: e.encoding,
                    model,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut g = Graph::new(self.nodes.clone(), edges)?;
        for en in &self.ensembles {
            g.set_ensemble(en.target, en.paths.clone())?;
        }
        Ok(g)
    }
}

impl HyperEdge {
    pub fn is_classifier(&self) -> bool {
        self.model.spec().head == Head::Classification
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{LearnerConfig, NodeKind};
    use crate::learner::{Activation, DenseModel, ModelSpec};

    fn vnode(id: u32, sensor: bool) -> NodeSpec {
        NodeSpec {
            id: NodeId(id),
            name: format!("v{id}"),
            kind: NodeKind::Vector { dimension: 2 },
            units: "u".into(),
            sensor,
            normalization: None,
        }
    }

    /// Dense vector edge computing `W x + b`.
    fn linear(id: u32, from: u32, to: u32, w: [f32; 4], b: [f32; 2]) -> HyperEdge {
        let spec = ModelSpec {
            input_dim: 2,
            hidden: vec![],
            output_dim: 2,
            activation: Activation::Tanh,
            head: Head::Regression,
            seed: 0,
        };
        let mut params = w.to_vec();
        params.extend_from_slice(&b);
        HyperEdge {
            id: EdgeId(id),
            inputs: vec![NodeId(from)],
            output: NodeId(to),
            encoding: Encoding::Dense,
            model: DenseModel::from_parameters(spec, params).unwrap(),
        }
    }

    const ID: [f32; 4] = [1.0, 0.0, 0.0, 1.0];

    fn sensors(v: [f32; 2]) -> LayerSet {
        LayerSet::from([(NodeId(0), Tensor::from_f32(vec![2], v.to_vec()).unwrap())])
    }

    #[test]
    fn single_edge_graph_has_one_path() {
        let g = Graph::new(vec![vnode(0, true), vnode(1, false)], vec![linear(0, 0, 1, ID, [0.0; 2])]).unwrap();
        assert_eq!(enumerate_paths(&g, NodeId(1), 2), vec![Path::new(vec![EdgeId(0)])]);
    }

    #[test]
    fn star_graph_counts() {
        let k = 4;
        let mut nodes = vec![vnode(0, true), vnode(1, false)];
        let mut edges = vec![linear(0, 0, 1, ID, [0.0; 2])];
        for i in 0..k {
            nodes.push(vnode(2 + i, false));
            edges.push(linear(10 + i, 0, 2 + i, ID, [0.0; 2]));
            edges.push(linear(20 + i, 2 + i, 1, ID, [0.0; 2]));
        }
        let g = Graph::new(nodes, edges).unwrap();
        let paths = enumerate_paths(&g, NodeId(1), 2);
        assert_eq!(paths.len(), k as usize + 1);
        assert_eq!(enumerate_paths(&g, NodeId(1), 1).len(), 1);
        assert!(paths.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn identity_paths_return_their_input() {
        let g = Graph::new(
            vec![vnode(0, true), vnode(1, false), vnode(2, false)],
            vec![linear(0, 0, 1, ID, [0.0; 2]), linear(1, 1, 2, ID, [0.0; 2])],
        )
        .unwrap();
        let s = sensors([0.25, -3.0]);
        for p in [vec![EdgeId(0)], vec![EdgeId(0), EdgeId(1)]] {
            let out = evaluate_path(&g, &Path::new(p), &s).unwrap();
            assert_eq!(out.as_f32().unwrap(), &[0.25, -3.0]);
        }
    }

    #[test]
    fn two_hop_composition_by_hand() {
        // f(x) = [x0 + 2 x1, -x1] + [1, 0]; g(y) = [3 y0, y0 - y1] + [0, 2]
        let g = Graph::new(
            vec![vnode(0, true), vnode(1, false), vnode(2, false)],
            vec![
                linear(0, 0, 1, [1.0, 2.0, 0.0, -1.0], [1.0, 0.0]),
                linear(1, 1, 2, [3.0, 0.0, 1.0, -1.0], [0.0, 2.0]),
            ],
        )
        .unwrap();
        let out = evaluate_path(&g, &Path::new(vec![EdgeId(0), EdgeId(1)]), &sensors([1.0, 2.0])).unwrap();
        // f = [6, -2]; g = [18, 10]
        assert_eq!(out.as_f32().unwrap(), &[18.0, 10.0]);
    }

    #[test]
    fn missing_sensor_is_rejected_and_ground_truth_ignored() {
        let g = Graph::new(
            vec![vnode(0, true), vnode(1, false), vnode(2, false)],
            vec![linear(0, 0, 1, ID, [0.0; 2]), linear(1, 1, 2, ID, [0.0; 2])],
        )
        .unwrap();
        let p = Path::new(vec![EdgeId(0), EdgeId(1)]);
        assert!(matches!(evaluate_path(&g, &p, &LayerSet::new()), Err(Error::InvalidInput(_))));
        let mut s = sensors([1.0, 1.0]);
        s.insert(NodeId(1), Tensor::from_f32(vec![2], vec![100.0, 100.0]).unwrap());
        assert_eq!(evaluate_path(&g, &p, &s).unwrap().as_f32().unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn consensus_intermediates_use_the_node_ensemble() {
        // Two ways to reach node 1 (x and 3x); node 2 reads node 1.
        let g0 = Graph::new(
            vec![vnode(0, true), vnode(1, false), vnode(2, false), vnode(3, false)],
            vec![
                linear(0, 0, 1, ID, [0.0; 2]),
                linear(1, 0, 3, ID, [0.0; 2]),
                linear(2, 3, 1, [3.0, 0.0, 0.0, 3.0], [0.0; 2]),
                linear(3, 1, 2, ID, [0.0; 2]),
            ],
        )
        .unwrap();
        let mut g = g0.clone();
        g.set_ensemble(NodeId(1), vec![Path::new(vec![EdgeId(0)]), Path::new(vec![EdgeId(1), EdgeId(2)])])
            .unwrap();
        g.set_ensemble(NodeId(2), vec![Path::new(vec![EdgeId(0), EdgeId(3)])]).unwrap();
        let s = sensors([1.0, 2.0]);
        let single = ensemble_predict(&g, NodeId(2), &s, IntermediateMode::SingleEdge).unwrap();
        assert_eq!(single.pseudo_label.as_f32().unwrap(), &[1.0, 2.0]);
        let cons = ensemble_predict(&g, NodeId(2), &s, IntermediateMode::Consensus).unwrap();
        // median of {x, 3x} over two paths is 2x
        assert_eq!(cons.pseudo_label.as_f32().unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn invalid_graphs_are_rejected() {
        let n = vec![vnode(0, true), vnode(1, false)];
        assert!(Graph::new(n.clone(), vec![linear(0, 1, 0, ID, [0.0; 2])]).is_err());
        assert!(Graph::new(n.clone(), vec![linear(0, 1, 1, ID, [0.0; 2])]).is_err());
        assert!(Graph::new(n.clone(), vec![linear(0, 0, 1, ID, [0.0; 2]), linear(1, 0, 1, ID, [0.0; 2])]).is_err());
        let e = HyperEdge::new(EdgeId(0), &[&n[0]], &n[1], Encoding::Dense, &LearnerConfig::default(), 1).unwrap();
        let mut g = Graph::new(n, vec![e]).unwrap();
        assert!(g.set_ensemble(NodeId(1), vec![Path::new(vec![EdgeId(9)])]).is_err());
        assert!(g.set_ensemble(NodeId(1), vec![]).is_err());
    }

    #[test]
    fn topology_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = Graph::new(
            vec![vnode(0, true), vnode(1, false), vnode(2, false)],
            vec![linear(0, 0, 1, [1.0, 2.0, 0.0, -1.0], [1.0, 0.0]), linear(1, 1, 2, ID, [0.0; 2]), linear(2, 0, 2, ID, [0.5; 2])],
        )
        .unwrap();
        g.set_ensemble(NodeId(2), vec![Path::new(vec![EdgeId(2)]), Path::new(vec![EdgeId(0), EdgeId(1)])])
            .unwrap();
        let topo = Topology::of(&g, |id| format!("edge_{}.ngcm", id.0));
        for e in g.edges() {
            crate::learner::write_checkpoint(&dir.path().join(format!("edge_{}.ngcm", e.id.0)), &e.model).unwrap();
        }
        let file = dir.path().join("topology.json");
        topo.write(&file).unwrap();
        let back = Topology::read(&file).unwrap();
        assert_eq!(back, topo);
        assert_eq!(back.load(dir.path()).unwrap(), g);
        assert!(matches!(Topology::read(&dir.path().join("none.json")), Err(Error::TopologyMissing)));
    }
}
