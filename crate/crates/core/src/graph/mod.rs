//! The consensus hypergraph: typed nodes, learner edges, path enumeration
//! and evaluation, and the consensus operators.

mod consensus;
mod edge;
mod node;
mod topology;

pub use consensus::{
    consensus_mean, consensus_median, consensus_vote, gate_confidence, path_variance, unsupervised_loss,
    ConsensusKind, ConsensusResult, Gate,
};
pub use edge::{decode_output, encode_targets, output_head, EdgeId, Encoding, HyperEdge, LearnerConfig};
pub use node::{LayerSet, NodeId, NodeKind, NodeSpec, Normalization};
pub use topology::{
    consensus_for, ensemble_predict, enumerate_paths, evaluate_path, EdgeEntry, EnsembleEntry, Graph,
    IntermediateMode, Path, PathEvaluator, Topology, DEFAULT_MAX_HOPS,
};
