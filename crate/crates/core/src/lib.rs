//! Neural graph consensus: a hypergraph of small learners that improve
//! semi-supervised by training on the consensus of many prediction paths,
//! plus a simulator for the classification voting model behind it.

pub mod error;
pub mod graph;
pub mod learner;
pub mod orchestrator;
pub mod seed;
pub mod sim;
pub mod tensor;
pub mod world;

pub use error::{Error, Result};
pub use tensor::{DType, Tensor, TensorData};
