//! Pretraining, graph selection, self-training iterations and evaluation.

mod data;
mod evaluate;
mod experiment;
mod greedy;
mod metrics;
mod pipeline;
mod report;

pub use data::*;
pub use evaluate::*;
pub use experiment::*;
pub use greedy::*;
pub use metrics::*;
pub use pipeline::*;
pub use report::*;
