//! Fixtures shared by the benchmarks.

use ngc_core::learner::{Activation, DenseModel, Head, ModelSpec};
use ngc_core::Tensor;

/// Deterministic `[rows, width]` batch with values in `[-1, 1)`.
pub fn batch(rows: usize, width: usize) -> Tensor {
    let values = (0..rows * width).map(|i| ((i * 7919) % 2000) as f32 / 1000.0 - 1.0).collect();
    Tensor::from_f32(vec![rows, width], values).expect("shape matches values")
}

/// An edge-sized regression model.
pub fn edge_model(input_dim: usize, output_dim: usize) -> DenseModel {
    DenseModel::new(ModelSpec {
        input_dim,
        hidden: vec![32, 32],
        output_dim,
        activation: Activation::Relu,
        head: Head::Regression,
        seed: 1,
    })
    .expect("valid spec")
}

/// `n` path outputs of one 32x32 map that disagree by a small offset.
pub fn path_outputs(n: usize) -> Vec<Tensor> {
    (0..n)
        .map(|k| {
            let values = (0..1024).map(|i| (i % 97) as f32 * 0.01 + k as f32 * 0.05).collect();
            Tensor::from_f32(vec![32, 32, 1], values).expect("shape matches values")
        })
        .collect()
}
