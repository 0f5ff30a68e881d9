use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::loss::LossKind;
use super::model::{batch_loss, batch_loss_grad, DenseModel, TargetRef};

/// Central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-4;

const MAX_CHECKED_PARAMS: usize = 5000;

/// Largest relative disagreement between the analytic gradient and central
/// finite differences, `|a - n| / max(1e-8, |a| + |n|)`, evaluated in f64.
pub fn grad_check(model: &DenseModel, batch: &Tensor, target: &Tensor, kind: LossKind) -> Result<f64> {
    let spec = model.spec();
    if spec.param_count() > MAX_CHECKED_PARAMS {
        return Err(Error::invalid(format!(
            "grad_check is limited to {MAX_CHECKED_PARAMS} parameters"
        )));
    }
    if batch.last_dim() != spec.input_dim {
        return Err(Error::invalid("batch width does not match model input"));
    }
    let rows = batch.rows();
    let target = TargetRef::from_tensor(target, kind, rows, spec)?;
    let input: Vec<f64> = batch.f32_values()?.iter().map(|&v| v as f64).collect();
    let mut params: Vec<f64> = model.parameters().iter().map(|&p| p as f64).collect();

    let mut analytic = vec![0.0f64; params.len()];
    batch_loss_grad(spec, &params, &input, &target, None, &mut analytic);

    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + GRAD_CHECK_STEP;
        let up = batch_loss(spec, &params, &input, &target, None);
        params[i] = orig - GRAD_CHECK_STEP;
        let down = batch_loss(spec, &params, &input, &target, None);
        params[i] = orig;
        let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
        let a = analytic[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::model::{Activation, Head, ModelSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_input_zero_target_is_exact() {
        let spec = ModelSpec {
            input_dim: 3,
            hidden: vec![4],
            output_dim: 2,
            activation: Activation::Tanh,
            head: Head::Regression,
            seed: 1,
        };
        let m = DenseModel::new(spec).unwrap();
        let x = Tensor::zeros(vec![5, 3]).unwrap();
        let t = Tensor::zeros(vec![5, 2]).unwrap();
        let g = m.backward(&x, &t, LossKind::L2).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert_eq!(grad_check(&m, &x, &t, LossKind::L2).unwrap(), 0.0);
    }

    #[test]
    fn three_class_head_passes() {
        let spec = ModelSpec {
            input_dim: 4,
            hidden: vec![6],
            output_dim: 3,
            activation: Activation::Tanh,
            head: Head::Classification,
            seed: 21,
        };
        let m = DenseModel::new(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f32> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<u16> = (0..10).map(|_| rng.gen_range(0..3)).collect();
        let err = grad_check(
            &m,
            &Tensor::from_f32(vec![10, 4], x).unwrap(),
            &Tensor::from_labels(vec![10], y).unwrap(),
            LossKind::CrossEntropy,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn relu_away_from_the_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for head in [Head::Regression, Head::Classification] {
            let spec = ModelSpec {
                input_dim: 3,
                hidden: vec![5, 4],
                output_dim: 3,
                activation: Activation::Relu,
                head,
                seed: 0,
            };
            // random biases keep every pre-activation off zero
            let params: Vec<f32> = (0..spec.param_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m = DenseModel::from_parameters(spec, params).unwrap();
            let x = Tensor::from_f32(vec![6, 3], (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let (t, kind) = match head {
                Head::Regression => (
                    Tensor::from_f32(vec![6, 3], (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
                    LossKind::L2,
                ),
                Head::Classification => (
                    Tensor::from_labels(vec![6], (0..6).map(|_| rng.gen_range(0..3)).collect()).unwrap(),
                    LossKind::CrossEntropy,
                ),
            };
            let err = grad_check(&m, &x, &t, kind).unwrap();
            assert!(err < 1e-4, "{head:?}: {err}");
        }
    }
}
