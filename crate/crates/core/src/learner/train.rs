use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::loss::LossKind;
use super::model::{batch_loss_grad, DenseModel, Head, TargetRef};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 32,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainTargets {
    Values(Vec<f32>),
    Labels(Vec<u16>),
}

/// Packed training rows. `weights` (optional) are per target element for
/// regression and per row for classification; zero excludes the target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    pub input_dim: usize,
    pub output_dim: usize,
    pub inputs: Vec<f32>,
    pub targets: TrainTargets,
    pub weights: Option<Vec<f32>>,
}

impl TrainSet {
    pub fn rows(&self) -> usize {
        self.inputs.len() / self.input_dim
    }

    fn validate(&self, model: &DenseModel) -> Result<()> {
        let spec = model.spec();
        if self.input_dim != spec.input_dim {
            return Err(Error::invalid(format!(
                "training inputs have width {}, model expects {}",
                self.input_dim, spec.input_dim
            )));
        }
        let rows = self.rows();
        if rows == 0 || self.inputs.len() % self.input_dim != 0 {
            return Err(Error::invalid("training set is empty or ragged"));
        }
        let per_row = match (&self.targets, spec.head) {
            (TrainTargets::Values(v), Head::Regression) => {
                if v.len() != rows * spec.output_dim {
                    return Err(Error::invalid("target rows do not match input rows"));
                }
                spec.output_dim
            }
            (TrainTargets::Labels(l), Head::Classification) => {
                if l.len() != rows {
                    return Err(Error::invalid("label count does not match input rows"));
                }
                if l.iter().any(|&c| c as usize >= spec.output_dim) {
                    return Err(Error::invalid("label out of range"));
                }
                1
            }
            _ => return Err(Error::invalid("target kind does not match model head")),
        };
        if let Some(w) = &self.weights {
            if w.len() != rows * per_row {
                return Err(Error::invalid("weight count does not match targets"));
            }
        }
        Ok(())
    }

    pub fn loss_kind(&self) -> LossKind {
        match self.targets {
            TrainTargets::Values(_) => LossKind::L2,
            TrainTargets::Labels(_) => LossKind::CrossEntropy,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: DenseModel,
    /// Mean training loss of every epoch.
    pub losses: Vec<f64>,
}

/// Trains on a full `[n, input]` tensor with L2 (float targets) or
/// cross-entropy (label targets).
pub fn fit(model: DenseModel, inputs: &Tensor, targets: &Tensor, config: &TrainConfig) -> Result<FitOutcome> {
    let set = TrainSet {
        input_dim: inputs.last_dim(),
        output_dim: model.spec().output_dim,
        inputs: inputs.f32_values()?.to_vec(),
        targets: match targets.as_labels() {
            Some(l) => TrainTargets::Labels(l.to_vec()),
            None => TrainTargets::Values(targets.f32_values()?.to_vec()),
        },
        weights: None,
    };
    fit_set(model, &set, config)
}

/// Mini-batch AdamW with decoupled weight decay. Moment estimates start from
/// zero on every call; the model's cumulative step count keeps growing.
pub fn fit_set(mut model: DenseModel, set: &TrainSet, config: &TrainConfig) -> Result<FitOutcome> {
    config.validate()?;
    set.validate(&model)?;
    let spec = model.spec().clone();
    let rows = set.rows();
    let d_in = set.input_dim;
    let d_out = spec.output_dim;
    let per_row_w = match set.targets {
        TrainTargets::Values(_) => d_out,
        TrainTargets::Labels(_) => 1,
    };

    model.first_moment.iter_mut().for_each(|m| *m = 0.0);
    model.second_moment.iter_mut().for_each(|v| *v = 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);
    let mut order: Vec<usize> = (0..rows).collect();
    let mut grad = vec![0.0f32; model.params.len()];
    let mut xb = Vec::with_capacity(config.batch_size * d_in);
    let mut tv = Vec::new();
    let mut tl = Vec::new();
    let mut wb = Vec::new();
    let mut local_step = 0u64;
    let mut losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            xb.clear();
            tv.clear();
            tl.clear();
            wb.clear();
            for &r in batch {
                xb.extend_from_slice(&set.inputs[r * d_in..(r + 1) * d_in]);
                match &set.targets {
                    TrainTargets::Values(v) => tv.extend_from_slice(&v[r * d_out..(r + 1) * d_out]),
                    TrainTargets::Labels(l) => tl.push(l[r]),
                }
                if let Some(w) = &set.weights {
                    wb.extend_from_slice(&w[r * per_row_w..(r + 1) * per_row_w]);
                }
            }
            let target = match set.targets {
                TrainTargets::Values(_) => TargetRef::Values(&tv),
                TrainTargets::Labels(_) => TargetRef::Labels(&tl),
            };
            let weights = set.weights.as_ref().map(|_| wb.as_slice());
            let loss = batch_loss_grad(&spec, &model.params, &xb, &target, weights, &mut grad);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            epoch_loss += loss as f64 * batch.len() as f64;
            local_step += 1;
            adamw_step(&mut model, &grad, config, local_step);
        }
        let mean = epoch_loss / rows as f64;
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        losses.push(mean);
    }
    model.steps += local_step;
    Ok(FitOutcome { model, losses })
}

fn adamw_step(model: &mut DenseModel, grad: &[f32], config: &TrainConfig, t: u64) {
    let lr = config.learning_rate;
    let bc1 = 1.0 - BETA1.powi(t as i32);
    let bc2 = 1.0 - BETA2.powi(t as i32);
    let decay = (1.0 - lr * config.weight_decay) as f32;
    for i in 0..grad.len() {
        let g = grad[i] as f64;
        let m = BETA1 * model.first_moment[i] as f64 + (1.0 - BETA1) * g;
        let v = BETA2 * model.second_moment[i] as f64 + (1.0 - BETA2) * g * g;
        model.first_moment[i] = m as f32;
        model.second_moment[i] = v as f32;
        let update = lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPSILON);
        model.params[i] = model.params[i] * decay - update as f32;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::model::{Activation, ModelSpec};
    use rand::Rng;

    fn linear_spec(input_dim: usize) -> ModelSpec {
        ModelSpec {
            input_dim,
            hidden: vec![],
            output_dim: 1,
            activation: Activation::Tanh,
            head: Head::Regression,
            seed: 5,
        }
    }

    fn linear_data(n: usize) -> (Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a: f32 = rng.gen_range(-1.0..1.0);
            let b: f32 = rng.gen_range(-1.0..1.0);
            x.extend([a, b]);
            y.push(0.7 * a - 1.3 * b + 0.25);
        }
        (
            Tensor::from_f32(vec![n, 2], x).unwrap(),
            Tensor::from_f32(vec![n, 1], y).unwrap(),
        )
    }

    #[test]
    fn rejects_zero_epochs() {
        let m = DenseModel::new(linear_spec(2)).unwrap();
        let (x, y) = linear_data(8);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(fit(m, &x, &y, &cfg).is_err());
    }

    #[test]
    fn linear_model_fits_linear_data() {
        // The closed-form least-squares solution has zero residual.
        let m = DenseModel::new(linear_spec(2)).unwrap();
        let (x, y) = linear_data(256);
        let cfg = TrainConfig {
            epochs: 200,
            learning_rate: 0.02,
            weight_decay: 0.0,
            batch_size: 16,
            shuffle_seed: 1,
        };
        let out = fit(m, &x, &y, &cfg).unwrap();
        assert!(*out.losses.last().unwrap() < 1e-6, "{:?}", out.losses.last());
        let p = out.model.parameters();
        assert!((p[0] - 0.7).abs() < 1e-2 && (p[1] + 1.3).abs() < 1e-2 && (p[2] - 0.25).abs() < 1e-2);
    }

    #[test]
    fn convex_full_batch_trace_is_non_increasing() {
        let m = DenseModel::new(linear_spec(2)).unwrap();
        let (x, y) = linear_data(128);
        let cfg = TrainConfig {
            epochs: 60,
            learning_rate: 5e-3,
            weight_decay: 0.0,
            batch_size: 128,
            shuffle_seed: 1,
        };
        let out = fit(m, &x, &y, &cfg).unwrap();
        for w in out.losses[5..].windows(2) {
            assert!(w[1] <= w[0], "{:?}", w);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = linear_data(64);
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let spec = ModelSpec {
            hidden: vec![6],
            ..linear_spec(2)
        };
        let a = fit(DenseModel::new(spec.clone()).unwrap(), &x, &y, &cfg).unwrap();
        let b = fit(DenseModel::new(spec).unwrap(), &x, &y, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn non_finite_loss_names_epoch() {
        let m = DenseModel::new(linear_spec(2)).unwrap();
        let x = Tensor::from_f32(vec![1, 2], vec![f32::NAN, 0.0]).unwrap();
        let y = Tensor::from_f32(vec![1, 1], vec![0.0]).unwrap();
        let err = fit(m, &x, &y, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 0 }));
    }

    #[test]
    fn zero_weights_exclude_targets() {
        let m = DenseModel::new(linear_spec(1)).unwrap();
        let set = TrainSet {
            input_dim: 1,
            output_dim: 1,
            inputs: vec![1.0, 1.0],
            targets: TrainTargets::Values(vec![1.0, 1000.0]),
            weights: Some(vec![1.0, 0.0]),
        };
        let cfg = TrainConfig {
            epochs: 400,
            learning_rate: 0.05,
            weight_decay: 0.0,
            batch_size: 2,
            shuffle_seed: 0,
        };
        let out = fit_set(m, &set, &cfg).unwrap();
        let y = out.model.forward(&Tensor::from_f32(vec![1, 1], vec![1.0]).unwrap()).unwrap();
        assert!((y.as_f32().unwrap()[0] - 1.0).abs() < 1e-2);
    }
}
