use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::loss::{LossKind, CE_EPSILON};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Regression,
    /// Softmax over `output_dim` classes.
    Classification,
}

impl Head {
    pub fn code(self) -> u8 {
        match self {
            Head::Regression => 0,
            Head::Classification => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Head::Regression),
            1 => Some(Head::Classification),
            _ => None,
        }
    }
}

/// Architecture of a small fully connected learner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub head: Head,
    pub seed: u64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::invalid(format!(
                "model widths must be positive: {self:?}"
            )));
        }
        if self.head == Head::Classification && self.output_dim < 2 {
            return Err(Error::invalid(
                "classification head needs at least two classes",
            ));
        }
        Ok(())
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.output_dim);
        w
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }
}

/// A feedforward learner with its AdamW state.
///
/// Parameters are laid out layer by layer: the `out x in` weight matrix in
/// row-major order followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseModel {
    pub(crate) spec: ModelSpec,
    pub(crate) params: Vec<f32>,
    pub(crate) first_moment: Vec<f32>,
    pub(crate) second_moment: Vec<f32>,
    pub(crate) steps: u64,
}

impl DenseModel {
    /// Builds a model with Glorot-uniform weights drawn from `spec.seed` and zero biases.
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut params = Vec::with_capacity(spec.param_count());
        for pair in spec.widths().windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.gen_range(-limit..limit) as f32);
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Ok(Self::with_params_unchecked(spec, params))
    }

    pub fn from_parameters(spec: ModelSpec, params: Vec<f32>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::invalid(format!(
                "spec needs {} parameters, got {}",
                spec.param_count(),
                params.len()
            )));
        }
        Ok(Self::with_params_unchecked(spec, params))
    }

    fn with_params_unchecked(spec: ModelSpec, params: Vec<f32>) -> Self {
        let n = params.len();
        DenseModel {
            spec,
            params,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn parameters(&self) -> &[f32] {
        &self.params
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub(crate) fn set_steps(&mut self, steps: u64) {
        self.steps = steps;
    }

    /// Runs the model on every row of `batch` (trailing dimension = input width).
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let rows = self.check_batch(batch)?;
        let mut out = Vec::new();
        self.forward_rows(batch.f32_values()?, &mut out);
        let mut shape = batch.shape().to_vec();
        *shape.last_mut().unwrap() = self.spec.output_dim;
        debug_assert_eq!(out.len(), rows * self.spec.output_dim);
        Tensor::from_f32(shape, out)
    }

    /// Forward pass over packed rows, appending outputs to `out`.
    pub fn forward_rows(&self, rows: &[f32], out: &mut Vec<f32>) {
        let mut scratch = Scratch::new(&self.spec);
        for row in rows.chunks_exact(self.spec.input_dim) {
            forward_row(&self.spec, &self.params, row, &mut scratch);
            out.extend_from_slice(scratch.output());
        }
    }

    pub fn loss(&self, batch: &Tensor, target: &Tensor, kind: LossKind) -> Result<f64> {
        let rows = self.check_batch(batch)?;
        let target = TargetRef::from_tensor(target, kind, rows, &self.spec)?;
        let params: Vec<f64> = self.params.iter().map(|&p| p as f64).collect();
        let input: Vec<f64> = batch.f32_values()?.iter().map(|&v| v as f64).collect();
        Ok(batch_loss(&self.spec, &params, &input, &target, None))
    }

    /// Analytic gradient of the mean loss with respect to the parameter vector.
    pub fn backward(&self, batch: &Tensor, target: &Tensor, kind: LossKind) -> Result<Vec<f32>> {
        let rows = self.check_batch(batch)?;
        let target = TargetRef::from_tensor(target, kind, rows, &self.spec)?;
        let mut grad = vec![0.0f32; self.params.len()];
        batch_loss_grad(
            &self.spec,
            &self.params,
            batch.f32_values()?,
            &target,
            None,
            &mut grad,
        );
        Ok(grad)
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        if batch.last_dim() != self.spec.input_dim {
            return Err(Error::invalid(format!(
                "batch trailing dimension {} does not match model input {}",
                batch.last_dim(),
                self.spec.input_dim
            )));
        }
        batch.f32_values()?;
        Ok(batch.rows())
    }
}

/// Training targets borrowed from a tensor or a packed buffer.
#[derive(Debug, Clone, Copy)]
pub(crate) enum TargetRef<'a> {
    Values(&'a [f32]),
    Labels(&'a [u16]),
}

impl<'a> TargetRef<'a> {
    pub(crate) fn from_tensor(
        target: &'a Tensor,
        kind: LossKind,
        rows: usize,
        spec: &ModelSpec,
    ) -> Result<Self> {
        match (kind, spec.head) {
            (LossKind::L2, Head::Regression) => {
                let v = target.f32_values()?;
                if v.len() != rows * spec.output_dim {
                    return Err(Error::ShapeMismatch {
                        expected: vec![rows, spec.output_dim],
                        got: target.shape().to_vec(),
                    });
                }
                Ok(TargetRef::Values(v))
            }
            (LossKind::CrossEntropy, Head::Classification) => {
                let v = target.label_values()?;
                if v.len() != rows {
                    return Err(Error::ShapeMismatch {
                        expected: vec![rows],
                        got: target.shape().to_vec(),
                    });
                }
                if let Some(&bad) = v.iter().find(|&&l| l as usize >= spec.output_dim) {
                    return Err(Error::invalid(format!(
                        "label {bad} out of range for {} classes",
                        spec.output_dim
                    )));
                }
                Ok(TargetRef::Labels(v))
            }
            (kind, head) => Err(Error::invalid(format!(
                "loss {kind:?} is not defined for a {head:?} head"
            ))),
        }
    }
}

#[inline]
fn cast<T: Float>(x: f64) -> T {
    T::from(x).unwrap()
}

pub(crate) struct Scratch<T> {
    acts: Vec<Vec<T>>,
    deltas: Vec<Vec<T>>,
}

impl<T: Float> Scratch<T> {
    pub(crate) fn new(spec: &ModelSpec) -> Self {
        let widths = spec.widths();
        Scratch {
            acts: widths.iter().map(|&w| vec![T::zero(); w]).collect(),
            deltas: widths.iter().map(|&w| vec![T::zero(); w]).collect(),
        }
    }

    pub(crate) fn output(&self) -> &[T] {
        self.acts.last().unwrap()
    }
}

pub(crate) fn forward_row<T: Float>(spec: &ModelSpec, params: &[T], row: &[T], s: &mut Scratch<T>) {
    let widths = spec.widths();
    let layers = widths.len() - 1;
    s.acts[0].copy_from_slice(row);
    let mut offset = 0;
    for l in 0..layers {
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        let weights = &params[offset..offset + fan_in * fan_out];
        let bias = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        offset += fan_in * fan_out + fan_out;
        let (lower, upper) = s.acts.split_at_mut(l + 1);
        let input = &lower[l];
        let out = &mut upper[0];
        for o in 0..fan_out {
            let w = &weights[o * fan_in..(o + 1) * fan_in];
            let mut z = bias[o];
            for i in 0..fan_in {
                z = z + w[i] * input[i];
            }
            out[o] = z;
        }
        let last = l + 1 == layers;
        if !last {
            match spec.activation {
                Activation::Relu => out.iter_mut().for_each(|z| *z = z.max(T::zero())),
                Activation::Tanh => out.iter_mut().for_each(|z| *z = z.tanh()),
            }
        } else if spec.head == Head::Classification {
            softmax_in_place(out);
        }
    }
}

pub(crate) fn softmax_in_place<T: Float>(z: &mut [T]) {
    let max = z.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in z.iter_mut() {
        *v = *v / sum;
    }
}

fn normalizer<T: Float>(
    target: &TargetRef<'_>,
    rows: usize,
    out_dim: usize,
    weights: Option<&[f32]>,
) -> T {
    match weights {
        Some(w) => w.iter().fold(T::zero(), |a, &x| a + cast::<T>(x as f64)),
        None => match target {
            TargetRef::Values(_) => cast((rows * out_dim) as f64),
            TargetRef::Labels(_) => cast(rows as f64),
        },
    }
}

/// Per-row loss contribution (unnormalized) of the current `s.output()`.
fn row_loss<T: Float>(
    out: &[T],
    target: &TargetRef<'_>,
    r: usize,
    weights: Option<&[f32]>,
) -> T {
    let d = out.len();
    match target {
        TargetRef::Values(t) => {
            let mut acc = T::zero();
            for k in 0..d {
                let w = weights.map_or(T::one(), |w| cast(w[r * d + k] as f64));
                let e = out[k] - cast(t[r * d + k] as f64);
                acc = acc + w * e * e;
            }
            acc
        }
        TargetRef::Labels(l) => {
            let w = weights.map_or(T::one(), |w| cast(w[r] as f64));
            let p = out[l[r] as usize].max(cast(CE_EPSILON));
            -w * p.ln()
        }
    }
}

/// Mean loss over a packed batch, with optional per-target weights
/// (per element for regression, per row for classification).
pub(crate) fn batch_loss<T: Float>(
    spec: &ModelSpec,
    params: &[T],
    input: &[T],
    target: &TargetRef<'_>,
    weights: Option<&[f32]>,
) -> T {
    let rows = input.len() / spec.input_dim;
    let norm: T = normalizer(target, rows, spec.output_dim, weights);
    if norm <= T::zero() {
        return T::zero();
    }
    let mut s = Scratch::new(spec);
    let mut total = T::zero();
    for (r, row) in input.chunks_exact(spec.input_dim).enumerate() {
        forward_row(spec, params, row, &mut s);
        total = total + row_loss(s.output(), target, r, weights);
    }
    total / norm
}

/// Accumulates the gradient of the mean batch loss into `grad` (overwritten)
/// and returns the loss.
pub(crate) fn batch_loss_grad<T: Float>(
    spec: &ModelSpec,
    params: &[T],
    input: &[T],
    target: &TargetRef<'_>,
    weights: Option<&[f32]>,
    grad: &mut [T],
) -> T {
    grad.iter_mut().for_each(|g| *g = T::zero());
    let rows = input.len() / spec.input_dim;
    let norm: T = normalizer(target, rows, spec.output_dim, weights);
    if norm <= T::zero() {
        return T::zero();
    }
    let widths = spec.widths();
    let layers = widths.len() - 1;
    let mut offsets = Vec::with_capacity(layers);
    let mut off = 0;
    for l in 0..layers {
        offsets.push(off);
        off += widths[l] * widths[l + 1] + widths[l + 1];
    }
    let two: T = cast(2.0);
    let eps: T = cast(CE_EPSILON);
    let mut s = Scratch::new(spec);
    let mut total = T::zero();
    for (r, row) in input.chunks_exact(spec.input_dim).enumerate() {
        forward_row(spec, params, row, &mut s);
        total = total + row_loss(s.output(), target, r, weights);

        // Output-layer delta (gradient w.r.t. pre-softmax / linear outputs).
        let d = spec.output_dim;
        {
            let out = &s.acts[layers];
            let delta = &mut s.deltas[layers];
            match target {
                TargetRef::Values(t) => {
                    for k in 0..d {
                        let w = weights.map_or(T::one(), |w| cast(w[r * d + k] as f64));
                        delta[k] = two * w * (out[k] - cast(t[r * d + k] as f64)) / norm;
                    }
                }
                TargetRef::Labels(l) => {
                    let w = weights.map_or(T::one(), |w| cast(w[r] as f64));
                    let true_class = l[r] as usize;
                    if out[true_class] < eps {
                        // Clamped region: the loss is locally constant.
                        delta.iter_mut().for_each(|x| *x = T::zero());
                    } else {
                        for k in 0..d {
                            let y = if k == true_class { T::one() } else { T::zero() };
                            delta[k] = w * (out[k] - y) / norm;
                        }
                    }
                }
            }
        }

        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let base = offsets[l];
            let (acts_lo, _) = s.acts.split_at(l + 1);
            let input_act = &acts_lo[l];
            let (deltas_lo, deltas_hi) = s.deltas.split_at_mut(l + 1);
            let delta = &deltas_hi[0];
            for o in 0..fan_out {
                let g = delta[o];
                if g == T::zero() {
                    continue;
                }
                let gw = &mut grad[base + o * fan_in..base + (o + 1) * fan_in];
                for i in 0..fan_in {
                    gw[i] = gw[i] + g * input_act[i];
                }
                let bi = base + fan_in * fan_out + o;
                grad[bi] = grad[bi] + g;
            }
            if l == 0 {
                break;
            }
            let prev = &mut deltas_lo[l];
            prev.iter_mut().for_each(|x| *x = T::zero());
            let weights_l = &params[base..base + fan_in * fan_out];
            for o in 0..fan_out {
                let g = delta[o];
                if g == T::zero() {
                    continue;
                }
                let w = &weights_l[o * fan_in..(o + 1) * fan_in];
                for i in 0..fan_in {
                    prev[i] = prev[i] + w[i] * g;
                }
            }
            let a = &input_act;
            match spec.activation {
                Activation::Tanh => {
                    for i in 0..fan_in {
                        prev[i] = prev[i] * (T::one() - a[i] * a[i]);
                    }
                }
                Activation::Relu => {
                    for i in 0..fan_in {
                        if a[i] <= T::zero() {
                            prev[i] = T::zero();
                        }
                    }
                }
            }
        }
    }
    total / norm
}
