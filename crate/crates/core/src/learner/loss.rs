use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probabilities are clamped to this value before taking the log.
pub const CE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L2,
    CrossEntropy,
}

/// Mean of squared element differences.
pub fn loss_l2(pred: &Tensor, target: &Tensor) -> Result<f64> {
    pred.ensure_same_shape(target)?;
    let (p, t) = (pred.f32_values()?, target.f32_values()?);
    let sum: f64 = p
        .iter()
        .zip(t)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sum / p.len() as f64)
}

/// Mean negative log-probability of the true class. `pred` is `[.., C]`
/// probability rows and `labels` holds one class index per row.
pub fn loss_cross_entropy(pred: &Tensor, labels: &Tensor) -> Result<f64> {
    let probs = pred.f32_values()?;
    let labels_v = labels.label_values()?;
    let classes = pred.last_dim();
    if pred.rows() != labels_v.len() {
        return Err(Error::ShapeMismatch {
            expected: pred.shape()[..pred.shape().len() - 1].to_vec(),
            got: labels.shape().to_vec(),
        });
    }
    let mut sum = 0.0;
    for (row, &l) in probs.chunks_exact(classes).zip(labels_v) {
        let l = l as usize;
        if l >= classes {
            return Err(Error::invalid(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        sum -= (row[l] as f64).max(CE_EPSILON).ln();
    }
    Ok(sum / labels_v.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn l2_hand_cases() {
        let a = Tensor::from_f32(vec![2], vec![1.0, 1.0]).unwrap();
        let z = Tensor::from_f32(vec![2], vec![0.0, 0.0]).unwrap();
        assert_eq!(loss_l2(&a, &a).unwrap(), 0.0);
        assert_eq!(loss_l2(&a, &z).unwrap(), 1.0);
        let bad = Tensor::from_f32(vec![1, 2], vec![0.0, 0.0]).unwrap();
        assert!(loss_l2(&a, &bad).is_err());
    }

    #[test]
    fn l2_matches_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (r, c) = (7, 5);
        let p: Vec<f32> = (0..r * c).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let t: Vec<f32> = (0..r * c).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut naive = 0.0f64;
        for i in 0..r {
            for j in 0..c {
                let d = p[i * c + j] as f64 - t[i * c + j] as f64;
                naive += d * d;
            }
        }
        naive /= (r * c) as f64;
        let pt = Tensor::from_f32(vec![r, c], p).unwrap();
        let tt = Tensor::from_f32(vec![r, c], t).unwrap();
        assert!((loss_l2(&pt, &tt).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_hand_cases() {
        let sure = Tensor::from_f32(vec![1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        let label = Tensor::from_labels(vec![1], vec![1]).unwrap();
        assert_eq!(loss_cross_entropy(&sure, &label).unwrap(), 0.0);
        let c = 4;
        let uniform = Tensor::from_f32(vec![1, c], vec![0.25; c]).unwrap();
        let l = loss_cross_entropy(&uniform, &Tensor::from_labels(vec![1], vec![2]).unwrap()).unwrap();
        assert!((l - (c as f64).ln()).abs() < 1e-7);
        // Zero probability on the true class is clamped, not infinite.
        let wrong = loss_cross_entropy(&sure, &Tensor::from_labels(vec![1], vec![0]).unwrap()).unwrap();
        assert!((wrong - -(CE_EPSILON.ln())).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, c) = (12, 5);
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let raw: Vec<f64> = (0..c).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            probs.extend(raw.iter().map(|v| (v / s) as f32));
            labels.push(rng.gen_range(0..c as u16));
        }
        let mut naive = 0.0;
        for i in 0..n {
            naive += -(probs[i * c + labels[i] as usize] as f64).ln();
        }
        naive /= n as f64;
        let p = Tensor::from_f32(vec![n, c], probs).unwrap();
        let l = Tensor::from_labels(vec![n], labels).unwrap();
        assert!((loss_cross_entropy(&p, &l).unwrap() - naive).abs() < 1e-12);
    }
}
