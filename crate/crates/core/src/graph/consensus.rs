use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusKind {
    Median,
    Mean,
    Vote,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusResult {
    pub kind: ConsensusKind,
    pub pseudo_label: Tensor,
    /// Population standard deviation per element (median, mean) or the
    /// winning vote fraction per element (vote).
    pub dispersion: Tensor,
    pub paths: usize,
    /// Per element of `pseudo_label`; present only after gating.
    pub mask: Option<Vec<bool>>,
}

impl ConsensusResult {
    /// Mean spread: the mean standard deviation, or the mean of
    /// `1 - agreement` for votes.
    pub fn mean_dispersion(&self) -> f64 {
        let d = self.dispersion.as_f32().unwrap_or(&[]);
        let n = d.len().max(1) as f64;
        match self.kind {
            ConsensusKind::Vote => d.iter().map(|&a| 1.0 - a as f64).sum::<f64>() / n,
            _ => d.iter().map(|&s| s as f64).sum::<f64>() / n,
        }
    }
}

fn check_stack(predictions: &[Tensor]) -> Result<()> {
    let first = predictions
        .first()
        .ok_or_else(|| Error::invalid("consensus needs at least one prediction"))?;
    for p in &predictions[1..] {
        first.ensure_same_shape(p)?;
        if p.dtype() != first.dtype() {
            return Err(Error::invalid("predictions mix dtypes"));
        }
    }
    Ok(())
}

fn continuous_stack(predictions: &[Tensor]) -> Result<Vec<&[f32]>> {
    check_stack(predictions)?;
    predictions
        .iter()
        .map(|p| p.as_f32().ok_or_else(|| Error::invalid("median consensus needs continuous predictions")))
        .collect()
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Per-element median (mean of the two central values for even counts) with
/// population standard deviation as dispersion.
pub fn consensus_median(predictions: &[Tensor]) -> Result<ConsensusResult> {
    let stack = continuous_stack(predictions)?;
    let len = stack[0].len();
    let mut label = Vec::with_capacity(len);
    let mut spread = Vec::with_capacity(len);
    let mut column = Vec::with_capacity(stack.len());
    for i in 0..len {
        column.clear();
        column.extend(stack.iter().map(|s| s[i] as f64));
        spread.push(population_std(&column) as f32);
        column.sort_by(f64::total_cmp);
        let n = column.len();
        let m = if n % 2 == 1 {
            column[n / 2]
        } else {
            0.5 * (column[n / 2 - 1] + column[n / 2])
        };
        label.push(m as f32);
    }
    let shape = predictions[0].shape().to_vec();
    Ok(ConsensusResult {
        kind: ConsensusKind::Median,
        pseudo_label: Tensor::from_f32(shape.clone(), label)?,
        dispersion: Tensor::from_f32(shape, spread)?,
        paths: predictions.len(),
        mask: None,
    })
}

/// Per-element arithmetic mean with population standard deviation.
pub fn consensus_mean(predictions: &[Tensor]) -> Result<ConsensusResult> {
    let stack = continuous_stack(predictions)?;
    let len = stack[0].len();
    let mut label = Vec::with_capacity(len);
    let mut spread = Vec::with_capacity(len);
    let mut column = Vec::with_capacity(stack.len());
    for i in 0..len {
        column.clear();
        column.extend(stack.iter().map(|s| s[i] as f64));
        label.push((column.iter().sum::<f64>() / column.len() as f64) as f32);
        spread.push(population_std(&column) as f32);
    }
    let shape = predictions[0].shape().to_vec();
    Ok(ConsensusResult {
        kind: ConsensusKind::Mean,
        pseudo_label: Tensor::from_f32(shape.clone(), label)?,
        dispersion: Tensor::from_f32(shape, spread)?,
        paths: predictions.len(),
        mask: None,
    })
}

/// Per-element plurality vote. `ranks[i]` is the rank of prediction `i`
/// (lower is better); a tie goes to the tied class voted by the best-ranked
/// path. Dispersion holds the winning vote fraction.
pub fn consensus_vote(predictions: &[Tensor], ranks: &[usize]) -> Result<ConsensusResult> {
    check_stack(predictions)?;
    if ranks.len() != predictions.len() {
        return Err(Error::invalid("one rank per prediction is required"));
    }
    let stack: Vec<&[u16]> = predictions
        .iter()
        .map(|p| p.as_labels().ok_or_else(|| Error::invalid("vote consensus needs label predictions")))
        .collect::<Result<_>>()?;
    let n = stack.len();
    let len = stack[0].len();
    // (class, votes, best rank among its voters)
    let mut tally: Vec<(u16, usize, usize)> = Vec::with_capacity(n);
    let mut label = Vec::with_capacity(len);
    let mut agreement = Vec::with_capacity(len);
    for i in 0..len {
        tally.clear();
        for (s, &rank) in stack.iter().zip(ranks) {
            let c = s[i];
            match tally.iter_mut().find(|t| t.0 == c) {
                Some(t) => {
                    t.1 += 1;
                    t.2 = t.2.min(rank);
                }
                None => tally.push((c, 1, rank)),
            }
        }
        let win = tally
            .iter()
            .copied()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
            .unwrap();
        label.push(win.0);
        agreement.push(win.1 as f32 / n as f32);
    }
    let shape = predictions[0].shape().to_vec();
    Ok(ConsensusResult {
        kind: ConsensusKind::Vote,
        pseudo_label: Tensor::from_labels(shape.clone(), label)?,
        dispersion: Tensor::from_f32(shape, agreement)?,
        paths: n,
        mask: None,
    })
}

/// Confidence thresholds; `None` disables gating for that consensus kind.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Gate {
    /// Maximum dispersion kept for regression consensus.
    pub tau: Option<f64>,
    /// Minimum agreement kept for vote consensus.
    pub alpha: Option<f64>,
}

impl Gate {
    pub fn validate(&self) -> Result<()> {
        if self.tau.is_some_and(|t| t.is_nan() || t < 0.0) {
            return Err(Error::invalid("dispersion threshold must be non-negative"));
        }
        if self.alpha.is_some_and(|a| !(0.0..=1.0).contains(&a)) {
            return Err(Error::invalid("agreement threshold must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Attaches a mask keeping confident elements. Leaves the result untouched
/// when the threshold for its kind is disabled.
pub fn gate_confidence(mut result: ConsensusResult, gate: Gate) -> ConsensusResult {
    let d = result.dispersion.as_f32().unwrap_or(&[]);
    let mask: Option<Vec<bool>> = match result.kind {
        ConsensusKind::Vote => gate.alpha.map(|a| d.iter().map(|&v| v as f64 >= a).collect()),
        _ => gate.tau.map(|t| d.iter().map(|&v| v as f64 <= t).collect()),
    };
    result.mask = mask;
    result
}

/// Sum over paths and elements of the squared distance to `pseudo_label`.
pub fn unsupervised_loss(outputs: &[Tensor], pseudo_label: &Tensor) -> Result<f64> {
    let stack = continuous_stack(outputs)?;
    let t = pseudo_label
        .as_f32()
        .ok_or_else(|| Error::invalid("pseudo-label must be continuous"))?;
    outputs[0].ensure_same_shape(pseudo_label)?;
    Ok(stack
        .iter()
        .map(|s| s.iter().zip(t).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>())
        .sum())
}

/// Sum over elements of the population variance of the path outputs,
/// computed as `E[x^2] - E[x]^2`.
pub fn path_variance(outputs: &[Tensor]) -> Result<f64> {
    let stack = continuous_stack(outputs)?;
    let n = stack.len() as f64;
    Ok((0..stack[0].len())
        .map(|i| {
            let s1: f64 = stack.iter().map(|s| s[i] as f64).sum();
            let s2: f64 = stack.iter().map(|s| (s[i] as f64).powi(2)).sum();
            s2 / n - (s1 / n).powi(2)
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f32) -> Tensor {
        Tensor::from_f32(vec![1], vec![v]).unwrap()
    }

    fn label(v: u16) -> Tensor {
        Tensor::from_labels(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn median_of_three() {
        let r = consensus_median(&[scalar(1.0), scalar(2.0), scalar(9.0)]).unwrap();
        assert_eq!(r.pseudo_label.as_f32().unwrap(), &[2.0]);
        let r = consensus_median(&[scalar(1.0), scalar(2.0), scalar(9.0), scalar(4.0)]).unwrap();
        assert_eq!(r.pseudo_label.as_f32().unwrap(), &[3.0]);
    }

    #[test]
    fn single_prediction_is_its_own_consensus() {
        let t = Tensor::from_f32(vec![2, 2, 1], vec![1.0, -2.0, 3.5, 0.0]).unwrap();
        let r = consensus_median(std::slice::from_ref(&t)).unwrap();
        assert_eq!(r.pseudo_label, t);
        assert!(r.dispersion.as_f32().unwrap().iter().all(|&d| d == 0.0));
        assert_eq!(r.paths, 1);
    }

    #[test]
    fn vote_and_rank_tie_break() {
        let r = consensus_vote(&[label(3), label(3), label(7)], &[0, 1, 2]).unwrap();
        assert_eq!(r.pseudo_label.as_labels().unwrap(), &[3]);
        assert!((r.dispersion.as_f32().unwrap()[0] - 2.0 / 3.0).abs() < 1e-7);
        let r = consensus_vote(&[label(5), label(2)], &[1, 2]).unwrap();
        assert_eq!(r.pseudo_label.as_labels().unwrap(), &[5]);
        let r = consensus_vote(&[label(5), label(2)], &[2, 1]).unwrap();
        assert_eq!(r.pseudo_label.as_labels().unwrap(), &[2]);
    }

    #[test]
    fn empty_and_mixed_inputs_are_rejected() {
        assert!(consensus_median(&[]).is_err());
        assert!(consensus_vote(&[], &[]).is_err());
        let a = Tensor::from_f32(vec![2], vec![0.0, 1.0]).unwrap();
        assert!(consensus_median(&[a, scalar(1.0)]).is_err());
        assert!(consensus_median(&[label(1)]).is_err());
    }

    #[test]
    fn gating() {
        let r = consensus_median(&[scalar(0.0), scalar(10.0)]).unwrap();
        let g = gate_confidence(r.clone(), Gate { tau: Some(f64::INFINITY), alpha: None });
        assert_eq!(g.mask, Some(vec![true]));
        let g = gate_confidence(r.clone(), Gate { tau: None, alpha: Some(1.0) });
        assert_eq!(g.mask, None);
        let v = consensus_vote(&[label(1), label(1), label(0)], &[0, 1, 2]).unwrap();
        let g = gate_confidence(v, Gate { tau: None, alpha: Some(1.0) });
        assert_eq!(g.mask, Some(vec![false]));
    }

    #[test]
    fn mean_dispersion_of_votes_is_disagreement() {
        let v = consensus_vote(&[label(1), label(1), label(0), label(1)], &[0, 1, 2, 3]).unwrap();
        assert!((v.mean_dispersion() - 0.25).abs() < 1e-7);
    }
}
