use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_domain(p: f64, classes: u32) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("success probability {p} outside (0, 1]")));
    }
    if classes < 2 {
        return Err(Error::invalid(format!("class count {classes} below 2")));
    }
    Ok(())
}

/// Probability that a 2-hop path outputs the correct class: `p^2 + (1-p)/C`.
pub fn pe_plus(p: f64, classes: u32) -> Result<f64> {
    check_domain(p, classes)?;
    Ok(p * p + (1.0 - p) / classes as f64)
}

/// Probability that a 2-hop path outputs a wrong class: `(1-p)(p + (C-1)/C)`.
pub fn pe_minus(p: f64, classes: u32) -> Result<f64> {
    check_domain(p, classes)?;
    let c = classes as f64;
    Ok((1.0 - p) * (p + (c - 1.0) / c))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoteMoments {
    /// Expected fraction of paths voting for the correct class.
    pub expected_correct: f64,
    /// Expected fraction of paths voting for one particular wrong class.
    pub expected_wrong: f64,
    /// `pe+ (1 - pe+) / N`.
    pub var_correct: f64,
    /// `pe- (1 - pe-) / N`, the variance of the total wrong fraction as used
    /// by the ensemble error bound.
    pub var_wrong: f64,
    /// Variance of the fraction voting for one particular wrong class.
    pub var_wrong_per_class: f64,
}

pub fn vote_moments(p: f64, classes: u32, paths: u32) -> Result<VoteMoments> {
    if paths == 0 {
        return Err(Error::invalid("need at least one path"));
    }
    let plus = pe_plus(p, classes)?;
    let minus = pe_minus(p, classes)?;
    let n = paths as f64;
    let per_class = minus / (classes as f64 - 1.0);
    Ok(VoteMoments {
        expected_correct: plus,
        expected_wrong: per_class,
        var_correct: plus * (1.0 - plus) / n,
        var_wrong: minus * (1.0 - minus) / n,
        var_wrong_per_class: per_class * (1.0 - per_class) / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundVariant {
    /// Denominator `(pe+ + pe-)^2`, which is identically 1.
    AsPrinted,
    /// Denominator `mu^2 = (pe+ - pe-)^2`, the Chebyshev form with the
    /// mean gap between correct and total-wrong vote fractions.
    MuSquared,
}

/// Chebyshev bound on the majority-vote error of `paths` independent 2-hop
/// paths. Requires `p > 1/C`; the mu-squared variant additionally needs
/// `pe+ > pe-`.
pub fn chebyshev_bound(p: f64, classes: u32, paths: u32, variant: BoundVariant) -> Result<f64> {
    check_domain(p, classes)?;
    if p <= 1.0 / classes as f64 {
        return Err(Error::Hypothesis(format!(
            "edge success probability {p} is not better than chance 1/{classes}"
        )));
    }
    let m = vote_moments(p, classes, paths)?;
    let plus = m.expected_correct;
    let minus = pe_minus(p, classes)?;
    let numerator = m.var_correct + m.var_wrong;
    let denominator = match variant {
        BoundVariant::AsPrinted => (plus + minus).powi(2),
        BoundVariant::MuSquared => {
            let mu = plus - minus;
            if mu <= 0.0 {
                return Err(Error::Hypothesis(format!(
                    "mean vote gap pe+ - pe- = {mu} is not positive"
                )));
            }
            mu * mu
        }
    };
    Ok(numerator / denominator)
}
