use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_seed;

use super::montecarlo::{simulate_ensemble, EnsembleSimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSimConfig {
    pub p0: f64,
    /// Fraction of the student-teacher gap recovered per generation.
    pub recovery: f64,
    pub generations: usize,
    /// One curve per ensemble size.
    pub paths: Vec<u32>,
    pub classes: u32,
    pub trials: u64,
    pub seed: u64,
}

impl Default for GenerationSimConfig {
    fn default() -> Self {
        GenerationSimConfig {
            p0: 0.6,
            recovery: 0.2,
            generations: 10,
            paths: vec![5, 15, 31],
            classes: 100,
            trials: 10_000,
            seed: 0,
        }
    }
}

impl GenerationSimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.recovery > 0.0 && self.recovery <= 1.0) {
            return Err(Error::invalid(format!("recovery {} outside (0, 1]", self.recovery)));
        }
        if self.generations == 0 {
            return Err(Error::invalid("need at least one generation"));
        }
        if self.paths.is_empty() {
            return Err(Error::invalid("need at least one ensemble size"));
        }
        if !(self.p0 > 0.0 && self.p0 <= 1.0) {
            return Err(Error::invalid(format!("p0 = {} outside (0, 1]", self.p0)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationPoint {
    pub generation: usize,
    pub paths: u32,
    /// Single-edge success probability entering this generation.
    pub student_p: f64,
    /// Ensemble accuracy of the teacher built from `student_p` edges.
    pub teacher_accuracy: f64,
    pub teacher_std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `student_p + recovery * (teacher_accuracy - student_p)`.
    pub next_p: f64,
}

/// Students recover a fixed fraction of the gap to their ensemble teacher
/// every generation. Returns one curve per ensemble size.
pub fn simulate_generations(cfg: &GenerationSimConfig) -> Result<Vec<Vec<GenerationPoint>>> {
    cfg.validate()?;
    cfg.paths
        .iter()
        .map(|&n| {
            let mut p = cfg.p0;
            let mut curve = Vec::with_capacity(cfg.generations);
            for g in 0..cfg.generations {
                let seed = derive_seed(cfg.seed, &[n as u64, g as u64]);
                let teacher = simulate_ensemble(&EnsembleSimConfig::new(p, cfg.classes, n, cfg.trials, seed))?;
                let next_p = p + cfg.recovery * (teacher.accuracy - p);
                curve.push(GenerationPoint {
                    generation: g,
                    paths: n,
                    student_p: p,
                    teacher_accuracy: teacher.accuracy,
                    teacher_std_error: teacher.std_error,
                    ci_low: teacher.ci_low,
                    ci_high: teacher.ci_high,
                    next_p,
                });
                p = next_p;
            }
            Ok(curve)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovery_rule_arithmetic() {
        // 0.6 + 0.2 * (0.8 - 0.6)
        let p1: f64 = 0.6 + 0.2 * (0.8 - 0.6);
        assert!((p1 - 0.64).abs() < 1e-12);
        let curves = simulate_generations(&GenerationSimConfig {
            generations: 3,
            paths: vec![5],
            trials: 5000,
            ..Default::default()
        })
        .unwrap();
        let c = &curves[0];
        for w in c.windows(2) {
            assert_eq!(w[1].student_p, w[0].next_p);
            assert!((w[0].next_p - (w[0].student_p + 0.2 * (w[0].teacher_accuracy - w[0].student_p))).abs() < 1e-12);
        }
    }

    #[test]
    fn full_recovery_tracks_teacher() {
        let curves = simulate_generations(&GenerationSimConfig {
            recovery: 1.0,
            generations: 4,
            paths: vec![7],
            trials: 4000,
            ..Default::default()
        })
        .unwrap();
        for w in curves[0].windows(2) {
            assert_eq!(w[1].student_p, w[0].teacher_accuracy);
        }
    }

    #[test]
    fn rejects_bad_recovery() {
        let cfg = GenerationSimConfig {
            recovery: 0.0,
            ..Default::default()
        };
        assert!(simulate_generations(&cfg).is_err());
    }
}
