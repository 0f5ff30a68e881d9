use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_seed;

use super::analytic::{chebyshev_bound, pe_minus, pe_plus, vote_moments, BoundVariant, VoteMoments};

/// Trials per independently seeded partition.
const PARTITION: u64 = 8192;
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSimConfig {
    pub p: f64,
    pub classes: u32,
    pub paths: u32,
    pub trials: u64,
    pub seed: u64,
    /// Edges per path. The closed forms only cover 2.
    #[serde(default = "default_hops")]
    pub hops: u32,
}

fn default_hops() -> u32 {
    2
}

impl EnsembleSimConfig {
    pub fn new(p: f64, classes: u32, paths: u32, trials: u64, seed: u64) -> Self {
        EnsembleSimConfig {
            p,
            classes,
            paths,
            trials,
            seed,
            hops: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::invalid(format!("p = {} outside (0, 1]", self.p)));
        }
        if self.classes < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        if self.paths == 0 || self.trials == 0 || self.hops == 0 {
            return Err(Error::invalid("paths, trials and hops must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub config: EnsembleSimConfig,
    pub pe_plus: f64,
    pub pe_minus: f64,
    pub moments: VoteMoments,
    /// `None` when `p <= 1/C`.
    pub bound_printed: Option<f64>,
    /// `None` when `p <= 1/C` or `pe+ <= pe-`.
    pub bound_mu_squared: Option<f64>,
    pub correct: u64,
    pub accuracy: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Empirical mean fraction of votes for the correct class.
    pub mean_vote_correct: f64,
    /// Empirical mean fraction of votes for one fixed wrong class.
    pub mean_vote_wrong: f64,
}

/// Wilson score interval at 95% confidence.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    let n = trials as f64;
    let phat = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (phat + z2 / (2.0 * n)) / denom;
    let half = Z95 / denom * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Default, Clone, Copy)]
struct Tally {
    correct: u64,
    votes_correct: u64,
    votes_wrong: u64,
}

impl Tally {
    fn merge(self, o: Tally) -> Tally {
        Tally {
            correct: self.correct + o.correct,
            votes_correct: self.votes_correct + o.votes_correct,
            votes_wrong: self.votes_wrong + o.votes_wrong,
        }
    }
}

/// Class emitted at the end of one path. Class 0 is correct at every node;
/// a correct input stays correct with probability `p` and otherwise moves to
/// a uniformly chosen wrong class; a wrong input yields a uniform class.
fn sample_path(rng: &mut ChaCha8Rng, p: f64, classes: u32, hops: u32) -> u32 {
    let mut class = 0u32;
    for _ in 0..hops {
        class = if class == 0 {
            if rng.gen::<f64>() < p {
                0
            } else {
                rng.gen_range(1..classes)
            }
        } else {
            rng.gen_range(0..classes)
        };
    }
    class
}

fn run_partition(cfg: &EnsembleSimConfig, index: u64, trials: u64) -> Tally {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[index]));
    let mut votes = Vec::with_capacity(cfg.paths as usize);
    let mut tally = Tally::default();
    for _ in 0..trials {
        votes.clear();
        for _ in 0..cfg.paths {
            votes.push(sample_path(&mut rng, cfg.p, cfg.classes, cfg.hops));
        }
        votes.sort_unstable();
        let mut correct_count = 0u32;
        let mut best_wrong = 0u32;
        let mut i = 0;
        while i < votes.len() {
            let class = votes[i];
            let mut j = i;
            while j < votes.len() && votes[j] == class {
                j += 1;
            }
            let count = (j - i) as u32;
            if class == 0 {
                correct_count = count;
            } else {
                if class == 1 {
                    tally.votes_wrong += count as u64;
                }
                best_wrong = best_wrong.max(count);
            }
            i = j;
        }
        tally.votes_correct += correct_count as u64;
        let wins = if correct_count > best_wrong {
            true
        } else if correct_count < best_wrong || correct_count == 0 {
            false
        } else {
            // Uniform tie-break among every class sharing the top count.
            let mut tied = 1u32;
            let mut k = 0;
            while k < votes.len() {
                let class = votes[k];
                let mut j = k;
                while j < votes.len() && votes[j] == class {
                    j += 1;
                }
                if class != 0 && (j - k) as u32 == correct_count {
                    tied += 1;
                }
                k = j;
            }
            rng.gen_range(0..tied) == 0
        };
        if wins {
            tally.correct += 1;
        }
    }
    tally
}

/// Monte Carlo estimate of plurality-vote accuracy for `paths` independent
/// paths, together with the closed-form quantities of the voting model.
pub fn simulate_ensemble(cfg: &EnsembleSimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let partitions = cfg.trials.div_ceil(PARTITION);
    let tally = (0..partitions)
        .into_par_iter()
        .map(|i| {
            let n = PARTITION.min(cfg.trials - i * PARTITION);
            run_partition(cfg, i, n)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Tally::default(), Tally::merge);

    let n = cfg.trials as f64;
    let accuracy = tally.correct as f64 / n;
    let (ci_low, ci_high) = wilson_interval(tally.correct, cfg.trials);
    let total_votes = n * cfg.paths as f64;
    Ok(SimResult {
        config: cfg.clone(),
        pe_plus: pe_plus(cfg.p, cfg.classes)?,
        pe_minus: pe_minus(cfg.p, cfg.classes)?,
        moments: vote_moments(cfg.p, cfg.classes, cfg.paths)?,
        bound_printed: chebyshev_bound(cfg.p, cfg.classes, cfg.paths, BoundVariant::AsPrinted).ok(),
        bound_mu_squared: chebyshev_bound(cfg.p, cfg.classes, cfg.paths, BoundVariant::MuSquared).ok(),
        correct: tally.correct,
        accuracy,
        std_error: (accuracy * (1.0 - accuracy) / n).sqrt(),
        ci_low,
        ci_high,
        mean_vote_correct: tally.votes_correct as f64 / total_votes,
        mean_vote_wrong: tally.votes_wrong as f64 / total_votes,
    })
}

/// Ensemble accuracy for each class count, every run using the same seed.
pub fn sweep_classes(p: f64, paths: u32, classes: &[u32], trials: u64, seed: u64) -> Result<Vec<SimResult>> {
    classes
        .iter()
        .map(|&c| simulate_ensemble(&EnsembleSimConfig::new(p, c, paths, trials, seed)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_edges_always_win() {
        for (c, n) in [(2, 1), (10, 4), (1000, 9)] {
            let r = simulate_ensemble(&EnsembleSimConfig::new(1.0, c, n, 2000, 3)).unwrap();
            assert_eq!(r.accuracy, 1.0);
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let cfg = EnsembleSimConfig::new(0.6, 10, 7, 20_000, 42);
        assert_eq!(simulate_ensemble(&cfg).unwrap(), simulate_ensemble(&cfg).unwrap());
    }

    #[test]
    fn single_path_matches_pe_plus() {
        let r = simulate_ensemble(&EnsembleSimConfig::new(0.6, 10, 1, 100_000, 8)).unwrap();
        let se = (0.4f64 * 0.6 / 1e5).sqrt();
        assert!((r.accuracy - 0.4).abs() < 4.0 * se, "{}", r.accuracy);
    }

    #[test]
    fn two_hop_chain_matches_closed_form() {
        // Brute-force the chain alone, independent of the voting code.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let trials = 1_000_000u64;
        let hits = (0..trials).filter(|_| sample_path(&mut rng, 0.6, 10, 2) == 0).count();
        let est = hits as f64 / trials as f64;
        let se = (0.4f64 * 0.6 / trials as f64).sqrt();
        assert!((est - 0.40).abs() < 4.0 * se, "{est}");
    }

    #[test]
    fn vote_fractions_match_moments() {
        let r = simulate_ensemble(&EnsembleSimConfig::new(0.7, 10, 15, 100_000, 5)).unwrap();
        let trials = 1e5;
        let se_c = (r.moments.var_correct / trials).sqrt();
        let se_w = (r.moments.var_wrong_per_class / trials).sqrt();
        assert!((r.mean_vote_correct - r.moments.expected_correct).abs() < 4.0 * se_c);
        assert!((r.mean_vote_wrong - r.moments.expected_wrong).abs() < 4.0 * se_w);
    }

    #[test]
    fn wilson_interval_contains_estimate() {
        let (lo, hi) = wilson_interval(50, 100);
        assert!(lo < 0.5 && hi > 0.5);
        let (lo, hi) = wilson_interval(100, 100);
        assert!(lo > 0.95 && hi == 1.0);
    }

    #[test]
    fn sweep_single_class_matches_direct_run() {
        let sweep = sweep_classes(0.6, 15, &[100], 10_000, 9).unwrap();
        let direct = simulate_ensemble(&EnsembleSimConfig::new(0.6, 100, 15, 10_000, 9)).unwrap();
        assert_eq!(sweep[0].accuracy, direct.accuracy);
    }
}
