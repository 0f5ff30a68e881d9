use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeId, Path};

use super::metrics::Metric;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Score every prefix of the ranked list and keep the best one; a longer
    /// prefix replaces a shorter one only when strictly better.
    #[default]
    BestPrefix,
    /// Stop at the first addition that does not strictly improve the score.
    FirstDecline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub path: Path,
    /// Validation score of the path on its own.
    pub score: f64,
    /// Direct sensor-to-target edge; always ranked first.
    pub direct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedySelection {
    pub target: NodeId,
    pub metric: Metric,
    /// Candidates in rank order.
    pub ranked: Vec<Candidate>,
    /// Ensemble score of each evaluated prefix; entry `k` covers `k + 1` paths.
    pub prefix_scores: Vec<f64>,
    /// Length of the selected prefix.
    pub selected: usize,
}

impl GreedySelection {
    pub fn selected_paths(&self) -> Vec<Path> {
        self.ranked[..self.selected].iter().map(|c| c.path.clone()).collect()
    }

    pub fn selected_score(&self) -> f64 {
        self.prefix_scores[self.selected - 1]
    }
}

/// Direct edges first, then by single-path score (best first), then by path.
pub fn rank_candidates(mut candidates: Vec<Candidate>, metric: Metric) -> Vec<Candidate> {
    candidates.sort_by(|a, b| {
        b.direct
            .cmp(&a.direct)
            .then_with(|| {
                if metric.better(a.score, b.score) {
                    std::cmp::Ordering::Less
                } else if metric.better(b.score, a.score) {
                    std::cmp::Ordering::Greater
                } else {
                    std::cmp::Ordering::Equal
                }
            })
            .then_with(|| a.path.cmp(&b.path))
    });
    candidates
}

/// Ranks `candidates` and grows the ensemble one path at a time.
/// `ensemble_score` scores a set of indices into the ranked list.
pub fn greedy_select(
    target: NodeId,
    metric: Metric,
    candidates: Vec<Candidate>,
    rule: SelectionRule,
    mut ensemble_score: impl FnMut(&[usize]) -> Result<f64>,
) -> Result<GreedySelection> {
    if candidates.is_empty() {
        return Err(Error::invalid(format!("no candidate paths for {target}")));
    }
    let ranked = rank_candidates(candidates, metric);
    let mut prefix_scores = Vec::with_capacity(ranked.len());
    let mut selected = 0;
    let mut best = f64::NAN;
    let indices: Vec<usize> = (0..ranked.len()).collect();
    for k in 1..=ranked.len() {
        let s = ensemble_score(&indices[..k])?;
        prefix_scores.push(s);
        if k == 1 || metric.better(s, best) {
            best = s;
            selected = k;
        } else if rule == SelectionRule::FirstDecline {
            break;
        }
    }
    Ok(GreedySelection {
        target,
        metric,
        ranked,
        prefix_scores,
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeId;

    fn cand(id: u32, score: f64) -> Candidate {
        Candidate {
            path: Path::new(vec![EdgeId(id)]),
            score,
            direct: false,
        }
    }

    #[test]
    fn single_candidate_is_selected() {
        let s = greedy_select(NodeId(1), Metric::L1, vec![cand(0, 1.0)], SelectionRule::BestPrefix, |_| Ok(1.0)).unwrap();
        assert_eq!(s.selected, 1);
    }

    #[test]
    fn degrading_second_candidate() {
        let scores = [1.0, 1.5, 0.5];
        for rule in [SelectionRule::FirstDecline, SelectionRule::BestPrefix] {
            let s = greedy_select(
                NodeId(1),
                Metric::L1,
                vec![cand(0, 1.0), cand(1, 2.0), cand(2, 3.0)],
                rule,
                |idx| Ok(scores[idx.len() - 1]),
            )
            .unwrap();
            match rule {
                SelectionRule::FirstDecline => assert_eq!(s.selected, 1),
                SelectionRule::BestPrefix => assert_eq!(s.selected, 3),
            }
        }
    }

    #[test]
    fn direct_edge_ranks_first() {
        let mut d = cand(9, 5.0);
        d.direct = true;
        let r = rank_candidates(vec![cand(0, 1.0), d, cand(1, 0.5)], Metric::L1);
        let ids: Vec<u32> = r.iter().map(|c| c.path.edges[0].0).collect();
        assert_eq!(ids, vec![9, 1, 0]);
        let r = rank_candidates(vec![cand(0, 0.1), cand(1, 0.5)], Metric::Accuracy);
        assert_eq!(r[0].path.edges[0], EdgeId(1));
    }
}
