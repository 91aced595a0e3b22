use serde::{Deserialize, Serialize};

use super::{combinations, AllocationDistribution};
use crate::error::AnalyticError;

/// Candidate sets of size `k` with the per-member relevance `q_{A,i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetScores {
    pub k: usize,
    /// Ad indices of each candidate set, ascending.
    pub sets: Vec<Vec<usize>>,
    /// `q[a][m]` is the relevance of member `sets[a][m]` inside set `a`.
    pub q: Vec<Vec<f64>>,
}

impl SetScores {
    pub fn new(k: usize, sets: Vec<Vec<usize>>, q: Vec<Vec<f64>>) -> Result<Self, AnalyticError> {
        if sets.len() != q.len() || sets.iter().zip(&q).any(|(s, q)| s.len() != k || q.len() != k) {
            return Err(AnalyticError::LengthMismatch);
        }
        Ok(SetScores { k, sets, q })
    }

    /// Every `k`-subset with `q_{A,i} = q_i`.
    pub fn additive(q: &[f64], k: usize) -> Self {
        let sets = combinations(q.len(), k);
        let scores = sets.iter().map(|s| s.iter().map(|&i| q[i]).collect()).collect();
        SetScores { k, sets, q: scores }
    }

    /// Every `k`-subset scored with [`set_relevance_heuristic`].
    pub fn heuristic(q: &[f64], pairwise: Option<&[Vec<f64>]>, alpha: f64, beta: f64, k: usize) -> Self {
        let sets = combinations(q.len(), k);
        let scores = sets.iter().map(|s| set_relevance_heuristic(q, pairwise, alpha, beta, s).members).collect();
        SetScores { k, sets, q: scores }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// `Σ_{i∈A} q_{A,i} b_i`.
    pub fn set_weight(&self, set: usize, b: &[f64]) -> f64 {
        self.sets[set].iter().zip(&self.q[set]).map(|(&i, &q)| q * b[i]).sum()
    }

    pub fn member_q(&self, set: usize, ad: usize) -> Option<f64> {
        self.sets[set].iter().position(|&i| i == ad).map(|m| self.q[set][m])
    }
}

/// Set-level relevance and its decomposition over members.
#[derive(Debug, Clone, PartialEq)]
pub struct SetRelevance {
    /// `q_A`.
    pub q_set: f64,
    /// `q_{A,i}` for each member in set order.
    pub members: Vec<f64>,
}

/// `q_A = α Σ_{i∈A} q_i + β Σ_{i≠j∈A} rel(a_i, a_j)` (ordered pairs), split
/// over members in proportion to their solo relevance
/// (`q_{A,i} = q_A q_i / Σ_{j∈A} q_j`; equal shares when every `q_i` is 0).
pub fn set_relevance_heuristic(
    q: &[f64],
    pairwise: Option<&[Vec<f64>]>,
    alpha: f64,
    beta: f64,
    set: &[usize],
) -> SetRelevance {
    let solo: f64 = set.iter().map(|&i| q[i]).sum();
    let mut pairs = 0.0;
    if beta != 0.0 {
        if let Some(rel) = pairwise {
            for &i in set {
                for &j in set {
                    if i != j {
                        pairs += rel[i][j];
                    }
                }
            }
        }
    }
    let q_set = alpha * solo + beta * pairs;
    let members =
        set.iter().map(|&i| if solo > 0.0 { q_set * q[i] / solo } else { q_set / set.len() as f64 }).collect();
    SetRelevance { q_set, members }
}

/// `x_A = Σ_{i∈A} q_{A,i} b_i / Σ_B Σ_{i∈B} q_{B,i} b_i`.
pub fn combinatorial_allocation(scores: &SetScores, b: &[f64]) -> Result<AllocationDistribution, AnalyticError> {
    AllocationDistribution::from_weights((0..scores.len()).map(|a| scores.set_weight(a, b)).collect())
}

/// `ln CLSW = Σ_i v_i Σ_{A∋i} q_{A,i} ln x_A`.
pub fn log_clsw(x: &[f64], scores: &SetScores, v: &[f64]) -> f64 {
    let mut total = 0.0;
    for (a, set) in scores.sets.iter().enumerate() {
        for (m, &i) in set.iter().enumerate() {
            let w = v[i] * scores.q[a][m];
            if w == 0.0 {
                continue;
            }
            if x[a] <= 0.0 {
                return f64::NEG_INFINITY;
            }
            total += w * x[a].ln();
        }
    }
    total
}

/// `Π_i (Π_{A∋i} x_A^{q_{A,i}})^{v_i}`.
pub fn clsw(x: &[f64], scores: &SetScores, v: &[f64]) -> f64 {
    log_clsw(x, scores, v).exp()
}

/// `x_A ∝ Σ_{i∈A} q_{A,i} v_i`.
pub fn clsw_maximizer(scores: &SetScores, v: &[f64]) -> Result<AllocationDistribution, AnalyticError> {
    combinatorial_allocation(scores, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{log_lsw, softmax_allocation};

    #[test]
    fn additive_heuristic() {
        let q = [0.36, 0.87, 0.31, 0.26];
        let r = set_relevance_heuristic(&q, None, 1.0, 0.0, &[0, 1]);
        assert!((r.q_set - 1.23).abs() < 1e-12);
        assert!((r.members[1] - 0.87).abs() < 1e-12);
        assert!((r.members[0] - 0.36).abs() < 1e-12);
        let r = set_relevance_heuristic(&q, None, 2.0, 0.0, &[2]);
        assert!((r.q_set - 0.62).abs() < 1e-12);
    }

    #[test]
    fn pairwise_term_counts_ordered_pairs() {
        let q = [0.5, 0.5];
        let rel = vec![vec![0.0, 0.2], vec![0.1, 0.0]];
        let r = set_relevance_heuristic(&q, Some(&rel), 1.0, 1.0, &[0, 1]);
        assert!((r.q_set - 1.3).abs() < 1e-12);
        assert!((r.members[0] - 0.65).abs() < 1e-12);
    }

    #[test]
    fn singleton_sets_reduce_to_softmax() {
        let q = [0.4, 0.7];
        let b = [2.0, 1.0];
        let scores = SetScores::additive(&q, 1);
        assert_eq!(combinatorial_allocation(&scores, &b).unwrap(), softmax_allocation(&q, &b).unwrap());
    }

    #[test]
    fn equal_bids_follow_set_relevance() {
        let q = [0.36, 0.87, 0.31];
        let scores = SetScores::additive(&q, 2);
        let x = combinatorial_allocation(&scores, &[1.0; 3]).unwrap();
        let totals: Vec<f64> = scores.q.iter().map(|m| m.iter().sum()).collect();
        let all: f64 = totals.iter().sum();
        for (xa, t) in x.iter().zip(totals) {
            assert!((xa - t / all).abs() < 1e-15);
        }
    }

    #[test]
    fn clsw_single_set_is_one() {
        let scores = SetScores::additive(&[0.3, 0.6], 2);
        assert_eq!(clsw(&[1.0], &scores, &[1.0, 2.0]), 1.0);
    }

    #[test]
    fn clsw_reduces_to_lsw_for_singletons() {
        let q = [0.36, 0.87, 0.31, 0.26];
        let v = [3.0, 3.0, 2.0, 2.0];
        let x = [0.1, 0.5, 0.3, 0.1];
        let scores = SetScores::additive(&q, 1);
        assert!((log_clsw(&x, &scores, &v) - log_lsw(&x, &q, &v)).abs() < 1e-12);
    }
}
