//! Closed-form allocation probabilities, payments and welfare objectives.
//!
//! These are the reference values every Monte Carlo result is checked
//! against. All functions are pure.

mod combinatorial;
mod welfare;

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::AnalyticError;

pub use combinatorial::{
    clsw, clsw_maximizer, combinatorial_allocation, log_clsw, set_relevance_heuristic, SetRelevance, SetScores,
};
pub use welfare::{log_lsw, lsw, lsw_maximizer};

/// Largest set handled by the inclusion-exclusion loop.
pub const MAX_INCLUSION_EXCLUSION: usize = 20;

/// Default tolerance for "sums to one" checks.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

/// A probability vector over ads or candidate sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AllocationDistribution(Vec<f64>);

impl AllocationDistribution {
    /// Wraps `probs`, checking non-negativity and unit sum within `tol`.
    pub fn new(probs: Vec<f64>, tol: f64) -> Result<Self, AnalyticError> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|&p| p.is_nan() || p < 0.0) || (sum - 1.0).abs() > tol {
            return Err(AnalyticError::InvalidSet(format!("not a distribution (sum {sum})")));
        }
        Ok(AllocationDistribution(probs))
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self, AnalyticError> {
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 0.0 || !total.is_finite() {
            return Err(AnalyticError::DegenerateDenominator);
        }
        Ok(AllocationDistribution(weights.into_iter().map(|w| w / total).collect()))
    }

    pub fn uniform(n: usize) -> Self {
        AllocationDistribution(vec![1.0 / n as f64; n])
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for AllocationDistribution {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Compensated (Neumaier) summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut k = KahanSum::default();
        iter.into_iter().for_each(|x| k.add(x));
        k
    }
}

fn weights(q: &[f64], b: &[f64]) -> Result<Vec<f64>, AnalyticError> {
    if q.len() != b.len() {
        return Err(AnalyticError::LengthMismatch);
    }
    Ok(q.iter().zip(b).map(|(q, b)| q * b).collect())
}

/// Bid-adjusted retrieval probabilities: `x_i = q_i b_i / Σ_j q_j b_j`.
pub fn softmax_allocation(q: &[f64], b: &[f64]) -> Result<AllocationDistribution, AnalyticError> {
    AllocationDistribution::from_weights(weights(q, b)?)
}

/// Probability that exactly the ads in `set` occupy the top `set.len()`
/// perturbed scores, by inclusion-exclusion over the non-empty subsets of
/// `set`:
///
/// `Σ_{∅≠T⊆S} (-1)^{|T|+1} w(T) / (w(S̄) + w(T))`, with `w_i = q_i b_i`.
pub fn set_win_probability(q: &[f64], b: &[f64], set: &[usize]) -> Result<f64, AnalyticError> {
    let w = weights(q, b)?;
    let n = w.len();
    let k = set.len();
    if k == 0 || k > n {
        return Err(AnalyticError::InvalidSet(format!("size {k} for {n} ads")));
    }
    if k > MAX_INCLUSION_EXCLUSION {
        return Err(AnalyticError::TooManyAds(k));
    }
    let mut member = vec![false; n];
    for &i in set {
        if i >= n || member[i] {
            return Err(AnalyticError::InvalidSet(format!("{set:?}")));
        }
        member[i] = true;
    }
    let outside: f64 = w.iter().zip(&member).filter(|(_, &m)| !m).map(|(w, _)| w).sum();
    let inside: Vec<f64> = set.iter().map(|&i| w[i]).collect();
    let mut acc = KahanSum::default();
    for mask in 1u32..(1u32 << k) {
        let sub: f64 = (0..k).filter(|j| mask >> j & 1 == 1).map(|j| inside[j]).sum();
        let den = outside + sub;
        if sub == 0.0 {
            if den == 0.0 {
                return Err(AnalyticError::DegenerateDenominator);
            }
            continue;
        }
        let sign = if mask.count_ones() % 2 == 1 { 1.0 } else { -1.0 };
        acc.add(sign * sub / den);
    }
    Ok(acc.total())
}

/// Expected per-click payment of ad `i` under the truthful payment rule for
/// the bid-adjusted allocation:
///
/// `(w/q_i) (ln((q_i b_i + w)/w) − q_i b_i/(w + q_i b_i))`, `w = Σ_{j≠i} q_j b_j`.
///
/// Returns 0 in the limits `w → 0` and `b_i → 0`.
pub fn myerson_expected_payment(q: &[f64], b: &[f64], i: usize) -> f64 {
    let others: f64 = q.iter().zip(b).enumerate().filter(|&(j, _)| j != i).map(|(_, (q, b))| q * b).sum();
    let own = q[i] * b[i];
    if others <= 0.0 || own <= 0.0 {
        return 0.0;
    }
    let r = own / others;
    // ln(1 + r) − r/(1 + r), stable for small r
    (others / q[i]) * (r.ln_1p() - r / (1.0 + r))
}

/// Myerson payment `b·x(b) − ∫_0^b x(z) dz` for a monotone allocation curve,
/// integrated with adaptive Simpson quadrature.
pub fn myerson_payment_quadrature(alloc: impl Fn(f64) -> f64, bid: f64) -> f64 {
    if bid <= 0.0 {
        return 0.0;
    }
    bid * alloc(bid) - adaptive_simpson(&alloc, 0.0, bid, 1e-11, 40)
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, depth)
}

/// Probability that ad `i` is among the top `k` perturbed scores.
pub fn top_k_inclusion_probability(q: &[f64], b: &[f64], k: usize, i: usize) -> Result<f64, AnalyticError> {
    let n = q.len();
    let mut acc = KahanSum::default();
    for set in combinations(n, k) {
        if set.contains(&i) {
            acc.add(set_win_probability(q, b, &set)?);
        }
    }
    Ok(acc.total())
}

/// Binomial coefficient, saturating at `u64::MAX`.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for j in 0..k {
        acc = acc * (n - j) as u128 / (j + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        // rightmost position that can still advance
        let mut pos = k;
        while pos > 0 && idx[pos - 1] == n - k + pos - 1 {
            pos -= 1;
        }
        if pos == 0 {
            return out;
        }
        idx[pos - 1] += 1;
        for j in pos..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}
