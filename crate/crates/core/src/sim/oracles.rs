//! Monte Carlo and optimization oracles for the analytic formulas.

use std::collections::HashMap;
use std::fmt;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{
    clsw_maximizer, combinations, log_clsw, log_lsw, lsw_maximizer, myerson_expected_payment, set_win_probability,
    SetScores,
};
use crate::error::AnalyticError;
use crate::sampling::{chunk_streams, gumbel, open_uniform};

/// Parallel work units for Monte Carlo runs; fixed so results do not depend
/// on the machine.
const CHUNKS: u64 = 64;

/// How an oracle comparison is judged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// `|analytic − empirical| ≤ 3·stderr`.
    ThreeSigma,
    /// `|analytic − empirical| ≤ tol`.
    Absolute(f64),
    /// `analytic ≥ empirical − tol` (an optimum against candidates).
    AtLeast(f64),
}

/// One analytic-versus-empirical comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub name: String,
    pub analytic: f64,
    pub empirical: f64,
    pub stderr: f64,
    pub criterion: Criterion,
    pub passed: bool,
}

impl OracleReport {
    pub fn new(name: impl Into<String>, analytic: f64, empirical: f64, stderr: f64, criterion: Criterion) -> Self {
        let gap = (analytic - empirical).abs();
        let passed = match criterion {
            Criterion::ThreeSigma => gap <= 3.0 * stderr,
            Criterion::Absolute(tol) => gap <= tol,
            Criterion::AtLeast(tol) => analytic >= empirical - tol,
        };
        OracleReport { name: name.into(), analytic, empirical, stderr, criterion, passed }
    }

    pub fn three_sigma(name: impl Into<String>, analytic: f64, empirical: f64, stderr: f64) -> Self {
        Self::new(name, analytic, empirical, stderr, Criterion::ThreeSigma)
    }

    /// Distance in standard errors (infinite when stderr is 0 and the values differ).
    pub fn z_score(&self) -> f64 {
        let gap = (self.analytic - self.empirical).abs();
        if gap == 0.0 {
            0.0
        } else {
            gap / self.stderr
        }
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: analytic {:.6} empirical {:.6} (se {:.2e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.analytic,
            self.empirical,
            self.stderr
        )
    }
}

/// `(q, b)` with `q ∈ (0, 1)`, `b ∈ (0, 1]`, so every `q b ∈ (0, 1]`.
pub fn random_instance<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> (Vec<f64>, Vec<f64>) {
    let q = (0..n).map(|_| open_uniform(rng)).collect();
    let b = (0..n).map(|_| 1.0 - open_uniform(rng) * 0.999).collect();
    (q, b)
}

/// Uniform points on the probability simplex (flat Dirichlet via
/// normalized exponentials).
pub fn random_simplex_points(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = crate::sampling::RngStream::new(seed, 0, 0).rng();
    (0..count)
        .map(|_| {
            let e: Vec<f64> = (0..n).map(|_| -open_uniform(&mut rng).ln()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

/// Bitmask of the `k` largest perturbed log-weights (ties to lower index).
fn top_k_mask(log_w: &[f64], eps: &mut [f64], k: usize) -> u64 {
    for (e, &lw) in eps.iter_mut().zip(log_w) {
        *e += lw;
    }
    let mut mask = 0u64;
    for _ in 0..k {
        let mut best = usize::MAX;
        for i in 0..eps.len() {
            if mask >> i & 1 == 0 && (best == usize::MAX || eps[i] > eps[best]) {
                best = i;
            }
        }
        mask |= 1 << best;
    }
    mask
}

/// Counts how often each `k`-set is the top-`k` under Gumbel perturbation.
fn set_counts(q: &[f64], b: &[f64], k: usize, samples: u64, seed: u64) -> HashMap<u64, u64> {
    let log_w: Vec<f64> = q.iter().zip(b).map(|(q, b)| (q * b).ln()).collect();
    let n = q.len();
    let parts: Vec<HashMap<u64, u64>> = chunk_streams(seed, samples, CHUNKS)
        .into_par_iter()
        .map(|(stream, count)| {
            let mut rng = stream.rng();
            let mut counts = HashMap::new();
            let mut eps = vec![0.0; n];
            for _ in 0..count {
                for e in eps.iter_mut() {
                    *e = gumbel(&mut rng);
                }
                *counts.entry(top_k_mask(&log_w, &mut eps, k)).or_insert(0) += 1;
            }
            counts
        })
        .collect();
    let mut total = HashMap::new();
    for part in parts {
        for (mask, c) in part {
            *total.entry(mask).or_insert(0) += c;
        }
    }
    total
}

fn mask_of(set: &[usize]) -> u64 {
    set.iter().fold(0, |m, &i| m | 1 << i)
}

fn binomial_report(name: String, p: f64, hits: u64, samples: u64) -> OracleReport {
    let freq = hits as f64 / samples as f64;
    let se = (p * (1.0 - p) / samples as f64).sqrt();
    OracleReport::three_sigma(name, p, freq, se)
}

/// Frequency with which exactly `set` fills the top `|set|` scores, against
/// the inclusion-exclusion probability; the standard error is binomial at
/// the analytic probability.
pub fn oracle_win_frequency(
    q: &[f64],
    b: &[f64],
    set: &[usize],
    samples: u64,
    seed: u64,
) -> Result<OracleReport, AnalyticError> {
    let p = set_win_probability(q, b, set)?;
    let counts = set_counts(q, b, set.len(), samples, seed);
    let hits = counts.get(&mask_of(set)).copied().unwrap_or(0);
    Ok(binomial_report(format!("P(top-{} = {:?})", set.len(), set), p, hits, samples))
}

/// [`oracle_win_frequency`] for every `k`-set from one shared sample run.
pub fn oracle_set_frequencies(
    q: &[f64],
    b: &[f64],
    k: usize,
    samples: u64,
    seed: u64,
) -> Result<Vec<OracleReport>, AnalyticError> {
    let counts = set_counts(q, b, k, samples, seed);
    combinations(q.len(), k)
        .into_iter()
        .map(|set| {
            let p = set_win_probability(q, b, &set)?;
            let hits = counts.get(&mask_of(&set)).copied().unwrap_or(0);
            Ok(binomial_report(format!("P(top-{k} = {set:?})"), p, hits, samples))
        })
        .collect()
}

/// Monte Carlo `E[1{i wins} · z_i]` of the single-allocation auction against
/// the closed-form expected payment, one report per ad.
pub fn oracle_myerson(q: &[f64], b: &[f64], samples: u64, seed: u64) -> Vec<OracleReport> {
    let n = q.len();
    let log_w: Vec<f64> = q.iter().zip(b).map(|(q, b)| (q * b).ln()).collect();
    let parts: Vec<(Vec<f64>, Vec<f64>)> = chunk_streams(seed, samples, CHUNKS)
        .into_par_iter()
        .map(|(stream, count)| {
            let mut rng = stream.rng();
            let (mut sum, mut sq) = (vec![0.0; n], vec![0.0; n]);
            let mut s = vec![0.0; n];
            for _ in 0..count {
                for (si, lw) in s.iter_mut().zip(&log_w) {
                    *si = lw + gumbel(&mut rng);
                }
                let (mut w, mut r) = (usize::MAX, usize::MAX);
                for i in 0..n {
                    if w == usize::MAX || s[i] > s[w] {
                        r = w;
                        w = i;
                    } else if r == usize::MAX || s[i] > s[r] {
                        r = i;
                    }
                }
                let z = if r == usize::MAX { 0.0 } else { b[w] * (s[r] - s[w]).exp() };
                sum[w] += z;
                sq[w] += z * z;
            }
            (sum, sq)
        })
        .collect();
    let (mut sum, mut sq) = (vec![0.0; n], vec![0.0; n]);
    for (s, q2) in parts {
        for i in 0..n {
            sum[i] += s[i];
            sq[i] += q2[i];
        }
    }
    let m = samples as f64;
    (0..n)
        .map(|i| {
            let mean = sum[i] / m;
            let var = (sq[i] / m - mean * mean).max(0.0) * m / (m - 1.0).max(1.0);
            OracleReport::three_sigma(
                format!("E[1{{win}} z_{i}]"),
                myerson_expected_payment(q, b, i),
                mean,
                (var / m).sqrt(),
            )
        })
        .collect()
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(y: &[f64]) -> Vec<f64> {
    let mut u = y.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        css += uj;
        let t = (css - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// Maximizes `Σ_i w_i ln x_i` over the simplex by projected gradient ascent
/// with backtracking; independent of the closed form `x ∝ w`.
pub fn maximize_weighted_log(w: &[f64]) -> Vec<f64> {
    let n = w.len();
    let f = |x: &[f64]| -> f64 {
        w.iter()
            .zip(x)
            .map(|(&w, &x)| {
                if w == 0.0 {
                    0.0
                } else if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    w * x.ln()
                }
            })
            .sum()
    };
    let mut x = vec![1.0 / n as f64; n];
    let mut fx = f(&x);
    let mut step = 1e-2;
    for _ in 0..100_000 {
        let g: Vec<f64> = w.iter().zip(&x).map(|(&w, &x)| if w == 0.0 { 0.0 } else { w / x }).collect();
        let mut improved = false;
        while step > 1e-18 {
            let y = project_simplex(&x.iter().zip(&g).map(|(x, g)| x + step * g).collect::<Vec<_>>());
            let fy = f(&y);
            let ascent: f64 = g.iter().zip(y.iter().zip(&x)).map(|(g, (y, x))| g * (y - x)).sum();
            if fy.is_finite() && fy >= fx + 1e-4 * ascent {
                improved = fy > fx;
                x = y;
                fx = fy;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    x
}

/// Projected-gradient optimum of log-LSW.
pub fn lsw_projected_gradient(q: &[f64], v: &[f64]) -> Vec<f64> {
    maximize_weighted_log(&q.iter().zip(v).map(|(q, v)| q * v).collect::<Vec<_>>())
}

/// Checks that the closed-form LSW maximizer beats `points` random simplex
/// points and agrees with projected gradient to `1e-6` in log-LSW.
pub fn oracle_lsw(q: &[f64], v: &[f64], points: usize, seed: u64) -> Result<[OracleReport; 2], AnalyticError> {
    let x = lsw_maximizer(q, v)?;
    let best = log_lsw(&x, q, v);
    let random =
        random_simplex_points(q.len(), points, seed).iter().map(|p| log_lsw(p, q, v)).fold(f64::NEG_INFINITY, f64::max);
    let pg = log_lsw(&lsw_projected_gradient(q, v), q, v);
    Ok([
        OracleReport::new("log-LSW maximizer vs random simplex", best, random, 0.0, Criterion::AtLeast(0.0)),
        OracleReport::new("log-LSW maximizer vs projected gradient", best, pg, 0.0, Criterion::Absolute(1e-6)),
    ])
}

/// CLSW analogue of [`oracle_lsw`] over the candidate sets of `scores`.
pub fn oracle_clsw(
    scores: &SetScores,
    v: &[f64],
    points: usize,
    seed: u64,
) -> Result<[OracleReport; 2], AnalyticError> {
    let x = clsw_maximizer(scores, v)?;
    let best = log_clsw(&x, scores, v);
    let random = random_simplex_points(scores.len(), points, seed)
        .iter()
        .map(|p| log_clsw(p, scores, v))
        .fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = (0..scores.len()).map(|a| scores.set_weight(a, v)).collect();
    let pg = log_clsw(&maximize_weighted_log(&w), scores, v);
    Ok([
        OracleReport::new("log-CLSW maximizer vs random simplex", best, random, 0.0, Criterion::AtLeast(0.0)),
        OracleReport::new("log-CLSW maximizer vs projected gradient", best, pg, 0.0, Criterion::Absolute(1e-6)),
    ])
}
