//! Outcome metrics: revenue, social welfare, relevance and minimum social
//! welfare, plus their closed-form expectations.
//!
//! Raw metrics are sums over segments and winners. Reports divide the trial
//! means by [`Normalizers`], which are stored in the report so other
//! conventions can be recomputed from it.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::analytic::{
    myerson_expected_payment, myerson_payment_quadrature, softmax_allocation, top_k_inclusion_probability, SetScores,
};
use crate::error::AnalyticError;
use crate::types::{AuctionOutcome, Mechanism, QueryCounters, Scenario};

/// How winners' prices are summed into revenue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevenueAccounting {
    /// Sum of per-click prices of the winners.
    #[default]
    PerClick,
    /// Sum of `q · price`, the expected payment per impression.
    PerImpression,
}

/// Divisors turning raw trial means into normalized metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizers {
    pub revenue_max: f64,
    pub welfare_max: f64,
    pub relevance_max: f64,
    pub min_welfare_max: f64,
}

impl Normalizers {
    /// Default convention, with `P = T·k` ad placements:
    ///
    /// * welfare: `P · max_i v_i q_i` (best ad in every placement),
    /// * relevance: `P · max_i q_i`,
    /// * revenue: `P · max_i b_i` per click, or `P · max_i q_i b_i` per impression,
    /// * minimum welfare: 1 (the per-trial average is reported as is).
    pub fn for_scenario(scenario: &Scenario, accounting: RevenueAccounting) -> Self {
        let placements = scenario.placements() as f64;
        let q = relevance_or_unit(scenario);
        let v = scenario.values();
        let b = scenario.bids();
        let max = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0f64, f64::max);
        let revenue_unit = match accounting {
            RevenueAccounting::PerClick => max(&mut b.iter().copied()),
            RevenueAccounting::PerImpression => max(&mut q.iter().zip(&b).map(|(q, b)| q * b)),
        };
        Normalizers {
            revenue_max: positive(placements * revenue_unit),
            welfare_max: positive(placements * max(&mut q.iter().zip(&v).map(|(q, v)| q * v))),
            relevance_max: positive(placements * max(&mut q.iter().copied())),
            min_welfare_max: 1.0,
        }
    }

    /// The strict "T times the best single ad" convention: per-impression
    /// revenue over `T·max q_i b_i` and minimum welfare over `T·max v_i q_i`.
    pub fn best_single_ad(scenario: &Scenario) -> Self {
        let mut n = Self::for_scenario(scenario, RevenueAccounting::PerImpression);
        n.min_welfare_max = n.welfare_max;
        n
    }

    /// All divisors equal to one.
    pub fn unit() -> Self {
        Normalizers { revenue_max: 1.0, welfare_max: 1.0, relevance_max: 1.0, min_welfare_max: 1.0 }
    }

    pub fn of(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Revenue => self.revenue_max,
            Metric::SocialWelfare => self.welfare_max,
            Metric::Relevance => self.relevance_max,
            Metric::MinSocialWelfare => self.min_welfare_max,
        }
    }
}

fn positive(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        1.0
    }
}

/// Static relevance if present, otherwise all ones (embedding mode).
fn relevance_or_unit(scenario: &Scenario) -> Vec<f64> {
    scenario.static_q().map_or_else(|| vec![1.0; scenario.n_ads()], <[f64]>::to_vec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Revenue,
    SocialWelfare,
    Relevance,
    MinSocialWelfare,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Revenue, Metric::SocialWelfare, Metric::Relevance, Metric::MinSocialWelfare];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Revenue => "revenue",
            Metric::SocialWelfare => "social_welfare",
            Metric::Relevance => "relevance",
            Metric::MinSocialWelfare => "min_social_welfare",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Raw metrics of one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub revenue: f64,
    pub welfare: f64,
    pub relevance: f64,
    /// Allocative utility `ũ_i = Σ_t v_i q_i^(t) 1{i wins t}` of every ad.
    pub utility: Vec<f64>,
}

/// Sums revenue, welfare and relevance over segments and winners, using each
/// winner's recorded relevance as its click probability.
pub fn session_metrics(outcome: &AuctionOutcome, scenario: &Scenario, accounting: RevenueAccounting) -> SessionMetrics {
    let values = scenario.values();
    let mut m = SessionMetrics { revenue: 0.0, welfare: 0.0, relevance: 0.0, utility: vec![0.0; values.len()] };
    for seg in &outcome.segments {
        for ((&w, &price), &q) in seg.winners.iter().zip(&seg.prices).zip(&seg.winner_relevance) {
            m.revenue += match accounting {
                RevenueAccounting::PerClick => price,
                RevenueAccounting::PerImpression => q * price,
            };
            m.welfare += values[w] * q;
            m.relevance += q;
            m.utility[w] += values[w] * q;
        }
    }
    m
}

/// Mean and standard error of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: Metric,
    /// Normalized mean.
    pub mean: f64,
    /// Normalized standard error of the mean.
    pub stderr: f64,
    pub normalizer: f64,
}

/// Expected metrics under the mechanism's allocation distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectations {
    /// `None` when no closed form is implemented (combinatorial revenue).
    pub revenue: Option<f64>,
    pub welfare: f64,
    pub relevance: f64,
    /// Expected allocative utility per ad; minimum welfare is its minimum.
    pub utility: Vec<f64>,
}

impl Expectations {
    pub fn min_welfare(&self) -> f64 {
        self.utility.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Raw expectation of `metric`.
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Revenue => self.revenue,
            Metric::SocialWelfare => Some(self.welfare),
            Metric::Relevance => Some(self.relevance),
            Metric::MinSocialWelfare => Some(self.min_welfare()),
        }
    }
}

/// Aggregated metrics of one mechanism over many trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mechanism: Mechanism,
    pub trials: u64,
    pub seed: u64,
    pub accounting: RevenueAccounting,
    pub normalizers: Normalizers,
    pub metrics: Vec<MetricSummary>,
    pub counters: QueryCounters,
    /// Normalized analytic expectations, keyed like `metrics`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub analytic: Vec<(Metric, f64)>,
}

impl MetricsReport {
    pub fn get(&self, metric: Metric) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == metric)
    }

    /// Normalized mean of `metric`.
    pub fn mean(&self, metric: Metric) -> f64 {
        self.get(metric).map_or(f64::NAN, |m| m.mean)
    }

    pub fn analytic(&self, metric: Metric) -> Option<f64> {
        self.analytic.iter().find(|(m, _)| *m == metric).map(|(_, v)| *v)
    }

    /// Attaches expectations, divided by this report's normalizers.
    pub fn with_expectations(mut self, e: &Expectations) -> Self {
        self.analytic = Metric::ALL.iter().filter_map(|&m| e.get(m).map(|v| (m, v / self.normalizers.of(m)))).collect();
        self
    }
}

fn mean_stderr(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Averages session metrics (in the given order) and normalizes them.
///
/// Minimum social welfare is `min_i mean_j ũ_{i,j} / min_welfare_max`: the
/// worst-off ad's average allocative utility across trials. Its standard
/// error is that of the minimizing ad's utility.
pub fn aggregate(
    sessions: &[SessionMetrics],
    normalizers: Normalizers,
    mechanism: Mechanism,
    seed: u64,
    accounting: RevenueAccounting,
    counters: QueryCounters,
) -> MetricsReport {
    let summary = |metric: Metric, (mean, se): (f64, f64)| {
        let d = normalizers.of(metric);
        MetricSummary { metric, mean: mean / d, stderr: se / d, normalizer: d }
    };
    let n_ads = sessions.first().map_or(0, |s| s.utility.len());
    let worst = (0..n_ads)
        .map(|i| mean_stderr(sessions.iter().map(move |s| s.utility[i])))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap_or((0.0, 0.0));
    let metrics = vec![
        summary(Metric::Revenue, mean_stderr(sessions.iter().map(|s| s.revenue))),
        summary(Metric::SocialWelfare, mean_stderr(sessions.iter().map(|s| s.welfare))),
        summary(Metric::Relevance, mean_stderr(sessions.iter().map(|s| s.relevance))),
        summary(Metric::MinSocialWelfare, worst),
    ];
    MetricsReport {
        mechanism,
        trials: sessions.len() as u64,
        seed,
        accounting,
        normalizers,
        metrics,
        counters,
        analytic: Vec::new(),
    }
}

/// Per-segment relevance vectors `q^(t) = δ_t q`.
fn segment_relevance(scenario: &Scenario) -> Option<Vec<Vec<f64>>> {
    let q = scenario.static_q()?;
    Some((0..scenario.segments).map(|t| q.iter().map(|x| x * scenario.segment_factor(t)).collect()).collect())
}

/// Closed-form expectations of the raw session metrics for the scenario's
/// mechanism under static relevance. Returns `None` in embedding mode.
pub fn expected_metrics(
    scenario: &Scenario,
    accounting: RevenueAccounting,
) -> Result<Option<Expectations>, AnalyticError> {
    let Some(qs) = segment_relevance(scenario) else {
        return Ok(None);
    };
    let b = scenario.bids();
    let v = scenario.values();
    let n = b.len();
    let scale = |q: &[f64], i: usize| match accounting {
        RevenueAccounting::PerClick => 1.0,
        RevenueAccounting::PerImpression => q[i],
    };
    let mut e = Expectations { revenue: Some(0.0), welfare: 0.0, relevance: 0.0, utility: vec![0.0; n] };
    let credit = |e: &mut Expectations, q: &[f64], x: &[f64], pay: &[f64]| {
        for i in 0..n {
            e.welfare += v[i] * q[i] * x[i];
            e.relevance += q[i] * x[i];
            e.utility[i] += v[i] * q[i] * x[i];
            if let Some(r) = e.revenue.as_mut() {
                *r += scale(q, i) * pay[i];
            }
        }
    };
    match scenario.mechanism {
        Mechanism::WithReplacement | Mechanism::Naive1 => {
            for q in &qs {
                let x = softmax_allocation(q, &b)?;
                let pay: Vec<f64> = (0..n).map(|i| myerson_expected_payment(q, &b, i)).collect();
                credit(&mut e, q, &x, &pay);
            }
        }
        Mechanism::Naive2 => {
            let ones = vec![1.0; n];
            let x = softmax_allocation(&ones, &b)?;
            let pay: Vec<f64> = (0..n).map(|i| myerson_expected_payment(&ones, &b, i)).collect();
            for q in &qs {
                credit(&mut e, q, &x, &pay);
            }
        }
        Mechanism::Multi => {
            let k = scenario.k;
            for q in &qs {
                let x = (0..n).map(|i| top_k_inclusion_probability(q, &b, k, i)).collect::<Result<Vec<_>, _>>()?;
                let pay: Vec<f64> = (0..n)
                    .map(|i| {
                        let curve = |bid: f64| {
                            let mut bb = b.clone();
                            bb[i] = bid;
                            top_k_inclusion_probability(q, &bb, k, i).unwrap_or(0.0)
                        };
                        myerson_payment_quadrature(curve, b[i])
                    })
                    .collect();
                credit(&mut e, q, &x, &pay);
            }
        }
        Mechanism::WithoutReplacement => {
            let mut eligible = vec![true; n];
            without_replacement(&qs, &b, &v, &mut eligible, 0, 1.0, accounting, &mut e);
        }
        Mechanism::Combinatorial => {
            let config = scenario.combinatorial_config();
            e.revenue = None;
            for q in &qs {
                let scores = SetScores::heuristic(q, config.pairwise.as_deref(), config.alpha, config.beta, scenario.k);
                let total: f64 = (0..scores.len()).map(|a| scores.set_weight(a, &b)).sum();
                if total <= 0.0 {
                    return Err(AnalyticError::DegenerateDenominator);
                }
                for (a, set) in scores.sets.iter().enumerate() {
                    let xa = scores.set_weight(a, &b) / total;
                    for (&i, &qa) in set.iter().zip(&scores.q[a]) {
                        e.welfare += xa * v[i] * qa;
                        e.relevance += xa * qa;
                        e.utility[i] += xa * v[i] * qa;
                    }
                }
            }
        }
    }
    Ok(Some(e))
}

/// Enumerates winner sequences without replacement (sequential softmax
/// draws among the remaining ads), weighting each segment's contribution by
/// the probability of the history leading to it.
#[allow(clippy::too_many_arguments)]
fn without_replacement(
    qs: &[Vec<f64>],
    b: &[f64],
    v: &[f64],
    eligible: &mut [bool],
    t: usize,
    path: f64,
    accounting: RevenueAccounting,
    e: &mut Expectations,
) {
    if t == qs.len() || path == 0.0 {
        return;
    }
    let q: Vec<f64> = qs[t].iter().zip(eligible.iter()).map(|(&q, &ok)| if ok { q } else { 0.0 }).collect();
    let total: f64 = q.iter().zip(b).map(|(q, b)| q * b).sum();
    if total <= 0.0 {
        return;
    }
    for i in 0..b.len() {
        let w = q[i] * b[i];
        if w <= 0.0 {
            continue;
        }
        let x = w / total;
        e.welfare += path * x * v[i] * q[i];
        e.relevance += path * x * q[i];
        e.utility[i] += path * x * v[i] * q[i];
        if let Some(r) = e.revenue.as_mut() {
            let pay = myerson_expected_payment(&q, b, i);
            *r += path
                * pay
                * match accounting {
                    RevenueAccounting::PerClick => 1.0,
                    RevenueAccounting::PerImpression => q[i],
                };
        }
        eligible[i] = false;
        without_replacement(qs, b, v, eligible, t + 1, path * x, accounting, e);
        eligible[i] = true;
    }
}

/// Formats with six significant digits.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let magnitude = x.abs().log10().floor() as i32;
    if !(-4..15).contains(&magnitude) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// CSV header of [`to_csv`].
pub const CSV_HEADER: &str = "mechanism,metric,mean,stderr,normalizer,trials,seed";

/// One row per (mechanism, metric), in report order.
pub fn to_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        for m in &r.metrics {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.mechanism.name(),
                m.metric,
                sig6(m.mean),
                sig6(m.stderr),
                sig6(m.normalizer),
                r.trials,
                r.seed
            ));
        }
    }
    out
}
