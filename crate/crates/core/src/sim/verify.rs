//! Named suites of oracle checks, as run by `segauc verify`.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::dsic::{bid_grid, dsic_probe, ir_check, ProbeInstance};
use super::oracles::{
    oracle_clsw, oracle_lsw, oracle_myerson, oracle_set_frequencies, random_instance, Criterion, OracleReport,
};
use crate::analytic::{combinations, set_win_probability, KahanSum, SetScores};
use crate::error::AnalyticError;
use crate::mechanisms::{run_session, SessionEnv};
use crate::providers::{static_relevance, HeuristicSetRelevance, StubGenerator};
use crate::sampling::{open_uniform, RngStream};
use crate::scenarios;
use crate::types::{Mechanism, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// Every suite below except `dsic_comb`.
    All,
    /// Gumbel-max win frequencies against the softmax allocation.
    Allocation,
    /// Top-k set frequencies against inclusion-exclusion.
    Thm3,
    /// Monte Carlo expected payments against the closed form.
    Myerson,
    /// LSW and CLSW maximizers against random and gradient optima.
    Lsw,
    /// Coupled-noise truthfulness and realized IR for single, multi and naive II.
    Dsic,
    /// The same probes for the combinatorial auction.
    DsicComb,
    /// Exact relevance and generator call counts.
    Counters,
}

impl Suite {
    pub const NAMES: [&'static str; 8] =
        ["all", "allocation", "thm3", "myerson", "lsw", "dsic", "dsic-comb", "counters"];
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "all" => Suite::All,
            "allocation" | "softmax" => Suite::Allocation,
            "thm3" | "setwin" => Suite::Thm3,
            "myerson" => Suite::Myerson,
            "lsw" => Suite::Lsw,
            "dsic" => Suite::Dsic,
            "dsic-comb" => Suite::DsicComb,
            "counters" => Suite::Counters,
            other => return Err(format!("unknown suite `{other}`; expected one of {}", Suite::NAMES.join(", "))),
        })
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = [
            Suite::All,
            Suite::Allocation,
            Suite::Thm3,
            Suite::Myerson,
            Suite::Lsw,
            Suite::Dsic,
            Suite::DsicComb,
            Suite::Counters,
        ]
        .iter()
        .position(|s| s == self)
        .unwrap();
        f.write_str(Suite::NAMES[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Monte Carlo draws per frequency or payment check.
    pub samples: u64,
    /// Fix the roster size of the `thm3` suite (one instance instead of many).
    pub n: Option<usize>,
    pub k: Option<usize>,
    /// Random instances per suite (20 for thm3/lsw, 50 for myerson, 10 for dsic by default).
    pub instances: Option<usize>,
    pub dsic_draws: u64,
    pub ir_draws: u64,
    pub simplex_points: usize,
    /// Negative control: substitute a wrong allocation formula.
    pub inject_fault: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 1,
            samples: 1_000_000,
            n: None,
            k: None,
            instances: None,
            dsic_draws: 10_000,
            ir_draws: 10_000,
            simplex_points: 10_000,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub seed: u64,
    pub checks: Vec<OracleReport>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn failures(&self) -> impl Iterator<Item = &OracleReport> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Runs `suite` and collects every check.
pub fn verify(suite: Suite, options: &VerifyOptions) -> Result<VerifyReport, AnalyticError> {
    let checks = match suite {
        Suite::All => {
            let mut all = Vec::new();
            for s in [Suite::Allocation, Suite::Thm3, Suite::Myerson, Suite::Lsw, Suite::Dsic, Suite::Counters] {
                all.extend(verify(s, options)?.checks);
            }
            all
        }
        Suite::Allocation => allocation(options)?,
        Suite::Thm3 => thm3(options)?,
        Suite::Myerson => myerson(options),
        Suite::Lsw => lsw(options)?,
        Suite::Dsic => dsic(options, &[Mechanism::WithReplacement, Mechanism::Multi, Mechanism::Naive2]),
        Suite::DsicComb => dsic(options, &[Mechanism::Combinatorial]),
        Suite::Counters => counters(),
    };
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport { suite, seed: options.seed, checks, passed })
}

/// Instance generator for check `j` of a suite.
fn instance_rng(seed: u64, suite: u64, j: usize) -> rand_chacha::ChaCha8Rng {
    RngStream::new(seed, j as u64, 1000 + suite).rng()
}

/// Uniform integer in `lo..=hi`.
fn pick<R: RngCore>(rng: &mut R, lo: usize, hi: usize) -> usize {
    lo + (open_uniform(rng) * (hi - lo + 1) as f64) as usize
}

fn mc_seed(seed: u64, suite: u64, j: usize) -> u64 {
    seed ^ (suite << 48) ^ ((j as u64 + 1) << 32)
}

/// Per-ad win frequencies on the shipped rosters.
fn allocation(o: &VerifyOptions) -> Result<Vec<OracleReport>, AnalyticError> {
    let mut out = Vec::new();
    for (j, (name, s)) in scenarios::all().into_iter().enumerate() {
        let q = s.static_q().expect("shipped rosters carry q").to_vec();
        let b = s.bids();
        for mut r in oracle_set_frequencies(&q, &b, 1, o.samples, mc_seed(o.seed, 1, j))? {
            if o.inject_fault {
                // relevance-only allocation, ignoring bids
                let i = (0..q.len()).find(|&i| r.name.ends_with(&format!("[{i}])"))).unwrap_or(0);
                let wrong = q[i] / q.iter().sum::<f64>();
                r = OracleReport::three_sigma(r.name, wrong, r.empirical, r.stderr);
            }
            r.name = format!("{name} {}", r.name);
            out.push(r);
        }
    }
    Ok(out)
}

fn thm3(o: &VerifyOptions) -> Result<Vec<OracleReport>, AnalyticError> {
    let shapes: Vec<(usize, usize)> = match (o.n, o.k) {
        (Some(n), Some(k)) => vec![(n, k)],
        _ => {
            let count = o.instances.unwrap_or(20);
            (0..count)
                .map(|j| {
                    let mut rng = instance_rng(o.seed, 2, j);
                    let n = o.n.unwrap_or_else(|| pick(&mut rng, 2, 6));
                    (n, o.k.unwrap_or_else(|| pick(&mut rng, 1, n.min(3))))
                })
                .collect()
        }
    };
    let mut out = Vec::new();
    for (j, &(n, k)) in shapes.iter().enumerate() {
        let mut rng = instance_rng(o.seed, 3, j);
        let (q, b) = random_instance(&mut rng, n);
        for mut r in oracle_set_frequencies(&q, &b, k, o.samples, mc_seed(o.seed, 3, j))? {
            r.name = format!("instance {j} (n={n}, k={k}) {}", r.name);
            out.push(r);
        }
        let total: KahanSum = combinations(n, k)
            .iter()
            .map(|s| set_win_probability(&q, &b, s))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .collect();
        out.push(OracleReport::new(
            format!("instance {j} (n={n}, k={k}) Σ set probabilities"),
            total.total(),
            1.0,
            0.0,
            Criterion::Absolute(1e-9),
        ));
    }
    Ok(out)
}

fn myerson(o: &VerifyOptions) -> Vec<OracleReport> {
    let mut out = Vec::new();
    let symmetric = oracle_myerson(&[1.0, 1.0], &[1.0, 1.0], o.samples, mc_seed(o.seed, 4, 0));
    out.push(OracleReport::new(
        "symmetric pair: closed form vs ln 2 − 1/2",
        symmetric[0].analytic,
        2f64.ln() - 0.5,
        0.0,
        Criterion::Absolute(1e-12),
    ));
    out.push(OracleReport::new(
        "symmetric pair: Monte Carlo vs ln 2 − 1/2",
        2f64.ln() - 0.5,
        symmetric[0].empirical,
        symmetric[0].stderr,
        Criterion::Absolute(1e-3),
    ));
    for j in 0..o.instances.unwrap_or(50) {
        let mut rng = instance_rng(o.seed, 5, j);
        let n = pick(&mut rng, 2, 6);
        let (q, b) = random_instance(&mut rng, n);
        for mut r in oracle_myerson(&q, &b, o.samples, mc_seed(o.seed, 5, j)) {
            r.name = format!("instance {j} (n={n}) {}", r.name);
            out.push(r);
        }
    }
    out
}

fn lsw(o: &VerifyOptions) -> Result<Vec<OracleReport>, AnalyticError> {
    let mut out = Vec::new();
    for j in 0..o.instances.unwrap_or(20) {
        let mut rng = instance_rng(o.seed, 6, j);
        let n = pick(&mut rng, 2, 8);
        let (q, v) = random_instance(&mut rng, n);
        for mut r in oracle_lsw(&q, &v, o.simplex_points, mc_seed(o.seed, 6, j))? {
            r.name = format!("instance {j} (n={n}) {}", r.name);
            out.push(r);
        }
        let mut rng = instance_rng(o.seed, 7, j);
        let n = pick(&mut rng, 2, 5);
        let k = pick(&mut rng, 1, 2.min(n));
        let (q, v) = random_instance(&mut rng, n);
        let pairwise: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| open_uniform(&mut rng)).collect()).collect();
        let beta = open_uniform(&mut rng);
        let scores = SetScores::heuristic(&q, Some(&pairwise), 1.0, beta, k);
        for mut r in oracle_clsw(&scores, &v, o.simplex_points, mc_seed(o.seed, 7, j))? {
            r.name = format!("instance {j} (n={n}, k={k}) {}", r.name);
            out.push(r);
        }
    }
    Ok(out)
}

/// Random probe instance for `mechanism`; combinatorial instances use the
/// heuristic set relevance with random pairwise terms.
pub(crate) fn probe_instance(mechanism: Mechanism, seed: u64, j: usize) -> ProbeInstance {
    let mut rng = instance_rng(seed, 8 + mechanism as u64, j);
    let (n, k) = match mechanism {
        Mechanism::Multi => (pick(&mut rng, 3, 6), 2),
        Mechanism::Combinatorial => {
            let n = pick(&mut rng, 3, 5);
            (n, pick(&mut rng, 1, 2))
        }
        _ => (pick(&mut rng, 2, 6), 1),
    };
    let (q, v) = random_instance(&mut rng, n);
    let instance = ProbeInstance::new(mechanism, v, q.clone()).with_k(k);
    if mechanism == Mechanism::Combinatorial {
        let pairwise: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| open_uniform(&mut rng)).collect()).collect();
        let beta = open_uniform(&mut rng);
        instance.with_sets(SetScores::heuristic(&q, Some(&pairwise), 1.0, beta, k))
    } else {
        instance
    }
}

fn dsic(o: &VerifyOptions, mechanisms: &[Mechanism]) -> Vec<OracleReport> {
    let mut out = Vec::new();
    for &m in mechanisms {
        let mut violations = 0;
        let mut draws = 0;
        for j in 0..o.instances.unwrap_or(10) {
            let inst = probe_instance(m, o.seed, j);
            let ad = j % inst.values.len();
            let seed = mc_seed(o.seed, 8, j);
            match dsic_probe(&inst, ad, &bid_grid(inst.values[ad], 50), o.dsic_draws, seed) {
                Ok(r) => out.push(OracleReport::new(
                    format!("{m} instance {j}: truthful bid maximizes utility of ad {ad}"),
                    r.truthful_utility(),
                    r.best_utility(),
                    0.0,
                    Criterion::AtLeast(1e-12),
                )),
                Err(e) => out.push(OracleReport::new(
                    format!("{m} instance {j}: {e}"),
                    0.0,
                    1.0,
                    0.0,
                    Criterion::Absolute(0.0),
                )),
            }
            match ir_check(&inst, o.ir_draws, seed) {
                Ok(r) => {
                    violations += r.violations;
                    draws += r.draws;
                }
                Err(_) => violations += 1,
            }
        }
        out.push(OracleReport::new(
            format!("{m}: IR violations over {draws} replayed draws"),
            0.0,
            violations as f64,
            0.0,
            Criterion::Absolute(0.0),
        ));
    }
    out
}

fn counters() -> Vec<OracleReport> {
    let base = scenarios::scenario1();
    let n = base.n_ads();
    let mut out = Vec::new();
    let mut check = |name: String, expected: u64, got: u64| {
        out.push(OracleReport::new(name, expected as f64, got as f64, 0.0, Criterion::Absolute(0.0)));
    };
    let run = |s: &Scenario| {
        let rel = static_relevance(s).expect("static roster");
        let sets = HeuristicSetRelevance::new(s.static_q().unwrap().to_vec(), None, 1.0, 0.0);
        let env = SessionEnv::new(&rel, &StubGenerator).with_set_relevance(&sets);
        run_session(s, &env, 0).map(|o| o.counters)
    };
    for m in [Mechanism::WithReplacement, Mechanism::WithoutReplacement, Mechanism::Naive1, Mechanism::Naive2] {
        let s = base.for_mechanism(m);
        let t = s.segments as u64;
        match run(&s) {
            Ok(c) => {
                check(format!("{m}: relevance calls = n·T"), n as u64 * t, c.relevance_calls);
                check(format!("{m}: generator calls = T"), t, c.generator_calls);
            }
            Err(_) => check(format!("{m}: session failed"), 0, 1),
        }
    }
    for k in 1..=3 {
        let mut s = base.for_mechanism(Mechanism::Combinatorial);
        s.k = k;
        let expected = k as u64 * crate::analytic::binomial(n, k) * s.segments as u64;
        match run(&s) {
            Ok(c) => {
                check(format!("combinatorial k={k}: relevance calls = k·C(n,k)·T"), expected, c.relevance_calls);
                check(format!("combinatorial k={k}: generator calls = T"), s.segments as u64, c.generator_calls);
            }
            Err(_) => check(format!("combinatorial k={k}: session failed"), 0, 1),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> VerifyOptions {
        VerifyOptions {
            samples: 100_000,
            instances: Some(3),
            dsic_draws: 500,
            ir_draws: 500,
            simplex_points: 500,
            ..Default::default()
        }
    }

    #[test]
    fn suite_names_round_trip() {
        for name in Suite::NAMES {
            assert_eq!(name.parse::<Suite>().unwrap().to_string(), name);
        }
    }

    #[test]
    fn thm3_with_fixed_shape_has_ten_sets() {
        let r = verify(Suite::Thm3, &VerifyOptions { n: Some(5), k: Some(2), ..quick() }).unwrap();
        assert_eq!(r.checks.len(), 11);
        assert!(r.passed, "{:?}", r.failures().collect::<Vec<_>>());
    }

    #[test]
    fn counters_suite_is_exact() {
        let r = verify(Suite::Counters, &quick()).unwrap();
        assert!(r.passed, "{:?}", r.failures().collect::<Vec<_>>());
    }

    #[test]
    fn injected_fault_fails() {
        let r = verify(Suite::Allocation, &VerifyOptions { inject_fault: true, ..quick() }).unwrap();
        assert!(!r.passed);
        let r = verify(Suite::Allocation, &quick()).unwrap();
        assert!(r.passed, "{:?}", r.failures().collect::<Vec<_>>());
    }
}
