//! Experiment harness: parallel trials, Monte Carlo oracles, incentive probes
//! and the verification suites built from them.
//!
//! Trials are independent work items keyed by `(seed, trial, segment)`
//! streams. Results are collected in trial order before any floating-point
//! reduction, so the thread count never changes a report.

mod dsic;
mod oracles;
mod verify;

use rayon::prelude::*;
use thiserror::Error;

use crate::error::{AuctionError, ProviderError, ValidationErrors};
use crate::mechanisms::{run_session, SessionEnv};
use crate::metrics::{aggregate, expected_metrics, session_metrics, MetricsReport, Normalizers, RevenueAccounting};
use crate::providers::{scenario_set_relevance, static_relevance, StubGenerator};
use crate::types::{AuctionOutcome, Mechanism, QueryCounters, Scenario};

pub use dsic::{bid_grid, dsic_probe, ir_check, DsicReport, IrReport, ProbeInstance};
pub use oracles::{
    lsw_projected_gradient, maximize_weighted_log, oracle_clsw, oracle_lsw, oracle_myerson, oracle_set_frequencies,
    oracle_win_frequency, random_instance, random_simplex_points, Criterion, OracleReport,
};
pub use verify::{verify, Suite, VerifyOptions, VerifyReport};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid scenario: {0}")]
    Invalid(#[from] ValidationErrors),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("trial {trial}: {source}")]
    Auction { trial: u64, source: AuctionError },
}

/// Result of running one mechanism over all trials.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub report: MetricsReport,
    /// Per-trial outcomes, when requested.
    pub outcomes: Option<Vec<AuctionOutcome>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentOptions {
    pub accounting: RevenueAccounting,
    /// Overrides the scenario-derived normalizers.
    pub normalizers: Option<Normalizers>,
    pub keep_outcomes: bool,
    /// Attach closed-form expectations to the report.
    pub expectations: bool,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            accounting: RevenueAccounting::PerClick,
            normalizers: None,
            keep_outcomes: false,
            expectations: true,
        }
    }
}

/// Runs `scenario.trials` sessions of the scenario's mechanism in parallel
/// and aggregates their metrics.
pub fn run_experiment(
    scenario: &Scenario,
    env: &SessionEnv<'_>,
    options: &ExperimentOptions,
) -> Result<Experiment, RunError> {
    scenario.validate()?;
    let results: Vec<Result<AuctionOutcome, RunError>> = (0..scenario.trials)
        .into_par_iter()
        .map(|trial| run_session(scenario, env, trial).map_err(|source| RunError::Auction { trial, source }))
        .collect();
    let outcomes = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut counters = QueryCounters::default();
    for o in &outcomes {
        counters += o.counters;
    }
    let sessions: Vec<_> = outcomes.iter().map(|o| session_metrics(o, scenario, options.accounting)).collect();
    let normalizers = options.normalizers.unwrap_or_else(|| Normalizers::for_scenario(scenario, options.accounting));
    let mut report = aggregate(&sessions, normalizers, scenario.mechanism, scenario.seed, options.accounting, counters);
    if options.expectations {
        if let Ok(Some(e)) = expected_metrics(scenario, options.accounting) {
            report = report.with_expectations(&e);
        }
    }
    Ok(Experiment { report, outcomes: options.keep_outcomes.then_some(outcomes) })
}

/// Runs a static-relevance scenario with the stub generator.
pub fn run_static(scenario: &Scenario, options: &ExperimentOptions) -> Result<Experiment, RunError> {
    let relevance = static_relevance(scenario)?;
    let set_relevance =
        if scenario.mechanism == Mechanism::Combinatorial { Some(scenario_set_relevance(scenario)?) } else { None };
    let mut env = SessionEnv::new(&relevance, &StubGenerator);
    if let Some(p) = &set_relevance {
        env = env.with_set_relevance(p.as_ref());
    }
    run_experiment(scenario, &env, options)
}

/// Runs each mechanism on the scenario (re-targeted with
/// [`Scenario::for_mechanism`]) and returns the reports in order.
pub fn compare_mechanisms(
    scenario: &Scenario,
    mechanisms: &[Mechanism],
    options: &ExperimentOptions,
) -> Result<Vec<MetricsReport>, RunError> {
    mechanisms.iter().map(|&m| run_static(&scenario.for_mechanism(m), options).map(|e| e.report)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Metric;
    use crate::scenarios::scenario1;

    #[test]
    fn counters_add_up_over_trials() {
        let mut s = scenario1();
        s.trials = 10;
        let e = run_static(&s, &ExperimentOptions::default()).unwrap();
        assert_eq!(e.report.counters, QueryCounters { relevance_calls: 120, generator_calls: 30 });
    }

    #[test]
    fn identical_seeds_identical_reports() {
        let mut s = scenario1();
        s.trials = 50;
        let a = run_static(&s, &ExperimentOptions::default()).unwrap();
        let b = run_static(&s, &ExperimentOptions::default()).unwrap();
        assert_eq!(a, b);
        s.seed += 1;
        let c = run_static(&s, &ExperimentOptions::default()).unwrap();
        assert_ne!(a.report.metrics, c.report.metrics);
    }

    #[test]
    fn parallel_matches_serial() {
        let mut s = scenario1();
        s.trials = 40;
        let parallel = run_static(&s, &ExperimentOptions::default()).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = pool.install(|| run_static(&s, &ExperimentOptions::default()).unwrap());
        assert_eq!(parallel, serial);
    }

    #[test]
    fn degenerate_single_ad() {
        let mut s = Scenario::from_vectors(&[1.0], &[0.5], Mechanism::WithReplacement);
        s.trials = 1;
        let e = run_static(&s, &ExperimentOptions::default()).unwrap();
        assert!(e.report.metrics.iter().all(|m| m.stderr == 0.0));
        assert_eq!(e.report.mean(Metric::Revenue), 0.0);
        assert_eq!(e.report.mean(Metric::Relevance), 1.0);
    }

    #[test]
    fn invalid_scenario_is_rejected() {
        let s = Scenario::from_vectors(&[-1.0], &[0.5], Mechanism::WithReplacement);
        assert!(matches!(run_static(&s, &ExperimentOptions::default()), Err(RunError::Invalid(_))));
    }
}
