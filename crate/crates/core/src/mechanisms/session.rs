//! Multi-segment sessions: one auction per segment, relevance refreshed from
//! the provider and text produced by the generator each time.

use crate::analytic::{combinations, SetScores};
use crate::error::AuctionError;
use crate::providers::{GenerationRequest, GeneratorAdapter, RelevanceProvider, SegmentContext, SetRelevanceProvider};
use crate::sampling::{NoiseDraw, RngStream};
use crate::types::{AuctionOutcome, Mechanism, QueryCounters, Scenario, SegmentRecord};

use super::{
    combinatorial_auction, multi_allocation_auction, naive_one_auction, naive_two_auction, single_auction,
    single_auction_among,
};

/// Providers a session talks to.
#[derive(Clone, Copy)]
pub struct SessionEnv<'a> {
    pub relevance: &'a dyn RelevanceProvider,
    /// Required by combinatorial sessions only.
    pub set_relevance: Option<&'a dyn SetRelevanceProvider>,
    pub generator: &'a dyn GeneratorAdapter,
    /// Keep generated text in the segment records.
    pub keep_text: bool,
}

impl<'a> SessionEnv<'a> {
    pub fn new(relevance: &'a dyn RelevanceProvider, generator: &'a dyn GeneratorAdapter) -> Self {
        SessionEnv { relevance, set_relevance: None, generator, keep_text: false }
    }

    pub fn with_set_relevance(mut self, provider: &'a dyn SetRelevanceProvider) -> Self {
        self.set_relevance = Some(provider);
        self
    }

    pub fn keep_text(mut self, keep: bool) -> Self {
        self.keep_text = keep;
        self
    }
}

/// Shared segment loop. `auction` receives the segment index, the fresh
/// per-ad relevance, the RNG stream and the counters, and returns the record.
fn run_segments<F>(
    scenario: &Scenario,
    env: &SessionEnv<'_>,
    trial: u64,
    mut auction: F,
) -> Result<AuctionOutcome, AuctionError>
where
    F: FnMut(usize, &SegmentContext<'_>, &mut QueryCounters, RngStream) -> Result<SegmentRecord, AuctionError>,
{
    let mut counters = QueryCounters::default();
    let mut previous: Vec<String> = Vec::with_capacity(scenario.segments);
    let mut segments = Vec::with_capacity(scenario.segments);
    for t in 0..scenario.segments {
        let ctx = SegmentContext::new(t, &previous);
        let stream = RngStream::new(scenario.seed, trial, t as u64);
        let mut record = auction(t, &ctx, &mut counters, stream)?;

        let request = GenerationRequest {
            query: &scenario.query,
            previous: &previous,
            winners: record.winners.iter().map(|&w| &scenario.ads[w]).collect(),
            composition: record.composition,
        };
        let text = env.generator.generate(&request)?;
        counters.generator_calls += 1;
        if env.keep_text {
            record.text = Some(text.clone());
        }
        previous.push(text);
        segments.push(record);
    }
    Ok(AuctionOutcome { mechanism: scenario.mechanism, segments, counters })
}

/// Queries every ad's relevance for the current segment.
fn query_relevance(
    scenario: &Scenario,
    env: &SessionEnv<'_>,
    ctx: &SegmentContext<'_>,
    counters: &mut QueryCounters,
) -> Result<Vec<f64>, AuctionError> {
    scenario
        .ads
        .iter()
        .enumerate()
        .map(|(i, ad)| {
            counters.relevance_calls += 1;
            Ok(env.relevance.relevance(&scenario.query, ad, i, ctx)?)
        })
        .collect()
}

/// `T` independent single auctions; the same ad may win repeatedly.
pub fn session_with_replacement(
    scenario: &Scenario,
    env: &SessionEnv<'_>,
    trial: u64,
) -> Result<AuctionOutcome, AuctionError> {
    let bids = scenario.bids();
    run_segments(scenario, env, trial, |_, ctx, counters, stream| {
        let q = query_relevance(scenario, env, ctx, counters)?;
        let noise = NoiseDraw::sample(&mut stream.rng(), bids.len());
        match scenario.mechanism {
            Mechanism::Naive1 => naive_one_auction(&bids, &q, &noise),
            Mechanism::Naive2 => naive_two_auction(&bids, &q, &noise),
            _ => single_auction(&bids, &q, &noise),
        }
    })
}

/// Single auctions where earlier winners are removed from later segments.
/// Every ad's relevance is still queried each segment.
pub fn session_without_replacement(
    scenario: &Scenario,
    env: &SessionEnv<'_>,
    trial: u64,
) -> Result<AuctionOutcome, AuctionError> {
    let bids = scenario.bids();
    let mut eligible = vec![true; bids.len()];
    run_segments(scenario, env, trial, |t, ctx, counters, stream| {
        let q = query_relevance(scenario, env, ctx, counters)?;
        if !eligible.iter().any(|&e| e) {
            return Err(AuctionError::WithoutReplacementInfeasible(t));
        }
        let noise = NoiseDraw::sample(&mut stream.rng(), bids.len());
        let record = single_auction_among(&bids, &q, &eligible, &noise)?;
        for &w in &record.winners {
            eligible[w] = false;
        }
        Ok(record)
    })
}

/// `k` winners per segment.
pub fn session_multi(scenario: &Scenario, env: &SessionEnv<'_>, trial: u64) -> Result<AuctionOutcome, AuctionError> {
    let bids = scenario.bids();
    run_segments(scenario, env, trial, |_, ctx, counters, stream| {
        let q = query_relevance(scenario, env, ctx, counters)?;
        let noise = NoiseDraw::sample(&mut stream.rng(), bids.len());
        multi_allocation_auction(&bids, &q, scenario.k, &noise)
    })
}

/// One `k`-set per segment, scored with the set-relevance provider
/// (`k · C(n, k)` relevance calls per segment).
pub fn session_combinatorial(
    scenario: &Scenario,
    env: &SessionEnv<'_>,
    trial: u64,
) -> Result<AuctionOutcome, AuctionError> {
    let provider = env.set_relevance.ok_or(AuctionError::InsufficientSets)?;
    let bids = scenario.bids();
    let policy = scenario.combinatorial_config().negative_payment;
    let sets = combinations(bids.len(), scenario.k);
    run_segments(scenario, env, trial, |_, ctx, counters, stream| {
        let mut q = Vec::with_capacity(sets.len());
        for set in &sets {
            let members = (0..set.len())
                .map(|m| {
                    counters.relevance_calls += 1;
                    provider.member_relevance(&scenario.query, &scenario.ads, set, m, ctx)
                })
                .collect::<Result<Vec<f64>, _>>()?;
            q.push(members);
        }
        let scores = SetScores::new(scenario.k, sets.clone(), q).map_err(|_| AuctionError::InsufficientSets)?;
        let noise = NoiseDraw::sample(&mut stream.rng(), scores.len());
        combinatorial_auction(&bids, &scores, policy, &noise)
    })
}

/// Runs trial `trial` of the scenario's configured mechanism.
pub fn run_session(scenario: &Scenario, env: &SessionEnv<'_>, trial: u64) -> Result<AuctionOutcome, AuctionError> {
    match scenario.mechanism {
        Mechanism::WithReplacement | Mechanism::Naive1 | Mechanism::Naive2 => {
            session_with_replacement(scenario, env, trial)
        }
        Mechanism::WithoutReplacement => session_without_replacement(scenario, env, trial),
        Mechanism::Multi => session_multi(scenario, env, trial),
        Mechanism::Combinatorial => session_combinatorial(scenario, env, trial),
    }
}
