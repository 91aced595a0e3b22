//! Coupled-noise incentive probes.
//!
//! One batch of noise draws is reused for every candidate bid, so the
//! utility curve differs between bids only through the bid itself. A
//! mechanism that is truthful for every noise realization then peaks at the
//! true value on every draw, and hence on the average.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::SetScores;
use crate::error::AuctionError;
use crate::mechanisms::{combinatorial_auction, multi_allocation_auction, naive_two_auction, single_auction};
use crate::sampling::{NoiseDraw, RngStream};
use crate::types::{Mechanism, NegativePaymentPolicy, SegmentRecord};

/// A one-segment auction whose bidders other than the probed ad bid their values.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeInstance {
    pub mechanism: Mechanism,
    pub values: Vec<f64>,
    pub q: Vec<f64>,
    /// Slots (multi-allocation) or set size (combinatorial).
    pub k: usize,
    /// Candidate sets; required for combinatorial instances.
    pub set_scores: Option<SetScores>,
    pub policy: NegativePaymentPolicy,
}

impl ProbeInstance {
    pub fn new(mechanism: Mechanism, values: Vec<f64>, q: Vec<f64>) -> Self {
        ProbeInstance { mechanism, values, q, k: 1, set_scores: None, policy: NegativePaymentPolicy::Clamp }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_sets(mut self, scores: SetScores) -> Self {
        self.k = scores.k;
        self.set_scores = Some(scores);
        self
    }

    fn noise_len(&self) -> usize {
        match (&self.mechanism, &self.set_scores) {
            (Mechanism::Combinatorial, Some(s)) => s.len(),
            _ => self.values.len(),
        }
    }

    /// Runs the auction with the given bids.
    pub fn run(&self, bids: &[f64], noise: &NoiseDraw) -> Result<SegmentRecord, AuctionError> {
        match self.mechanism {
            Mechanism::Naive2 => naive_two_auction(bids, &self.q, noise),
            Mechanism::Multi => multi_allocation_auction(bids, &self.q, self.k, noise),
            Mechanism::Combinatorial => {
                let scores = self.set_scores.as_ref().ok_or(AuctionError::InsufficientSets)?;
                combinatorial_auction(bids, scores, self.policy, noise)
            }
            _ => single_auction(bids, &self.q, noise),
        }
    }

    /// Realized utility `Σ q·(v − price)` of `ad` over the slots it won.
    pub fn utility(&self, ad: usize, record: &SegmentRecord) -> f64 {
        record
            .winners
            .iter()
            .zip(&record.prices)
            .zip(&record.winner_relevance)
            .filter(|((&w, _), _)| w == ad)
            .map(|((_, &p), &q)| q * (self.values[ad] - p))
            .sum()
    }
}

/// `points` bids `v·j/(points/2)` covering `[0, 2v)`; the true value sits at
/// `j = points/2` exactly.
pub fn bid_grid(value: f64, points: usize) -> Vec<f64> {
    let half = (points / 2).max(1) as f64;
    (0..points).map(|j| value * (j as f64 / half)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsicReport {
    pub mechanism: Mechanism,
    pub ad: usize,
    pub grid: Vec<f64>,
    /// Mean utility at each grid bid.
    pub utilities: Vec<f64>,
    pub truthful_index: usize,
    pub best_index: usize,
    pub passed: bool,
}

impl DsicReport {
    pub fn truthful_utility(&self) -> f64 {
        self.utilities[self.truthful_index]
    }

    pub fn best_utility(&self) -> f64 {
        self.utilities[self.best_index]
    }
}

fn shared_noise(len: usize, draws: u64, seed: u64, segment: u64) -> Vec<NoiseDraw> {
    (0..draws).map(|d| NoiseDraw::sample(&mut RngStream::new(seed, d, segment).rng(), len)).collect()
}

/// Mean utility of `ad` at each bid in `grid` over `draws` shared noise
/// draws. Passes when the truthful bid (which must be in the grid) is within
/// `1e-12` of the best grid utility.
pub fn dsic_probe(
    instance: &ProbeInstance,
    ad: usize,
    grid: &[f64],
    draws: u64,
    seed: u64,
) -> Result<DsicReport, AuctionError> {
    let v = instance.values[ad];
    let truthful_index = grid.iter().position(|&b| b == v).expect("bid grid must contain the true value");
    let noise = shared_noise(instance.noise_len(), draws, seed, 0);
    let utilities = grid
        .par_iter()
        .map(|&bid| {
            let mut bids = instance.values.clone();
            bids[ad] = bid;
            let mut total = 0.0;
            for n in &noise {
                match instance.run(&bids, n) {
                    Ok(record) => total += instance.utility(ad, &record),
                    Err(AuctionError::NoEligibleAds) => {}
                    Err(e) => return Err(e),
                }
            }
            Ok(total / draws.max(1) as f64)
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let best_index = (0..grid.len()).fold(0, |best, j| if utilities[j] > utilities[best] { j } else { best });
    let passed = utilities[truthful_index] >= utilities[best_index] - 1e-12;
    Ok(DsicReport {
        mechanism: instance.mechanism,
        ad,
        grid: grid.to_vec(),
        utilities,
        truthful_index,
        best_index,
        passed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrReport {
    pub draws: u64,
    /// Winners with negative utility or a price above their bid.
    pub violations: u64,
    pub worst_utility: f64,
}

/// Replays `draws` noise realizations with truthful bids and counts winners
/// whose utility is negative or whose per-click price exceeds the bid.
pub fn ir_check(instance: &ProbeInstance, draws: u64, seed: u64) -> Result<IrReport, AuctionError> {
    let len = instance.noise_len();
    let bids = &instance.values;
    let per_draw = (0..draws)
        .into_par_iter()
        .map(|d| {
            let noise = NoiseDraw::sample(&mut RngStream::new(seed, d, 1).rng(), len);
            let record = match instance.run(bids, &noise) {
                Ok(r) => r,
                Err(AuctionError::NoEligibleAds) => return Ok((0u64, 0.0f64)),
                Err(e) => return Err(e),
            };
            let mut bad = 0;
            let mut worst = 0.0f64;
            for (&w, &p) in record.winners.iter().zip(&record.prices) {
                let u = instance.utility(w, &record);
                worst = worst.min(u);
                let tol = 1e-12 * bids[w].max(1.0);
                let negative_price = p < 0.0 && instance.policy == NegativePaymentPolicy::Clamp;
                if u < -tol || p > bids[w] + tol || negative_price {
                    bad += 1;
                }
            }
            Ok((bad, worst))
        })
        .collect::<Result<Vec<_>, AuctionError>>()?;
    let violations = per_draw.iter().map(|r| r.0).sum();
    let worst_utility = per_draw.iter().map(|r| r.1).fold(0.0, f64::min);
    Ok(IrReport { draws, violations, worst_utility })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_contains_value() {
        let g = bid_grid(1.0, 50);
        assert_eq!(g.len(), 50);
        assert!(g.contains(&1.0));
        assert_eq!(g[0], 0.0);
        assert!(*g.last().unwrap() < 2.0);
        assert!(bid_grid(0.37, 50).contains(&0.37));
    }

    #[test]
    fn symmetric_pair_is_truthful() {
        let inst = ProbeInstance::new(Mechanism::WithReplacement, vec![1.0, 1.0], vec![1.0, 1.0]);
        let r = dsic_probe(&inst, 0, &bid_grid(1.0, 50), 10_000, 3).unwrap();
        assert!(r.passed, "{:?}", r.utilities);
        assert_eq!(r.grid[r.truthful_index], 1.0);
    }

    #[test]
    fn truthful_only_grid_passes() {
        let inst = ProbeInstance::new(Mechanism::WithReplacement, vec![1.0, 2.0], vec![0.5, 0.4]);
        assert!(dsic_probe(&inst, 1, &[2.0], 100, 0).unwrap().passed);
    }

    #[test]
    fn naive_two_is_truthful() {
        let inst = ProbeInstance::new(Mechanism::Naive2, vec![0.8, 0.5, 0.3], vec![0.2, 0.9, 0.5]);
        assert!(dsic_probe(&inst, 0, &bid_grid(0.8, 50), 5_000, 9).unwrap().passed);
    }

    #[test]
    fn overbidding_hurts_under_a_broken_price() {
        // a first-price variant is not truthful: shading must beat bidding v
        let inst = ProbeInstance::new(Mechanism::WithReplacement, vec![1.0, 1.0], vec![1.0, 1.0]);
        let noise = shared_noise(2, 2000, 5, 0);
        let first_price = |bid: f64| {
            noise
                .iter()
                .map(|n| {
                    let r = inst.run(&[bid, 1.0], n).unwrap();
                    if r.winners[0] == 0 {
                        1.0 - bid
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
        };
        assert!(first_price(0.6) > first_price(1.0));
    }

    #[test]
    fn ir_holds_for_single_and_multi() {
        let single = ProbeInstance::new(Mechanism::WithReplacement, vec![0.7, 0.2, 0.9], vec![0.3, 0.8, 0.5]);
        assert_eq!(ir_check(&single, 5_000, 1).unwrap().violations, 0);
        let multi = single.clone().with_k(2);
        let multi = ProbeInstance { mechanism: Mechanism::Multi, ..multi };
        assert_eq!(ir_check(&multi, 5_000, 1).unwrap().violations, 0);
    }
}
