//! Executable auction mechanisms.
//!
//! Each auction is a pure function of the bids, the relevance scores and one
//! [`NoiseDraw`]. Scores are compared in log space (`ln(q b) + eps`), which
//! avoids overflow in `e^eps` and lets ads with `q b = 0` sit at negative
//! infinity: they never win and never set a price. Exact ties go to the
//! lowest index.

mod session;

use std::cmp::Ordering;

use crate::analytic::SetScores;
use crate::error::AuctionError;
use crate::sampling::{log_score, NoiseDraw};
use crate::types::{Composition, NegativePaymentPolicy, SegmentRecord};

pub use session::{
    run_session, session_combinatorial, session_multi, session_with_replacement, session_without_replacement,
    SessionEnv,
};

/// Eligible entries ordered by descending log-score, ties to the lower index.
fn rank(log_scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..log_scores.len()).filter(|&i| log_scores[i] > f64::NEG_INFINITY).collect();
    order.sort_by(|&a, &b| match log_scores[b].partial_cmp(&log_scores[a]) {
        Some(Ordering::Equal) | None => a.cmp(&b),
        Some(o) => o,
    });
    order
}

/// Top-`k` selection with threshold prices: each winner pays the smallest
/// per-click bid that keeps it above the `(k+1)`-th perturbed score,
/// `b_w · exp(ls_{k+1} − ls_w)`. With no `(k+1)`-th eligible entry the price is 0.
fn top_k_threshold(
    weights: &[f64],
    bids: &[f64],
    clicks: &[f64],
    k: usize,
    noise: &NoiseDraw,
    composition: Composition,
) -> Result<SegmentRecord, AuctionError> {
    noise.expect_len(weights.len())?;
    let log_scores: Vec<f64> = weights.iter().zip(noise.values()).map(|(&w, &e)| log_score(w, e)).collect();
    let order = rank(&log_scores);
    if order.is_empty() {
        return Err(AuctionError::NoEligibleAds);
    }
    if order.len() < k {
        return Err(AuctionError::NotEnoughCompetitors { k, eligible: order.len() });
    }
    let threshold = order.get(k).map_or(f64::NEG_INFINITY, |&j| log_scores[j]);
    let winners: Vec<usize> = order[..k].to_vec();
    let prices = winners.iter().map(|&w| bids[w] * (threshold - log_scores[w]).exp()).collect();
    let winner_relevance = winners.iter().map(|&w| clicks[w]).collect();
    Ok(SegmentRecord {
        winners,
        prices,
        winner_relevance,
        log_scores,
        noise: noise.clone(),
        winning_set: None,
        composition,
        text: None,
    })
}

fn check_lengths(bids: &[f64], q: &[f64]) {
    assert_eq!(bids.len(), q.len(), "bids and relevance must have one entry per ad");
}

/// Single-allocation segment auction: the winner maximizes `q_i b_i e^{eps_i}`
/// and pays `q_l b_l e^{eps_l} / (q_w e^{eps_w})` per click, `l` the runner-up.
pub fn single_auction(bids: &[f64], q: &[f64], noise: &NoiseDraw) -> Result<SegmentRecord, AuctionError> {
    check_lengths(bids, q);
    let weights: Vec<f64> = q.iter().zip(bids).map(|(q, b)| q * b).collect();
    top_k_threshold(&weights, bids, q, 1, noise, Composition::Integrated)
}

/// Single auction restricted to `eligible` ads; the runner-up is the best
/// remaining competitor.
pub fn single_auction_among(
    bids: &[f64],
    q: &[f64],
    eligible: &[bool],
    noise: &NoiseDraw,
) -> Result<SegmentRecord, AuctionError> {
    check_lengths(bids, q);
    let weights: Vec<f64> = (0..bids.len()).map(|i| if eligible[i] { q[i] * bids[i] } else { 0.0 }).collect();
    top_k_threshold(&weights, bids, q, 1, noise, Composition::Integrated)
}

/// Same allocation and payment as [`single_auction`]; the ad copy is appended
/// to the output instead of being integrated by the generator.
pub fn naive_one_auction(bids: &[f64], q: &[f64], noise: &NoiseDraw) -> Result<SegmentRecord, AuctionError> {
    let mut record = single_auction(bids, q, noise)?;
    record.composition = Composition::Append;
    Ok(record)
}

/// Relevance-blind baseline: scores `b_i e^{eps_i}`, price
/// `b_{i'} e^{eps_{i'}} / e^{eps_{i*}}`. `q` is only recorded as the winner's
/// click-through proxy.
pub fn naive_two_auction(bids: &[f64], q: &[f64], noise: &NoiseDraw) -> Result<SegmentRecord, AuctionError> {
    check_lengths(bids, q);
    top_k_threshold(bids, bids, q, 1, noise, Composition::Integrated)
}

/// Multi-allocation segment auction: the top `k` perturbed scores win and
/// each pays against the `(k+1)`-th score.
pub fn multi_allocation_auction(
    bids: &[f64],
    q: &[f64],
    k: usize,
    noise: &NoiseDraw,
) -> Result<SegmentRecord, AuctionError> {
    check_lengths(bids, q);
    if k > bids.len() {
        return Err(AuctionError::NotEnoughCompetitors { k, eligible: bids.len() });
    }
    let weights: Vec<f64> = q.iter().zip(bids).map(|(q, b)| q * b).collect();
    top_k_threshold(&weights, bids, q, k, noise, Composition::Integrated)
}

/// Combinatorial segment auction over candidate sets.
///
/// Set `A` scores `(Σ_{i∈A} q_{A,i} b_i) e^{eps_A}`; the best set `A*` wins.
/// Member `i` pays the VCG-style price
/// `(s_{A'(i)} − Σ_{j∈A*∖i} q_{A*,j} b_j e^{eps_{A*}}) / (q_{A*,i} e^{eps_{A*}})`
/// where `A'(i)` is the best set without `i`. When no such set exists, or
/// `q_{A*,i} = 0`, the price is 0. The raw price can be negative; `policy`
/// decides whether it is clamped.
pub fn combinatorial_auction(
    bids: &[f64],
    scores: &SetScores,
    policy: NegativePaymentPolicy,
    noise: &NoiseDraw,
) -> Result<SegmentRecord, AuctionError> {
    if scores.is_empty() {
        return Err(AuctionError::InsufficientSets);
    }
    noise.expect_len(scores.len())?;
    let eps = noise.values();
    let log_scores: Vec<f64> = (0..scores.len()).map(|a| log_score(scores.set_weight(a, bids), eps[a])).collect();
    let best = *rank(&log_scores).first().ok_or(AuctionError::NoEligibleAds)?;
    let members = &scores.sets[best];
    let member_q = &scores.q[best];

    let prices = members
        .iter()
        .enumerate()
        .map(|(m, &i)| {
            let qi = member_q[m];
            if qi <= 0.0 {
                return 0.0;
            }
            let excluded = scores
                .sets
                .iter()
                .enumerate()
                .filter(|(_, s)| !s.contains(&i))
                .map(|(a, _)| log_scores[a])
                .fold(f64::NEG_INFINITY, f64::max);
            let has_alternative = scores.sets.iter().any(|s| !s.contains(&i));
            if !has_alternative {
                return 0.0;
            }
            // both terms are divided through by e^{eps_{A*}}
            let rival = (excluded - eps[best]).exp();
            let others: f64 = members.iter().zip(member_q).filter(|(&j, _)| j != i).map(|(&j, &q)| q * bids[j]).sum();
            let raw = (rival - others) / qi;
            match policy {
                NegativePaymentPolicy::Allow => raw,
                NegativePaymentPolicy::Clamp => raw.max(0.0),
            }
        })
        .collect();

    Ok(SegmentRecord {
        winners: members.clone(),
        prices,
        winner_relevance: member_q.clone(),
        log_scores,
        noise: noise.clone(),
        winning_set: Some(best),
        composition: Composition::Integrated,
        text: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(v: &[f64]) -> NoiseDraw {
        NoiseDraw::from_values(v.to_vec())
    }

    #[test]
    fn two_ad_second_price() {
        let r = single_auction(&[1.0, 1.0], &[1.0, 1.0], &noise(&[0.5, 0.0])).unwrap();
        assert_eq!(r.winners, vec![0]);
        assert!((r.prices[0] - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn price_matches_literal_formula() {
        let q = [0.36, 0.87, 0.31, 0.26];
        let b = [3.0, 3.0, 2.0, 2.0];
        let e = [0.3, -0.2, 1.4, 0.1];
        let r = single_auction(&b, &q, &noise(&e)).unwrap();
        let s: Vec<f64> = (0..4).map(|i| q[i] * b[i] * e[i].exp()).collect();
        let w = r.winners[0];
        let l = (0..4).filter(|&i| i != w).max_by(|&a, &c| s[a].partial_cmp(&s[c]).unwrap()).unwrap();
        assert_eq!(w, 2);
        let z = s[l] / (q[w] * e[w].exp());
        assert!((r.prices[0] - z).abs() < 1e-12);
    }

    #[test]
    fn lone_bidder_pays_nothing() {
        let r = single_auction(&[1.0, 2.0], &[0.0, 0.5], &noise(&[3.0, 0.0])).unwrap();
        assert_eq!(r.winners, vec![1]);
        assert_eq!(r.prices, vec![0.0]);
    }

    #[test]
    fn no_eligible_ads() {
        let err = single_auction(&[1.0, 0.0], &[0.0, 1.0], &noise(&[0.0, 0.0])).unwrap_err();
        assert_eq!(err, AuctionError::NoEligibleAds);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let r = single_auction(&[1.0, 1.0, 1.0], &[0.5, 0.5, 0.5], &NoiseDraw::zeros(3)).unwrap();
        assert_eq!(r.winners, vec![0]);
        assert_eq!(r.prices, vec![1.0]);
    }

    #[test]
    fn noise_length_is_checked() {
        let err = single_auction(&[1.0, 1.0], &[1.0, 1.0], &NoiseDraw::zeros(3)).unwrap_err();
        assert_eq!(err, AuctionError::NoiseLength { got: 3, expected: 2 });
    }

    #[test]
    fn multi_three_equal_ads() {
        let r = multi_allocation_auction(&[1.0; 3], &[1.0; 3], 2, &noise(&[1.0, 0.5, 0.0])).unwrap();
        assert_eq!(r.winners, vec![0, 1]);
        assert!((r.prices[0] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((r.prices[1] - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn multi_with_k_one_is_single() {
        let q = [0.36, 0.87, 0.31, 0.26];
        let b = [3.0, 3.0, 2.0, 2.0];
        let n = noise(&[0.1, -0.7, 0.9, 2.0]);
        let single = single_auction(&b, &q, &n).unwrap();
        let multi = multi_allocation_auction(&b, &q, 1, &n).unwrap();
        assert_eq!(single, multi);
    }

    #[test]
    fn multi_with_every_ad_is_free() {
        let r = multi_allocation_auction(&[1.0, 2.0], &[0.5, 0.5], 2, &noise(&[0.0, 0.0])).unwrap();
        assert_eq!(r.winners, vec![1, 0]);
        assert_eq!(r.prices, vec![0.0, 0.0]);
        let err = multi_allocation_auction(&[1.0, 2.0], &[0.5, 0.5], 3, &noise(&[0.0, 0.0])).unwrap_err();
        assert!(matches!(err, AuctionError::NotEnoughCompetitors { .. }));
    }

    #[test]
    fn naive_two_ignores_relevance() {
        let r = naive_two_auction(&[2.0, 1.0], &[0.01, 0.99], &NoiseDraw::zeros(2)).unwrap();
        assert_eq!(r.winners, vec![0]);
        assert_eq!(r.prices, vec![1.0]);
        assert_eq!(r.winner_relevance, vec![0.01]);
    }

    #[test]
    fn naive_one_only_changes_composition() {
        let q = [0.36, 0.87, 0.31, 0.26];
        let b = [3.0, 3.0, 2.0, 2.0];
        let n = noise(&[0.1, -0.7, 0.9, 2.0]);
        let mut one = naive_one_auction(&b, &q, &n).unwrap();
        assert_eq!(one.composition, Composition::Append);
        one.composition = Composition::Integrated;
        assert_eq!(one, single_auction(&b, &q, &n).unwrap());
    }

    #[test]
    fn without_replacement_skips_used_ads() {
        let r = single_auction_among(&[1.0; 3], &[1.0; 3], &[false, true, true], &noise(&[5.0, 1.0, 0.0])).unwrap();
        assert_eq!(r.winners, vec![1]);
        assert!((r.prices[0] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn combinatorial_uniform_sets() {
        let sets = crate::analytic::combinations(3, 2);
        let scores = SetScores::new(2, sets, vec![vec![0.5, 0.5]; 3]).unwrap();
        let r = combinatorial_auction(&[1.0; 3], &scores, NegativePaymentPolicy::Clamp, &NoiseDraw::zeros(3)).unwrap();
        assert_eq!(r.winning_set, Some(0));
        assert_eq!(r.winners, vec![0, 1]);
        for p in r.prices {
            assert!((p - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn combinatorial_negative_payment() {
        let sets = crate::analytic::combinations(3, 2);
        let q = vec![vec![0.9, 0.9], vec![0.1, 0.1], vec![0.1, 0.1]];
        let scores = SetScores::new(2, sets, q).unwrap();
        let allow =
            combinatorial_auction(&[1.0; 3], &scores, NegativePaymentPolicy::Allow, &NoiseDraw::zeros(3)).unwrap();
        assert_eq!(allow.winners, vec![0, 1]);
        assert!((allow.prices[0] - (0.2 - 0.9) / 0.9).abs() < 1e-12);
        assert!((allow.prices[0] + 0.777_777_777_8).abs() < 1e-9);
        let clamp =
            combinatorial_auction(&[1.0; 3], &scores, NegativePaymentPolicy::Clamp, &NoiseDraw::zeros(3)).unwrap();
        assert_eq!(clamp.prices, vec![0.0, 0.0]);
    }

    #[test]
    fn combinatorial_with_singletons_is_single() {
        let q = [0.36, 0.87, 0.31, 0.26];
        let b = [3.0, 3.0, 2.0, 2.0];
        let n = noise(&[0.1, -0.7, 0.9, 2.0]);
        let scores = SetScores::additive(&q, 1);
        let comb = combinatorial_auction(&b, &scores, NegativePaymentPolicy::Allow, &n).unwrap();
        let single = single_auction(&b, &q, &n).unwrap();
        assert_eq!(comb.winners, single.winners);
        assert!((comb.prices[0] - single.prices[0]).abs() < 1e-12);
    }

    #[test]
    fn combinatorial_single_candidate_is_free() {
        let scores = SetScores::additive(&[0.3, 0.4], 2);
        let r =
            combinatorial_auction(&[1.0, 1.0], &scores, NegativePaymentPolicy::Allow, &NoiseDraw::zeros(1)).unwrap();
        assert_eq!(r.prices, vec![0.0, 0.0]);
    }

    #[test]
    fn set_level_noise_admits_profitable_deviation() {
        // Ad 0 sits in sets A = {0,1} (eps ln 2) and B = {0,2} (eps 0); set
        // C = {1,2} caps the price. Truthful v_0 = 1 selects A, but shading
        // the bid hands the segment to B with a lower price per click.
        let sets = vec![vec![0, 1], vec![0, 2], vec![1, 2]];
        let q = vec![vec![0.5, 0.5], vec![0.5, 0.5], vec![0.5, 0.5]];
        let scores = SetScores::new(2, sets, q).unwrap();
        let eps = noise(&[2f64.ln(), 0.0, 0.0]);
        // s_A = b0 + 0.2, s_B = 0.5 b0 + 0.6, s_C = 0.7: ad 0 pays 0.5 in A
        // but only 0.2 in B.
        let bids = |b0: f64| [b0, 0.2, 1.2];
        let utility = |b0: f64| {
            let r = combinatorial_auction(&bids(b0), &scores, NegativePaymentPolicy::Clamp, &eps).unwrap();
            r.price_of(0).map_or(0.0, |p| 0.5 * (1.0 - p))
        };
        let truthful = combinatorial_auction(&bids(1.0), &scores, NegativePaymentPolicy::Clamp, &eps).unwrap();
        assert_eq!(truthful.winning_set, Some(0));
        let shaded = combinatorial_auction(&bids(0.5), &scores, NegativePaymentPolicy::Clamp, &eps).unwrap();
        assert_eq!(shaded.winning_set, Some(1));
        assert!(utility(0.5) > utility(1.0) + 0.1, "{} vs {}", utility(0.5), utility(1.0));
    }
}
