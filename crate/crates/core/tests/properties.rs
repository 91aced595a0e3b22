use proptest::prelude::*;

use segment_auction::analytic::{
    combinations, log_lsw, lsw_maximizer, myerson_expected_payment, myerson_payment_quadrature, set_win_probability,
    softmax_allocation,
};
use segment_auction::mechanisms::{run_session, SessionEnv};
use segment_auction::providers::{static_relevance, StubGenerator};
use segment_auction::sampling::NoiseDraw;
use segment_auction::sim::ProbeInstance;
use segment_auction::types::{Mechanism, Scenario};

fn roster(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2..=max).prop_flat_map(|n| (prop::collection::vec(0.01f64..1.0, n), prop::collection::vec(0.01f64..5.0, n)))
}

fn gumbel_noise(len: usize) -> impl Strategy<Value = NoiseDraw> {
    prop::collection::vec(-3.0f64..8.0, len).prop_map(NoiseDraw::from_values)
}

fn deviation_gain(mechanism: Mechanism, k: usize, q: &[f64], v: &[f64], noise: &NoiseDraw, ad: usize, bid: f64) -> f64 {
    let inst = ProbeInstance::new(mechanism, v.to_vec(), q.to_vec()).with_k(k);
    let truthful = inst.run(v, noise).unwrap();
    let mut bids = v.to_vec();
    bids[ad] = bid;
    let deviated = inst.run(&bids, noise).unwrap();
    inst.utility(ad, &deviated) - inst.utility(ad, &truthful)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn no_profitable_deviation_for_any_noise(
        (q, v, noise, ad, bid) in roster(6).prop_flat_map(|(q, v)| {
            let n = q.len();
            (Just(q), Just(v), gumbel_noise(n), 0..n, 0.0f64..10.0)
        })
    ) {
        for mechanism in [Mechanism::WithReplacement, Mechanism::Naive2] {
            let gain = deviation_gain(mechanism, 1, &q, &v, &noise, ad, bid);
            prop_assert!(gain <= 1e-9 * v[ad].max(1.0), "{mechanism}: gain {gain}");
        }
        if q.len() > 2 {
            let gain = deviation_gain(Mechanism::Multi, 2, &q, &v, &noise, ad, bid);
            prop_assert!(gain <= 1e-9 * v[ad].max(1.0), "multi: gain {gain}");
        }
    }

    #[test]
    fn winners_pay_between_zero_and_bid(
        (q, b, noise) in roster(6).prop_flat_map(|(q, b)| { let n = q.len(); (Just(q), Just(b), gumbel_noise(n)) })
    ) {
        let k = if q.len() > 2 { 2 } else { 1 };
        for (mechanism, k) in [(Mechanism::WithReplacement, 1), (Mechanism::Naive2, 1), (Mechanism::Multi, k)] {
            let inst = ProbeInstance::new(mechanism, b.clone(), q.clone()).with_k(k);
            let record = inst.run(&b, &noise).unwrap();
            for (&w, &p) in record.winners.iter().zip(&record.prices) {
                prop_assert!(p >= 0.0 && p <= b[w] * (1.0 + 1e-12), "{mechanism}: price {p} for bid {}", b[w]);
            }
        }
    }

    #[test]
    fn set_probabilities_form_a_distribution((q, b) in roster(6), k in 1usize..=3) {
        let k = k.min(q.len());
        let total: f64 = combinations(q.len(), k).iter().map(|s| set_win_probability(&q, &b, s).unwrap()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "sum {total}");
        let x = softmax_allocation(&q, &b).unwrap();
        for i in 0..q.len() {
            prop_assert!((set_win_probability(&q, &b, &[i]).unwrap() - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_payment_matches_quadrature((q, b) in roster(5), i in 0usize..5) {
        let i = i % q.len();
        let closed = myerson_expected_payment(&q, &b, i);
        let curve = |z: f64| {
            let mut bids = b.clone();
            bids[i] = z;
            softmax_allocation(&q, &bids).map(|x| x[i]).unwrap_or(0.0)
        };
        let quadrature = myerson_payment_quadrature(curve, b[i]);
        prop_assert!((closed - quadrature).abs() < 1e-7 * b[i].max(1.0), "{closed} vs {quadrature}");
    }

    #[test]
    fn allocation_is_monotone_in_own_bid((q, b) in roster(6), i in 0usize..6, raise in 0.0f64..3.0) {
        let i = i % q.len();
        let before = softmax_allocation(&q, &b).unwrap()[i];
        let mut higher = b.clone();
        higher[i] += raise;
        prop_assert!(softmax_allocation(&q, &higher).unwrap()[i] >= before - 1e-15);
    }

    #[test]
    fn lsw_maximizer_beats_any_allocation((q, v) in roster(8), weights in prop::collection::vec(0.001f64..1.0, 8)) {
        let n = q.len();
        let total: f64 = weights[..n].iter().sum();
        let x: Vec<f64> = weights[..n].iter().map(|w| w / total).collect();
        let best = lsw_maximizer(&q, &v).unwrap();
        prop_assert!(log_lsw(&best, &q, &v) >= log_lsw(&x, &q, &v) - 1e-12);
    }

    #[test]
    fn sessions_replay_exactly((q, b) in roster(5), seed in any::<u64>(), trial in 0u64..1000) {
        for mechanism in [Mechanism::WithReplacement, Mechanism::WithoutReplacement, Mechanism::Naive2] {
            let mut s = Scenario::from_vectors(&b, &q, mechanism).with_segments(3.min(q.len()), 1);
            s.seed = seed;
            let relevance = static_relevance(&s).unwrap();
            let env = SessionEnv::new(&relevance, &StubGenerator);
            let first = run_session(&s, &env, trial).unwrap();
            prop_assert_eq!(&first, &run_session(&s, &env, trial).unwrap());
        }
    }

    #[test]
    fn scenario_json_round_trips((q, b) in roster(6), seed in any::<u64>()) {
        let mut s = Scenario::from_vectors(&b, &q, Mechanism::WithoutReplacement);
        s.seed = seed;
        prop_assert_eq!(Scenario::from_json(&s.to_json()).unwrap(), s);
    }
}
