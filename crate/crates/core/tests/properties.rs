mod common;

use gtgib_core::graph::{EvalMode, Split, SplitSpec};
use gtgib_core::numerics::Rng;
use gtgib_core::synth::{generate_synthetic, SyntheticSpec};
use gtgib_core::train::{average_precision, negative_sample};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eval_modes_partition_each_range(seed in 0u64..1000, nodes in 4u64..30, frac in 0.0f64..0.4) {
        let g = common::random_graph(nodes, 150, 0, seed);
        let spec = SplitSpec { inductive_fraction: frac, seed, ..Default::default() };
        let s = Split::new(&g, &spec).unwrap();
        for r in [s.val.clone(), s.test.clone()] {
            let t = s.eval_edges(&g, r.clone(), EvalMode::Transductive).len();
            let i = s.eval_edges(&g, r.clone(), EvalMode::Inductive).len();
            prop_assert_eq!(t + i, r.len());
        }
        prop_assert!(s.train_events.iter().all(|&e| e < s.val.start));
        for &v in &s.masked {
            prop_assert!(!s.is_seen(v));
        }
    }

    #[test]
    fn ap_is_invariant_to_monotone_maps(scores in prop::collection::vec(-5.0f64..5.0, 1..40), seed in 0u64..100) {
        let mut r = Rng::new(seed, 0);
        let mut labels: Vec<bool> = scores.iter().map(|_| r.uniform() < 0.5).collect();
        labels[0] = true;
        let a = average_precision(&scores, &labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        let b = average_precision(&mapped, &labels).unwrap();
        // the logistic map can merge nearby scores only below f64 resolution
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a > 0.0 && a <= 1.0);
    }
}

#[test]
fn negatives_are_uniform_over_eligible_nodes() {
    let mut r = Rng::new(0, 0);
    let candidates: Vec<usize> = (0..10).collect();
    let draws = negative_sample(&[(0, 1)], &candidates, &mut r, 10_000).remove(0);
    // node 0 is the anchor and (0, 1) is a positive: eight eligible nodes remain
    let p: f64 = 1.0 / 8.0;
    let sigma = (10_000.0 * p * (1.0 - p)).sqrt();
    for j in 2..10 {
        let c = draws.iter().filter(|&&d| d == j).count() as f64;
        assert!((c - 10_000.0 * p).abs() <= 3.0 * sigma, "node {j}: {c}");
    }
    assert!(draws.iter().all(|&d| d >= 2));
}

#[test]
fn synthetic_inter_arrival_matches_rate() {
    let spec = SyntheticSpec { n_users: 20, unseen: 0.0, rate: 2.0, horizon: 260.0, ..Default::default() };
    let (g, _) = generate_synthetic(&spec).unwrap();
    let mut gaps = Vec::new();
    for u in 0..spec.n_users {
        let ts: Vec<f64> = g.events().iter().filter(|e| e.src == u).map(|e| e.t).collect();
        gaps.extend(ts.windows(2).map(|w| w[1] - w[0]));
    }
    assert!(gaps.len() >= 10_000, "{}", gaps.len());
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!((mean * spec.rate - 1.0).abs() < 0.05, "mean gap {mean}");
}
