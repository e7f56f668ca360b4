//! Randomized invariants over the tensor engine, the peer graph, and the
//! loss layer. Each property states something that must hold for *every*
//! input, not just the hand-picked oracles in the unit tests.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use peerstyle_core::losses::smooth_l1;
use peerstyle_core::tensor::Tensor;
use peerstyle_core::tpfr::{attention_weights, knn_graph, AttentionHead};
use peerstyle_core::train::{lr_schedule, TrainConfig};

fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_rows_are_sorted_valid_and_start_at_the_argmin(
        q in 1usize..7,
        t in 1usize..7,
        d in 1usize..4,
        k_off in 0usize..6,
        qv in values(6 * 3 * 6),
        tv in values(6 * 3 * 6),
    ) {
        let k = 1 + k_off.min(t - 1);
        let query = Tensor::new(qv[..d * q].to_vec(), &[1, d, q, 1]).unwrap();
        let target = Tensor::new(tv[..d * t].to_vec(), &[1, d, t, 1]).unwrap();
        let graph = knn_graph(&query, &target, k).unwrap();
        let (qd, td) = (query.values(), target.values());
        for p in 0..q {
            let neighbors = graph.neighbors_of(0, p);
            let dist = graph.distances_of(0, p);
            prop_assert_eq!(neighbors.len(), k);
            for j in 0..k {
                prop_assert!((neighbors[j] as usize) < t);
                if j > 0 {
                    prop_assert!(dist[j] >= dist[j - 1]);
                }
                // Stored distance matches a direct recomputation.
                let mut sq = 0.0;
                for c in 0..d {
                    let diff = qd[c * q + p] - td[c * t + neighbors[j] as usize];
                    sq += diff * diff;
                }
                prop_assert!((dist[j] - sq.sqrt()).abs() < 1e-12);
            }
            // No unlisted target site beats the worst listed neighbor.
            for cand in 0..t {
                if neighbors.contains(&(cand as u32)) {
                    continue;
                }
                let mut sq = 0.0;
                for c in 0..d {
                    let diff = qd[c * q + p] - td[c * t + cand];
                    sq += diff * diff;
                }
                prop_assert!(sq.sqrt() >= dist[k - 1] - 1e-12);
            }
        }
    }

    #[test]
    fn attention_weights_are_a_distribution(
        p in 1usize..6,
        k in 1usize..5,
        d in 1usize..4,
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let head = AttentionHead::init(d, &mut rng).unwrap();
        let query = Tensor::randn(&[1, d, p, 1], 0.0, 1.0, &mut rng).unwrap();
        let neighbors = Tensor::randn(&[1, d, p, k], 0.0, 1.0, &mut rng).unwrap();
        let w = attention_weights(&head, &query, &neighbors, 0.0, false, &mut rng).unwrap();
        prop_assert_eq!(w.shape(), vec![1, 1, p, k]);
        let wv = w.values();
        for site in 0..p {
            let row = &wv[site * k..(site + 1) * k];
            prop_assert!(row.iter().all(|&x| x >= 0.0));
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn smooth_l1_is_a_symmetric_premetric(av in values(24), bv in values(24)) {
        let a = Tensor::new(av, &[2, 3, 2, 2]).unwrap();
        let b = Tensor::new(bv, &[2, 3, 2, 2]).unwrap();
        let ab = smooth_l1(&a, &b).unwrap().item().unwrap();
        let ba = smooth_l1(&b, &a).unwrap().item().unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= 0.0);
        let aa = smooth_l1(&a, &a).unwrap().item().unwrap();
        prop_assert_eq!(aa, 0.0);
    }

    #[test]
    fn learning_rate_never_increases(
        lr in 1e-6f64..1.0,
        epochs in 1usize..400,
        decay_frac in 0.0f64..1.0,
    ) {
        let mut cfg = TrainConfig::default();
        cfg.learning_rate = lr;
        cfg.epochs = epochs;
        cfg.decay_start_epoch = ((epochs as f64) * decay_frac) as usize;
        let mut prev = f64::INFINITY;
        for epoch in 0..=epochs + 3 {
            let v = lr_schedule(epoch, &cfg);
            prop_assert!(v <= prev);
            prop_assert!(v >= 0.0);
            prev = v;
        }
        prop_assert_eq!(lr_schedule(0, &cfg), lr);
        prop_assert_eq!(lr_schedule(epochs, &cfg), 0.0);
    }

    #[test]
    fn elementwise_arithmetic_commutes_and_round_trips(
        av in values(12),
        bv in values(12),
    ) {
        let a = Tensor::new(av.clone(), &[3, 4]).unwrap();
        let b = Tensor::new(bv, &[3, 4]).unwrap();
        let ab = a.add(&b).unwrap().values();
        let ba = b.add(&a).unwrap().values();
        prop_assert_eq!(ab, ba);
        let ab = a.mul(&b).unwrap().values();
        let ba = b.mul(&a).unwrap().values();
        prop_assert_eq!(ab, ba);
        // Reshape is a pure relabeling of the same buffer.
        let r = a.reshape(&[2, 6]).unwrap().reshape(&[12]).unwrap().reshape(&[3, 4]).unwrap();
        prop_assert_eq!(r.values(), av);
    }

    #[test]
    fn reductions_agree_with_direct_summation(xv in values(24)) {
        let x = Tensor::new(xv.clone(), &[2, 3, 4]).unwrap();
        let total: f64 = xv.iter().sum();
        prop_assert!((x.sum_all().unwrap().item().unwrap() - total).abs() < 1e-9);
        prop_assert!((x.mean_all().unwrap().item().unwrap() - total / 24.0).abs() < 1e-9);
        // Summing one axis then the rest equals summing everything.
        let partial = x.sum_axis(1, false).unwrap().sum_all().unwrap().item().unwrap();
        prop_assert!((partial - total).abs() < 1e-9);
    }

    #[test]
    fn broadcasting_matches_explicit_expansion(
        av in values(8),
        bv in values(2),
    ) {
        let a = Tensor::new(av.clone(), &[4, 2]).unwrap();
        let b = Tensor::new(bv.clone(), &[1, 2]).unwrap();
        let sum = a.add(&b).unwrap().values();
        for r in 0..4 {
            for c in 0..2 {
                prop_assert_eq!(sum[r * 2 + c], av[r * 2 + c] + bv[c]);
            }
        }
    }
}
