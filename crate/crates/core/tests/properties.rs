use std::collections::HashSet;

use fedcorr::datagen::{apply_noise_model, generate_blobs, partition_iid, partition_noniid};
use fedcorr::gmm::{fit_gmm2, separate, GmmOptions};
use fedcorr::lid::{knn_distances, lid_mle, lid_score, NeighborDistances};
use fedcorr::model::Architecture;
use fedcorr::protocol::{aggregate, clients_per_round, planned_comm_cost};
use fedcorr::{run_fedcorr, ExperimentConfig, WeightVector};
use proptest::prelude::*;

fn ascending_distances() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..100.0, 2..40).prop_map(|mut v| {
        v.sort_by(f64::total_cmp);
        v
    })
}

fn points(n: std::ops::Range<usize>, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, dim), n)
}

fn mlp_weights(seed: u64) -> WeightVector {
    Architecture::Mlp {
        input_dim: 3,
        hidden: 4,
        n_classes: 3,
    }
    .build()
    .init_weights(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lid_is_scale_invariant(d in ascending_distances(), s in 0.001f64..1000.0) {
        let a = lid_mle(&NeighborDistances::new(d.clone()).unwrap(), 1e9);
        let scaled: Vec<f64> = d.iter().map(|x| x * s).collect();
        let b = lid_mle(&NeighborDistances::new(scaled).unwrap(), 1e9);
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn lid_is_positive(d in ascending_distances()) {
        let v = lid_mle(&NeighborDistances::new(d).unwrap(), 50.0);
        prop_assert!(v > 0.0 && v.is_finite());
    }

    #[test]
    fn knn_matches_brute_force(pts in points(6..30, 3), k in 1usize..5) {
        let r = 0;
        let mut brute: Vec<f64> = pts.iter().enumerate()
            .filter(|&(j, _)| j != r)
            .map(|(_, p)| p.iter().zip(&pts[r]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .filter(|&d| d > 0.0)
            .collect();
        brute.sort_by(f64::total_cmp);
        brute.truncate(k);
        let got = knn_distances(&pts, r, k).unwrap();
        prop_assert_eq!(got.distances().len(), k);
        for (a, b) in got.distances().iter().zip(&brute) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lid_score_ignores_point_order(pts in points(12..30, 4), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = pts.clone();
        shuffled.shuffle(&mut fedcorr::seed::rng_from(seed));
        let a = lid_score(&pts, 5).unwrap().score;
        let b = lid_score(&shuffled, 5).unwrap().score;
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn gmm_is_affine_equivariant(
        lo in prop::collection::vec(0.0f64..1.0, 5..30),
        hi in prop::collection::vec(4.0f64..5.0, 5..30),
        scale in 0.1f64..10.0,
        shift in -50.0f64..50.0,
    ) {
        let values: Vec<f64> = lo.iter().chain(&hi).copied().collect();
        let moved: Vec<f64> = values.iter().map(|v| v * scale + shift).collect();
        let a = separate(&values, GmmOptions::default()).unwrap();
        let b = separate(&moved, GmmOptions::default()).unwrap();
        prop_assert_eq!(a, b);
        let fa = fit_gmm2(&values, GmmOptions::default()).unwrap();
        let fb = fit_gmm2(&moved, GmmOptions::default()).unwrap();
        for c in 0..2 {
            prop_assert!((fa.means[c] * scale + shift - fb.means[c]).abs() < 1e-6 * scale.max(1.0) * 10.0);
        }
    }

    #[test]
    fn gmm_split_ignores_input_order(values in prop::collection::vec(0.0f64..10.0, 4..40)) {
        prop_assume!(!fedcorr::gmm::is_degenerate(&values));
        let split = separate(&values, GmmOptions::default()).unwrap();
        let mut rev = values.clone();
        rev.reverse();
        let split_rev = separate(&rev, GmmOptions::default()).unwrap();
        let n = values.len();
        let mapped: HashSet<usize> = split_rev.high.iter().map(|&i| n - 1 - i).collect();
        prop_assert_eq!(mapped, split.high.iter().copied().collect::<HashSet<_>>());
    }

    #[test]
    fn gmm_split_partitions_with_ordered_means(values in prop::collection::vec(0.0f64..10.0, 4..40)) {
        let split = separate(&values, GmmOptions::default()).unwrap();
        prop_assert_eq!(split.low.len() + split.high.len(), values.len());
        if !split.low.is_empty() && !split.high.is_empty() {
            let mean = |s: &[usize]| s.iter().map(|&i| values[i]).sum::<f64>() / s.len() as f64;
            prop_assert!(mean(&split.high) > mean(&split.low));
        }
    }

    #[test]
    fn aggregate_of_identical_updates_is_identity(seed in any::<u64>(), sizes in prop::collection::vec(1usize..50, 1..6)) {
        let w = mlp_weights(seed);
        let updates: Vec<_> = sizes.iter().enumerate().map(|(k, &n)| (k, w.clone(), n)).collect();
        let out = aggregate(&updates).unwrap();
        for (a, b) in out.params.iter().zip(&w.params) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn aggregate_ignores_update_order(seeds in prop::collection::vec(any::<u64>(), 2..5), sizes in prop::collection::vec(1usize..50, 5)) {
        let updates: Vec<_> = seeds.iter().enumerate().map(|(k, &s)| (k, mlp_weights(s), sizes[k])).collect();
        let mut rev = updates.clone();
        rev.reverse();
        prop_assert_eq!(aggregate(&updates).unwrap(), aggregate(&rev).unwrap());
    }

    #[test]
    fn selection_and_cost_accounting(n in 1usize..200, fraction in 0.001f64..1.0, t in (0usize..10, 0usize..60, 0usize..60), clean in 0usize..200) {
        let clean = clean.min(n).max(1);
        let sel = clients_per_round(fraction, n);
        prop_assert!(sel >= 1 && sel <= n);
        prop_assert_eq!(
            planned_comm_cost(n, fraction, t.0, t.1, t.2, clean),
            n * t.0 + clients_per_round(fraction, clean) * t.1 + sel * t.2
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn partitions_are_disjoint_and_cover(seed in any::<u64>(), n_clients in 2usize..12, noniid in any::<bool>()) {
        let data = generate_blobs(300, 5, 4, 1.0, 5.0, seed).unwrap();
        let part = if noniid {
            partition_noniid(&data, n_clients, 0.5, 1.0, seed).unwrap()
        } else {
            partition_iid(&data, n_clients, seed).unwrap()
        };
        part.validate(data.len()).unwrap();
        let total: usize = part.sizes().iter().sum();
        prop_assert_eq!(total, data.len());
        if !noniid {
            let sizes = part.sizes();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn noise_touches_only_flipped_samples(seed in any::<u64>(), rho in 0.0f64..=1.0, tau in 0.0f64..0.99) {
        let mut data = generate_blobs(200, 4, 3, 1.0, 5.0, seed).unwrap();
        let part = partition_iid(&data, 8, seed).unwrap();
        let noise = apply_noise_model(&mut data, &part, rho, tau, seed).unwrap();
        let flipped: HashSet<usize> = noise.flipped.iter().flatten().copied().collect();
        for i in 0..data.len() {
            if !flipped.contains(&i) {
                prop_assert_eq!(data.given_label(i), data.true_label(i));
            }
        }
        for (k, members) in part.client_indices.iter().enumerate() {
            let mu = noise.noise_levels[k];
            prop_assert!(mu == 0.0 || (tau..=1.0).contains(&mu));
            prop_assert_eq!(noise.flipped[k].len(), ((mu * members.len() as f64).round() as usize).min(members.len()));
            prop_assert!(noise.flipped[k].iter().all(|i| members.contains(i)));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn whole_runs_are_deterministic(seed in any::<u64>()) {
        let cfg = ExperimentConfig {
            seed,
            n_samples: 240,
            n_test: 60,
            n_clients: 4,
            dim: 4,
            hidden: 6,
            rho: 0.5,
            tau: 0.3,
            kappa: 1.0,
            t1: 1,
            t2: 2,
            t3: 2,
            fraction: 0.5,
            local_epochs: 1,
            ..ExperimentConfig::default()
        };
        let a = run_fedcorr(&cfg).unwrap();
        let b = run_fedcorr(&cfg).unwrap();
        prop_assert_eq!(&a.final_weights, &b.final_weights);
        prop_assert_eq!(&a.relabels, &b.relabels);
        prop_assert_eq!(a.comm_cost, planned_comm_cost(4, 0.5, 1, 2, 2, a.clean_set_size.unwrap()));
    }
}
