mod common;

use common::*;
use guideflow::data::Dataset;
use guideflow::exec;
use guideflow::flow::{FlowPair, NnIndex};
use guideflow::guidance::{combine_cfg, combine_cg};
use guideflow::nn::{Checkpoint, Net};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn mlp_reverse_mode_matches_finite_differences(seed in any::<u64>()) {
        let e = mlp_gradient_error(seed);
        prop_assert!(e < 1e-5, "relative error {e}");
    }

    #[test]
    fn classifier_input_gradient_matches_finite_differences(seed in any::<u64>()) {
        let e = classifier_gradient_error(seed);
        prop_assert!(e < 1e-5, "relative error {e}");
    }

    #[test]
    fn softmax_simplex_and_zero_expected_score(seed in any::<u64>()) {
        let e = simplex_and_score_error(seed);
        prop_assert!(e < 1e-10, "deviation {e}");
    }

    #[test]
    fn cfg_endpoints_are_exact(u in prop::collection::vec(-1e3..1e3f64, 1..4), c in prop::collection::vec(-1e3..1e3f64, 4)) {
        let c = &c[..u.len()];
        let mut out = vec![0.0; u.len()];
        combine_cfg(&u, c, 1.0, &mut out);
        prop_assert_eq!(&out[..], c);
        combine_cfg(&u, c, 0.0, &mut out);
        prop_assert_eq!(&out, &u);
        combine_cg(&u, 0.3, c, 0.0, &mut out);
        prop_assert_eq!(&out, &u);
    }

    #[test]
    fn interpolation_endpoints(src in prop::collection::vec(-1e6..1e6f64, 2), tgt in prop::collection::vec(-1e6..1e6f64, 2)) {
        let p = FlowPair { source: src.clone(), target: tgt.clone(), label: 0 };
        let mut z = vec![0.0; 2];
        p.interpolate(0.0, &mut z);
        prop_assert_eq!(&z, &src);
        p.interpolate(1.0, &mut z);
        prop_assert_eq!(&z, &tgt);
    }

    #[test]
    fn dataset_csv_round_trip(xs in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 0..40)) {
        let n = xs.len() / 2;
        let labels = (0..n).map(|i| i % 3).collect();
        let ds = Dataset::from_parts(2, xs[..2 * n].to_vec(), labels).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        prop_assert_eq!(Dataset::read_csv(&buf[..]).unwrap(), ds);
    }

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>()) {
        let net = Net::new(random_spec(seed), seed).unwrap();
        let ck = Checkpoint::new("test", net).with_meta("seed", seed);
        let bytes = ck.to_bytes();
        let back = Checkpoint::read_from(&bytes[..]).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back.net, ck.net);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn knn_equals_full_sort(
        dim in 1usize..=3,
        raw in prop::collection::vec(-4i32..4, 1..30_000),
        q in prop::collection::vec(-5.0..5.0f64, 3),
        k in 1usize..30,
    ) {
        // Coarse integer grids force many exact distance ties.
        let n = raw.len() / dim;
        prop_assume!(n >= 1);
        let points: Vec<f64> = raw[..n * dim].iter().map(|&v| v as f64 * 0.5).collect();
        let k = k.min(n);
        let idx = NnIndex::new(dim, points.clone()).unwrap();
        let got: Vec<(usize, f64)> = idx.knn(&q[..dim], k).unwrap().iter().map(|nb| (nb.index, nb.dist2)).collect();
        prop_assert_eq!(got, brute_knn(dim, &points, &q[..dim], k));
    }
}

#[test]
fn random_knn_instances_match_brute_force() {
    for seed in 0..100 {
        assert!(knn_matches_brute_force(seed), "instance {seed}");
    }
}

#[test]
fn rk4_is_fourth_order() {
    let slope = rk4_order(&[10, 20, 40]);
    assert!((slope - 4.0).abs() < 0.3, "slope {slope}");
}

#[test]
fn forward_chain_matches_marginal() {
    let (zm, zv) = forward_marginal_z_scores(11, 100_000);
    assert!(zm < 3.0 && zv < 3.0, "z-scores {zm} {zv}");
}

#[test]
fn parallel_reduction_is_bit_identical_to_sequential() {
    let f = |_: &mut (), i: usize, g: &mut [f64]| {
        let x = (i as f64 * 0.37).sin();
        for (j, gj) in g.iter_mut().enumerate() {
            *gj += x * (j as f64 + 1.0).sqrt() / 3.0;
        }
        x * x / 7.0
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| (exec::reduce_grad(1001, 17, || (), f), exec::map_range(500, |i| (i as f64).ln_1p())))
    };
    let one = run(1);
    for threads in [2, 3, 8] {
        assert_eq!(run(threads), one);
    }
}
