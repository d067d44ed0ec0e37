use proptest::prelude::*;

use rxlearn::boosting::{fit_boosted, fit_tree, BoostConfig};
use rxlearn::data::{winsorize_outcomes, CausalDataset, FeatureMatrix};
use rxlearn::evaluation::{core_pehe, pehe, stratified_split};
use rxlearn::loss::{
    gamma_loss, gamma_majorizer, gradient_and_weight, mad_scale, welsch_weight, LossSpec, Welsch,
};
use rxlearn::metalearners::ArmVariance;

fn regression_data() -> impl Strategy<Value = (FeatureMatrix, Vec<f64>)> {
    (10usize..60, 1usize..3).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(-1.0f64..1.0, n * d),
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(prop_oneof![9 => Just(0.0), 1 => 20.0f64..500.0], n),
        )
            .prop_map(move |(x, y, whale)| {
                let y = y.iter().zip(&whale).map(|(a, b)| a + b).collect();
                (FeatureMatrix::new(n, d, x).unwrap(), y)
            })
    })
}

fn losses() -> impl Strategy<Value = LossSpec> {
    prop_oneof![
        Just(LossSpec::squared()),
        (0.5f64..3.0).prop_map(LossSpec::huber_with),
        (0.1f64..1.0).prop_map(LossSpec::gamma_welsch),
    ]
}

fn small_boost() -> BoostConfig {
    BoostConfig {
        n_rounds: 30,
        min_samples_leaf: 2,
        ..BoostConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn training_loss_never_increases((x, y) in regression_data(), loss in losses()) {
        let m = fit_boosted(&x, &y, &loss, &small_boost()).unwrap();
        let mut prev = m.initial_loss;
        for &l in &m.loss_trace {
            prop_assert!(l <= prev + 1e-9 * prev.abs(), "{l} after {prev}");
            prev = l;
        }
    }

    #[test]
    fn boosting_is_deterministic((x, y) in regression_data(), loss in losses()) {
        let a = fit_boosted(&x, &y, &loss, &small_boost()).unwrap();
        let b = fit_boosted(&x, &y, &loss, &small_boost()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn tree_leaves_stay_within_target_range(
        (x, y) in regression_data(),
        seed in 0u64..1000,
    ) {
        let w: Vec<f64> = (0..y.len()).map(|i| 0.1 + ((i as u64 * 7 + seed) % 10) as f64).collect();
        let cfg = BoostConfig { max_depth: 4, min_samples_leaf: 1, min_child_weight: 0.0, ..Default::default() };
        let t = fit_tree(&x, &y, &w, &cfg).unwrap();
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-9 * (hi - lo).abs().max(1.0);
        for p in t.predict(&x) {
            prop_assert!(p >= lo - tol && p <= hi + tol);
        }
        prop_assert!(t.is_well_formed() && t.depth() <= 4);
    }
}

proptest! {
    #[test]
    fn majorizer_bounds_loss_and_touches_at_anchor(
        r in -20.0f64..20.0,
        r0 in -20.0f64..20.0,
        gamma in 0.1f64..1.0,
        scale in 0.1f64..5.0,
    ) {
        let w = Welsch { gamma, scale };
        let rho = |v: f64| gamma_loss(&[v], &w);
        prop_assert!(gamma_majorizer(r, r0, &w) >= rho(r) - 1e-12);
        prop_assert!((gamma_majorizer(r0, r0, &w) - rho(r0)).abs() <= 1e-12);
    }

    #[test]
    fn welsch_weight_in_unit_interval_and_decreasing(
        a in 0.0f64..50.0,
        b in 0.0f64..50.0,
        gamma in 0.1f64..1.0,
        scale in 0.1f64..5.0,
    ) {
        let w = Welsch { gamma, scale };
        let (wa, wb) = (welsch_weight(a, &w), welsch_weight(b, &w));
        prop_assert!((0.0..=1.0).contains(&wa));
        if a <= b {
            prop_assert!(wa >= wb);
        }
    }

    #[test]
    fn working_gradient_is_weighted_residual(r in -100.0f64..100.0, loss in losses(), scale in 0.1f64..5.0) {
        let spec = loss.with_scale(scale);
        let g = gradient_and_weight(r, &spec);
        prop_assert!((0.0..=1.0).contains(&g.mm_weight));
        prop_assert!((g.gradient + g.mm_weight * r).abs() <= 1e-12 * r.abs().max(1.0));
        if let Some(delta) = spec.huber_delta() {
            prop_assert!(g.gradient.abs() <= delta + 1e-12);
        }
    }

    #[test]
    fn aggregation_weight_in_unit_interval(v0 in 1e-16f64..1e6, v1 in 1e-16f64..1e6) {
        let g = ArmVariance { control: v0, treated: v1 }.control_weight();
        prop_assert!((0.0..=1.0).contains(&g));
        let swapped = ArmVariance { control: v1, treated: v0 }.control_weight();
        prop_assert!((g + swapped - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mad_scale_is_affine_equivariant(
        xs in prop::collection::vec(-10.0f64..10.0, 5..50),
        a in 0.5f64..4.0,
        b in -5.0f64..5.0,
    ) {
        let s = mad_scale(&xs).unwrap();
        let t = mad_scale(&xs.iter().map(|x| a * x + b).collect::<Vec<_>>()).unwrap();
        if s > 1e-6 {
            prop_assert!((t - a * s).abs() <= 1e-9 * a * s);
        }
    }

    #[test]
    fn pehe_properties(
        tau in prop::collection::vec(-5.0f64..5.0, 1..40),
        c in -3.0f64..3.0,
    ) {
        let shifted: Vec<f64> = tau.iter().map(|t| t + c).collect();
        prop_assert!((pehe(&shifted, &tau).unwrap() - c.abs()).abs() < 1e-9);
        let mask = vec![false; tau.len()];
        prop_assert_eq!(core_pehe(&shifted, &tau, &mask).unwrap(), pehe(&shifted, &tau).unwrap());
    }

    #[test]
    fn winsorized_outcomes_are_clamped_and_order_preserving(
        ys in prop::collection::vec(-100.0f64..100.0, 4..40),
        lo in 0.0f64..0.4,
        hi in 0.6f64..1.0,
    ) {
        let n = ys.len();
        let x = FeatureMatrix::new(n, 1, vec![0.0; n]).unwrap();
        let w: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let d = CausalDataset::new(x, w, ys.clone(), None, None, None).unwrap();
        let out = winsorize_outcomes(&d, lo, hi).unwrap().outcome;
        let (mn, mx) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        for i in 0..n {
            prop_assert!(out[i] >= mn && out[i] <= mx);
            prop_assert!(out[i] == ys[i] || out[i] == out.iter().copied().fold(f64::INFINITY, f64::min)
                || out[i] == out.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            for j in 0..n {
                if ys[i] <= ys[j] {
                    prop_assert!(out[i] <= out[j]);
                }
            }
        }
    }

    #[test]
    fn split_partitions_every_unit(flags in prop::collection::vec(any::<bool>(), 4..200), seed in any::<u64>()) {
        let n = flags.len();
        let x = FeatureMatrix::new(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let d = CausalDataset::new(x, flags, vec![0.0; n], None, None, None).unwrap();
        let (a, b) = stratified_split(&d, seed);
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}
