use proptest::prelude::*;
use ruinlab::limit_laws::*;
use ruinlab::{LimitLawsF32, LimitLawsF64, SeriesConfigF64};

#[test]
fn moments_increase_with_dimension() {
    // Observed, not a theorem: the limit mean exit time grows with N.
    let laws = LimitLawsF64::default();
    let means: Vec<f64> = (1..=5).map(|n| laws.exit_moment_limit(n, 1).unwrap()).collect();
    assert!(means.windows(2).all(|w| w[0] < w[1]), "{means:?}");
}

#[test]
fn higher_dimension_shrinks_the_maximum() {
    let laws = LimitLawsF64::default();
    assert!(laws.max_moment_limit(2, 1).unwrap() <= laws.max_moment_limit(1, 1).unwrap());
}

#[test]
fn one_dim_max_mean_is_sqrt_half_pi() {
    // E sup_{[0,1]} |W| = √(π/2).
    let got = LimitLawsF64::default().max_moment_limit(1, 1).unwrap();
    assert!((got - (std::f64::consts::PI / 2.0).sqrt()).abs() < 1e-9);
}

#[test]
fn kp_three_dim_matches_quadrature() {
    let laws = LimitLawsF64::default();
    let kp = kp_expected_limit::<f64>(3, 60).unwrap();
    assert!((kp.value - laws.exit_moment_limit(3, 1).unwrap()).abs() < 1e-3);
    assert!(!kp.interpretation.is_empty());
}

#[test]
fn geometric_sech_series_needs_four_terms_for_1e5() {
    let exact = laplace_exit(1.0f64);
    let err = |k| (sech_series_geometric_partial(1.0f64, k) - exact).abs();
    // The alternating tail after k terms is bounded by the first omitted term.
    assert!(err(2) > 1e-5 && err(2) < 2.0 * (-5.0 * 2f64.sqrt()).exp());
    assert!(err(4) < 1e-5);
}

#[test]
fn partial_fraction_series_is_slow_but_correct() {
    let got = sech_series_theta_partial(1.0f64, 10_000);
    assert!((got - laplace_exit(1.0)).abs() < 1e-4);
}

#[test]
fn sigma_limit_is_within_a_percent_at_b_200() {
    let z = (-1.0f64 / 40_000.0).exp();
    assert!((gen_fn_sigma(z, 200).unwrap() - laplace_passage(1.0)).abs() < 1e-2);
}

#[test]
fn f32_moments_track_f64() {
    let single = LimitLawsF32::new(
        SeriesConfig {
            abs_tol: 1e-7,
            ..Default::default()
        },
        ruinlab::quadrature::QuadratureConfig {
            rel_tol: 1e-5,
            tail_cutoff_tol: 1e-8,
            ..Default::default()
        },
    )
    .unwrap();
    let double = LimitLawsF64::default();
    for n in 1..=3 {
        let a = single.exit_moment_limit(n, 1).unwrap() as f64;
        let b = double.exit_moment_limit(n, 1).unwrap();
        assert!((a - b).abs() / b < 1e-4, "N = {n}: {a} vs {b}");
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = SeriesConfigF64 {
        abs_tol: 0.0,
        ..Default::default()
    };
    assert!(LimitLawsF64::new(bad, Default::default()).is_err());
    assert!(LimitLawsF64::default().exit_moment_limit(0, 1).is_err());
    assert!(LimitLawsF64::default().max_moment_limit(1, 0).is_err());
    assert!(lambda(1.0f64).is_err());
    assert!(gen_fn_tau(0.5f64, 0).is_err());
}

proptest! {
    #[test]
    fn representations_agree(y in 0.05f64..5.0) {
        let cfg = SeriesConfigF64::default();
        let theta = h_theta(y, &cfg).unwrap();
        prop_assert!((theta - h_reflection(y, &cfg)).abs() < 1e-10);
        prop_assert!((0.0..=1.0).contains(&theta));
    }

    #[test]
    fn cdfs_are_monotone(n in 1u32..6, a in 0.01f64..8.0, b in 0.01f64..8.0) {
        let laws = LimitLawsF64::default();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(laws.exit_cdf(n, lo) <= laws.exit_cdf(n, hi));
        prop_assert!(laws.max_cdf(n, lo) <= laws.max_cdf(n, hi));
        let c = laws.max_cdf(n, hi) + laws.max_cdf_complement(n, hi);
        prop_assert!((c - 1.0).abs() < 1e-13);
    }

    #[test]
    fn max_law_scales_with_horizon(x in 0.1f64..5.0, t in 0.1f64..20.0) {
        let laws = LimitLawsF64::default();
        prop_assert!((laws.max_cdf_horizon(x, t) - laws.max_cdf_horizon(x / t.sqrt(), 1.0)).abs() < 1e-12);
    }

    #[test]
    fn lambda_solves_its_quadratic(z in 0.001f64..0.999) {
        let l = lambda(z).unwrap();
        prop_assert!(l > 0.0 && l < 1.0);
        prop_assert!((l + 1.0 / l - 2.0 / z).abs() <= 1e-12 * (2.0 / z));
        prop_assert!((gen_fn_tau(z, 1).unwrap() - z).abs() < 1e-12);
    }
}
