use proptest::prelude::*;
use smlab::scaling::*;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1e-300)
}

/// Exact zero-truncated binomial moments: `(P, E[N]/(B P), E[N²]/(B² P))`.
fn binomial_oracle(p: f64, b: u64) -> (f64, f64, f64) {
    let n = b as usize;
    let mut pmf = vec![0.0; n + 1];
    // Recurrence on the pmf avoids large binomial coefficients.
    pmf[0] = (1.0 - p).powi(b as i32);
    for k in 1..=n {
        pmf[k] = pmf[k - 1] * (n - k + 1) as f64 / k as f64 * p / (1.0 - p);
    }
    let big_p: f64 = pmf[1..].iter().sum();
    let m1: f64 = (1..=n).map(|k| k as f64 * pmf[k]).sum();
    let m2: f64 = (1..=n).map(|k| (k * k) as f64 * pmf[k]).sum();
    let bf = b as f64;
    (big_p, m1 / (bf * big_p), m2 / (bf * bf * big_p))
}

/// Geometric-K series for `(E β^K, E S_K, E S_K²)` with `S_K = β(1−β^K)/(1−β)`.
fn geometric_oracle(beta: f64, pb: f64) -> (f64, f64, f64) {
    let (mut a, mut s1, mut s2) = (0.0, 0.0, 0.0);
    let mut w = pb;
    for k in 1..20_000 {
        let bk = beta.powi(k);
        let s = beta * (1.0 - bk) / (1.0 - beta);
        a += w * bk;
        s1 += w * s;
        s2 += w * s * s;
        w *= 1.0 - pb;
        if w < 1e-300 {
            break;
        }
    }
    (a, s1, s2)
}

#[test]
fn all_zero_exponents_give_unit_instance() {
    let e = ScalingExponents::new(0.0, 0.0, 0.0).with_alpha_eta(0.0);
    let inst = instantiate(&e, &ScalingConstants::default(), 100).unwrap();
    let p = inst.params;
    assert_eq!((p.p, p.b, p.beta, p.eta), (1.0, 1, 0.0, 1.0));
}

#[test]
fn dense_above_instance_matches_direct_powers() {
    let c = ScalingConstants {
        eta_star: 0.2,
        ..Default::default()
    };
    let p = instantiate(&ScalingExponents::new(0.85, 1.2, 1.15), &c, 1000).unwrap().params;
    assert_eq!(p.b, 3982);
    assert!(close(p.p, 2.818382931264e-3, 1e-10), "{}", p.p);
    assert!(close(p.eps, 3.548133892336e-4, 1e-10), "{}", p.eps);
    assert!(close(p.eta, 2.517850823588e-2, 1e-10), "{}", p.eta);
}

#[test]
fn decay_above_one_at_zero_gamma_is_rejected() {
    let c = ScalingConstants {
        eps_star: 2.0,
        ..Default::default()
    };
    assert!(instantiate(&ScalingExponents::new(0.5, 1.0, 0.0), &c, 100).is_err());
}

#[test]
fn clamping_is_reported() {
    let c = ScalingConstants {
        p_star: 3.0,
        ..Default::default()
    };
    let inst = instantiate(&ScalingExponents::new(0.0, 1.0, 0.5), &c, 100).unwrap();
    assert_eq!(inst.params.p, 1.0);
    assert!(matches!(inst.warnings[0], ScalingWarning::GateClamped { .. }));
}

#[test]
fn small_dimension_is_rejected() {
    assert!(instantiate(&ScalingExponents::new(0.5, 1.0, 0.5), &ScalingConstants::default(), 1).is_err());
}

#[test]
fn batch_factor_examples() {
    let f = batch_factors(1.0, 4, 10).unwrap();
    assert_eq!((f.p_batch, f.b1, f.b_diag, f.b_cross), (1.0, 1.0, 0.25, 0.75));
    let f = batch_factors(0.3, 1, 10).unwrap();
    assert!(close(f.b1, 1.0, 1e-14) && close(f.b_diag, 1.0, 1e-14) && f.b_cross == 0.0);
    let f = batch_factors(0.1, 10, 100).unwrap();
    // Exact enumeration values; the published Monte Carlo estimates
    // (0.153533, 1.579857) agree to within their sampling error.
    assert!(close(f.p_batch, 0.6513215599, 1e-10));
    assert!(close(f.b1, 0.153533993279, 1e-10));
    assert!(close(f.b2, 1.579864790838, 1e-10));
    assert!((f.b1 - 0.153533).abs() < 2e-6 && (f.b2 - 1.579857).abs() < 2e-5);
    assert!(batch_factors(0.0, 4, 10).is_err());
    assert!(batch_factors(1.5, 4, 10).is_err());
}

#[test]
fn batch_factors_match_binomial_enumeration() {
    for (p, b, d) in [(0.1, 10, 100), (0.01, 200, 50), (0.5, 3, 7), (0.9, 40, 1000)] {
        let f = batch_factors(p, b, d).unwrap();
        let (big_p, b1, m2) = binomial_oracle(p, b);
        let b2 = (d as f64 + 1.0) * b1 / b as f64 + m2;
        assert!(close(f.p_batch, big_p, 1e-12));
        assert!(close(f.b1, b1, 1e-12));
        assert!(close(f.b2, b2, 1e-12), "{} vs {}", f.b2, b2);
    }
}

#[test]
fn retention_examples() {
    let r = retention_drift(0.0, 0.4).unwrap();
    assert_eq!(r.beta_bar1, 0.0);
    assert_eq!(r.beta_bar2, 0.0);
    assert_eq!(r.delta_theta, 0.0);
    assert_eq!(r.delta_theta2, 0.0);
    let r = retention_drift(0.9, 1.0).unwrap();
    assert!(close(r.beta_bar1, 0.9, 1e-15) && close(r.delta_theta, 0.9, 1e-15) && r.delta_g == 0.0);
    let r = retention_drift(0.9, 0.5).unwrap();
    assert!((r.delta_theta - 1.636364).abs() < 5e-7);
    assert!((r.beta_bar1 - 0.818182).abs() < 5e-7);
    assert!((r.delta_theta2 - 3.588999236058).abs() < 1e-10);
    assert!(retention_drift(1.0, 0.5).is_err());
}

#[test]
fn retention_matches_geometric_series() {
    for (beta, pb) in [(0.9, 0.5), (0.5, 0.1), (0.99, 0.02), (0.2, 0.9)] {
        let r = retention_drift(beta, pb).unwrap();
        let (ebk, s1, s2) = geometric_oracle(beta, pb);
        assert!(close(r.beta_bar1, ebk, 1e-10));
        assert!(close(r.delta_theta, s1, 1e-10));
        assert!(close(r.delta_theta2, s2, 1e-10), "{} vs {s2}", r.delta_theta2);
    }
}

#[test]
fn region_examples() {
    let e = |k, g| classify_region(&ScalingExponents::new(k, 1.2, g));
    assert_eq!(e(0.85, 1.15), Region::C);
    assert_eq!(e(2.2, 0.4), Region::D);
    assert_eq!(e(1.2, 1.0), Region::TriplePoint);
}

#[test]
fn eta_max_exponent_examples() {
    let b = ScalingExponents::new(0.85, 1.2, 0.325);
    assert!(close(eta_max_exponent(Region::B, &b), 0.2, 1e-12));
    let f = ScalingExponents::new(2.2, 1.2, 2.6);
    assert!(close(eta_max_exponent(Region::F, &f), -0.4, 1e-12));
    let on = ScalingExponents::new(0.85, 1.2, 0.65);
    assert!((eta_max_exponent(Region::ResonanceDense, &on) - (on.kappa - on.gamma)).abs() < 1e-12);
}

#[test]
fn dense_batches_are_almost_surely_active() {
    let inst = instantiate(&ScalingExponents::new(0.5, 1.2, 1.0), &ScalingConstants::default(), 10_000).unwrap();
    let q = inst.params.batch_factors().q_batch;
    assert!(q < 1e4f64.powi(-10), "{q:e}");
}

#[test]
fn classifier_is_a_partition_with_published_boundaries() {
    let sigma = 1.2;
    let tags: Vec<Vec<Region>> = (0..100)
        .map(|i| {
            (0..100)
                .map(|j| classify_region(&ScalingExponents::new(3.0 * (i as f64 + 0.5) / 100.0, sigma, 3.0 * (j as f64 + 0.5) / 100.0)))
                .collect()
        })
        .collect();
    for (i, row) in tags.iter().enumerate() {
        for (j, r) in row.iter().enumerate() {
            assert!(r.is_interior(), "grid cell ({i}, {j}) fell on a boundary");
            let k = 3.0 * (i as f64 + 0.5) / 100.0;
            let g = 3.0 * (j as f64 + 0.5) / 100.0;
            let res = 1.0 - sigma + k;
            let expected = if k < sigma - 1.0 {
                Region::A
            } else if k <= sigma {
                if g < res { Region::B } else { Region::C }
            } else if g <= k - sigma {
                Region::D
            } else if g < res {
                Region::E
            } else {
                Region::F
            };
            assert_eq!(*r, expected);
        }
    }
}

proptest! {
    #[test]
    fn activation_probability_bounds(p in 1e-6f64..1.0, b in 1u64..5000, d in 2u64..10_000) {
        let f = batch_factors(p, b, d).unwrap();
        let pb = p * b as f64;
        prop_assert!(f.p_batch >= p * (1.0 - 1e-12));
        prop_assert!(f.p_batch <= pb.min(1.0) + 1e-12 * pb);
        prop_assert!(close(f.b1 * f.p_batch, p, 1e-13));
        prop_assert!(f.b2 > 0.0);
    }

    #[test]
    fn decay_cancellation_is_exact(beta in 0.0f64..0.999_999, pb in 1e-8f64..1.0) {
        let r = retention_drift(beta, pb).unwrap();
        let eps = 1.0 - beta;
        let lhs = r.delta_theta / r.one_minus_beta_bar1;
        prop_assert!(close(lhs, beta / eps, 1e-12) || beta == 0.0);
        prop_assert!(close(r.delta_g, (1.0 - pb) * r.delta_theta, 1e-14) || beta == 0.0);
        prop_assert!((r.delta_theta - r.delta_g - r.beta_bar1).abs() <= 1e-14 * r.delta_theta.max(1.0));
        for v in [r.delta_theta, r.delta_g, r.delta_theta2, r.delta_g2, r.delta_m1_theta, r.delta_m1_g, r.delta_theta_g] {
            prop_assert!(v.is_finite() && v >= 0.0);
        }
    }

    #[test]
    fn instances_are_valid(k in 0.0f64..3.0, s in 0.0f64..2.0, g in 0.0f64..3.0, d in 2u64..100_000) {
        let inst = instantiate(&ScalingExponents::new(k, s, g), &ScalingConstants::default(), d).unwrap();
        prop_assert!(inst.params.validate().is_ok());
        prop_assert!(inst.params.b as f64 >= (d as f64).powf(s) * (1.0 - 1e-9));
    }
}
