mod common;

use common::*;
use proptest::prelude::*;
use smlab::ls_limits::select_limit;
use smlab::ls_moment_ode::{build_main_matrix, char_poly};
use smlab::numerics::loglog_slope;
use smlab::scaling::*;
use smlab::stability::*;

fn slope_over_d(e: &ScalingExponents) -> f64 {
    let ds = [100u64, 1000, 10_000];
    let c = ScalingConstants::default();
    let etas: Vec<f64> = ds
        .iter()
        .map(|&d| find_eta_max(e, &c, d).unwrap().eta_max)
        .collect();
    let xs: Vec<f64> = ds.iter().map(|&d| d as f64).collect();
    loglog_slope(&xs, &etas)
}

/// Eigenvalues from a general eigensolver, independent of the cubic formula.
fn max_real_eigenvalue(params: &InstanceParams) -> f64 {
    let m = build_main_matrix(params).unwrap().matrix();
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn instance_strategy() -> impl Strategy<Value = InstanceParams> {
    (
        10u64..2000,
        -3.0f64..0.0,
        1u64..64,
        -3.0f64..0.0,
        -4.0f64..0.5,
    )
        .prop_map(|(d, lp, b, le, lh)| {
            InstanceParams::new(d, 10f64.powf(lp), b, 10f64.powf(le), 10f64.powf(lh)).unwrap()
        })
}

#[test]
fn verdict_examples() {
    let v = routh_hurwitz(1.0, 1.0, 0.5);
    assert!(v.stable);
    assert_eq!(v.binding, None);
    assert!((v.margin - 0.5).abs() < 1e-15);

    let v = routh_hurwitz(1.0, 1.0, 2.0);
    assert!(!v.stable);
    assert!(v.c1_positive && v.c2_positive && v.c3_positive);
    assert!(!v.product_exceeds_c3);
    assert_eq!(v.binding, Some(HurwitzCondition::ProductExceedsC3));
    assert!((v.margin + 1.0).abs() < 1e-15);
}

#[test]
fn triple_point_marginal_at_twice_batch() {
    let c = ScalingConstants {
        eta_star: 2.0,
        b_star: 1.0,
        ..Default::default()
    };
    let sys = select_limit(&ScalingExponents::new(1.2, 1.2, 1.0), &c).unwrap();
    let (_, _, a3) = sys.char_coeffs();
    assert!(a3.abs() < 1e-15);
    let v = sys.hurwitz();
    assert!(!v.stable);
    assert_eq!(v.binding, Some(HurwitzCondition::C3Positive));
}

#[test]
fn plain_sgd_edge() {
    for d in [10u64, 100, 1000] {
        let base = InstanceParams::new(d, 1.0, 1, 1.0, 0.0).unwrap();
        let r = find_eta_max_params(&base).unwrap();
        let exact = 2.0 / (d as f64 + 2.0);
        assert!(close(r.eta_max, exact, 1e-6), "d={d}: {} vs {exact}", r.eta_max);
        assert_eq!(r.binding, HurwitzCondition::C3Positive);
        assert_eq!(r.sign_changes.len(), 1);
    }
}

#[test]
fn dense_below_ceiling_slope() {
    let s = slope_over_d(&ScalingExponents::new(0.85, 1.2, 0.325));
    assert!((s - 0.2).abs() < 0.05, "slope {s}");
}

#[test]
fn sparse_above_ceiling_slope() {
    let s = slope_over_d(&ScalingExponents::new(2.2, 1.2, 2.6));
    assert!((s + 0.4).abs() < 0.05, "slope {s}, expected κ−γ = −0.4");
}

#[test]
fn binding_constraint_region_map() {
    let sigma = 1.2;
    let c = ScalingConstants::default();
    let n = 40;
    let mut total = 0;
    let mut disagree = 0;
    for i in 0..n {
        for j in 0..n {
            let kappa = 3.0 * (i as f64 + 0.5) / n as f64;
            let gamma = 3.0 * (j as f64 + 0.5) / n as f64;
            let e = ScalingExponents::new(kappa, sigma, gamma);
            let region = classify_region(&e);
            let expected = match region {
                Region::B | Region::D | Region::E => HurwitzCondition::C3Positive,
                Region::A | Region::C | Region::F => HurwitzCondition::ProductExceedsC3,
                _ => continue,
            };
            let Ok(r) = find_eta_max(&e, &c, 1000) else {
                continue;
            };
            total += 1;
            if r.binding != expected {
                disagree += 1;
            }
        }
    }
    let frac = disagree as f64 / total as f64;
    assert!(frac <= 0.03, "{disagree}/{total} cells disagree");
}

#[test]
fn timescale_ratio_bounded_at_ceiling() {
    let sigma = 1.2;
    let c = ScalingConstants::default();
    let n = 20;
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let e = ScalingExponents::new(
                3.0 * (i as f64 + 0.5) / n as f64,
                sigma,
                3.0 * (j as f64 + 0.5) / n as f64,
            );
            if !classify_region(&e).is_interior() {
                continue;
            }
            let inst = instantiate(&e, &c, 1000).unwrap();
            let r = find_eta_max_params(&inst.params).unwrap();
            let m = build_main_matrix(&inst.params.with_eta(r.eta_max)).unwrap();
            worst = worst.max(spectrum_report(&m).delta);
        }
    }
    assert!(worst <= 1.5, "max Δ at η_max is {worst}");
}

#[test]
fn slow_eigenvalue_below_resonance() {
    let e = ScalingExponents::new(0.85, 1.2, 0.325);
    let c = ScalingConstants::default();
    for d in [1000u64, 10_000] {
        let inst = instantiate(&e, &c, d).unwrap();
        let eta_max = find_eta_max_params(&inst.params).unwrap().eta_max;
        let m = build_main_matrix(&inst.params.with_eta(0.5 * eta_max)).unwrap();
        let (_, c2, c3) = char_poly(&m);
        let rep = spectrum_report(&m);
        if d >= 10_000 {
            assert_eq!(rep.spectral_type, SpectralType::OneSlowTwoFast);
        }
        let slow = rep
            .eigenvalues
            .iter()
            .map(|z| z.norm())
            .fold(f64::INFINITY, f64::min);
        let ratio = slow / (c3 / c2);
        assert!((0.5..=2.0).contains(&ratio), "d={d}: ratio {ratio}");
    }
}

#[test]
fn no_slow_eigenvalue_above_resonance() {
    let c = ScalingConstants::default();
    for e in [
        ScalingExponents::new(0.85, 1.2, 1.15),
        ScalingExponents::new(2.2, 1.2, 2.6),
    ] {
        let inst = instantiate(&e, &c, 1000).unwrap();
        let eta_max = find_eta_max_params(&inst.params).unwrap().eta_max;
        let m = build_main_matrix(&inst.params.with_eta(0.5 * eta_max)).unwrap();
        let rep = spectrum_report(&m);
        assert_eq!(rep.spectral_type, SpectralType::AllAtRho);
        for z in rep.eigenvalues {
            assert!(z.norm() >= 0.05 * rep.rho, "{e:?}: |λ|={} ρ={}", z.norm(), rep.rho);
        }
    }
}

#[test]
fn zero_c3_gives_zero_eigenvalue() {
    let p = InstanceParams::new(100, 0.1, 4, 0.2, 0.0).unwrap();
    let m = build_main_matrix(&p).unwrap();
    assert_eq!(char_poly(&m).2, 0.0);
    let rep = spectrum_report(&m);
    let smallest = rep
        .eigenvalues
        .iter()
        .map(|z| z.norm())
        .fold(f64::INFINITY, f64::min);
    assert!(smallest < 1e-14, "smallest |λ| = {smallest}");
}

#[test]
fn delta_is_ratio_of_timescales() {
    let p = InstanceParams::new(500, 0.05, 16, 0.1, 0.02).unwrap();
    let rep = spectrum_report(&build_main_matrix(&p).unwrap());
    assert!(close(rep.delta, (1.0 / rep.rho) / rep.tau_learn, 1e-14));
}

#[test]
fn timescale_dichotomy() {
    let c = ScalingConstants::default();
    let ds = [100u64, 1000, 10_000];
    let report_at = |e: &ScalingExponents, d: u64| {
        let inst = instantiate(e, &c, d).unwrap();
        let eta_max = find_eta_max_params(&inst.params).unwrap().eta_max;
        spectrum_report(&build_main_matrix(&inst.params.with_eta(0.5 * eta_max)).unwrap())
    };
    for e in [
        ScalingExponents::new(0.85, 1.2, 0.325),
        ScalingExponents::new(2.2, 1.2, 1.5),
    ] {
        let mut prev = f64::INFINITY;
        for d in ds {
            let rep = report_at(&e, d);
            let mut mags: Vec<f64> = rep.eigenvalues.iter().map(|z| z.norm() / rep.rho).collect();
            mags.sort_by(f64::total_cmp);
            assert!(mags[0] < prev, "{e:?} d={d}: slow ratio not decreasing");
            prev = mags[0];
            for &m in &mags[1..] {
                assert!((0.05..=20.0).contains(&m), "{e:?} d={d}: fast ratio {m}");
            }
        }
    }
    for e in [
        ScalingExponents::new(0.85, 1.2, 1.15),
        ScalingExponents::new(2.2, 1.2, 2.6),
    ] {
        for d in ds {
            let rep = report_at(&e, d);
            for z in rep.eigenvalues {
                let m = z.norm() / rep.rho;
                assert!((0.05..=20.0).contains(&m), "{e:?} d={d}: ratio {m}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn verdict_matches_eigenvalues(p in instance_strategy()) {
        let v = verdict_for(&p).unwrap();
        prop_assume!(v.margin.abs() > 1e-9);
        let max_re = max_real_eigenvalue(&p);
        prop_assert_eq!(v.stable, max_re < 0.0, "margin {} max Re λ {}", v.margin, max_re);
    }

    #[test]
    fn first_two_conditions_hold_below_ceiling(p in instance_strategy(), frac in 0.01f64..1.0) {
        let eta_max = find_eta_max_params(&p).unwrap().eta_max;
        let (c1, c2, _) = char_poly(&build_main_matrix(&p.with_eta(frac * eta_max)).unwrap());
        prop_assert!(c1 > 0.0 && c2 > 0.0, "c1={} c2={}", c1, c2);
    }
}
