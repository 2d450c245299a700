mod common;

use common::*;
use nalgebra::{Matrix2, Matrix3};
use proptest::prelude::*;
use smlab::ls_limits::*;
use smlab::ls_moment_ode::{build_main_matrix, MomentState, ScaledTransform};
use smlab::numerics::bisect_1d;
use smlab::scaling::*;

fn constants(eta_star: f64) -> ScalingConstants {
    ScalingConstants {
        eta_star,
        ..Default::default()
    }
}

fn max_abs_diff(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    (a - b).iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Balanced main matrix `D⁻¹ d^{power} S D` at one dimension.
fn balanced_main(e: &ScalingExponents, c: &ScalingConstants, d: u64) -> Matrix3<f64> {
    let params = instantiate(e, c, d).unwrap().params;
    let m = build_main_matrix(&params).unwrap();
    let scaled = ScaledTransform::for_matrix(&m).unwrap().scale_matrix(&m);
    let bt = balancing_transform(classify_region(e), e, &params).unwrap();
    bt.balance_matrix(&scaled, d as f64)
}

/// Second moments of the Euler–Maruyama chain, propagated exactly:
/// `M ← (I + hA) M (I + hA)ᵀ + h ξ M₁₁ e₂e₂ᵀ`.
fn em_moments(rho: f64, eta_bar: f64, xi: f64, x0: f64, y0: f64, h: f64, n: usize) -> [f64; 3] {
    let step = Matrix2::identity() + Matrix2::new(0.0, -rho * eta_bar, rho, -rho) * h;
    let mut m = Matrix2::new(x0 * x0, x0 * y0, x0 * y0, y0 * y0);
    for _ in 0..n {
        let mut next = step * m * step.transpose();
        next[(1, 1)] += h * xi * m[(0, 0)];
        m = next;
    }
    [m[(0, 0)], m[(1, 1)], m[(0, 1)]]
}

#[test]
fn dense_above_selection() {
    let sys = select_limit(&ScalingExponents::new(0.85, 1.2, 1.15), &constants(0.2)).unwrap();
    let LimitSystem::HeavyBall2D {
        rate,
        eta_bar,
        clock_power,
    } = sys
    else {
        panic!("expected heavy-ball limit, got {sys:?}");
    };
    assert_eq!(rate, 1.0);
    assert!((eta_bar - 0.2).abs() < 1e-15);
    assert_eq!(clock_power, 1.15);
}

#[test]
fn kappa_eq_sigma_below_selection() {
    let c = ScalingConstants {
        eta_star: 0.2,
        b_star: 1.0,
        p_star: 1.0,
        ..Default::default()
    };
    let chi = chi_star(&c);
    assert!((chi - 1.0 / (1.0 - (-1.0f64).exp())).abs() < 1e-14);
    assert!((chi - 1.581977).abs() < 1e-6);
    let sys = select_limit(&ScalingExponents::new(1.2, 1.2, 0.5), &c).unwrap();
    let LimitSystem::Sgd1D { c_eff, clock_power } = sys else {
        panic!("expected scalar limit, got {sys:?}");
    };
    assert!(close(c_eff, chi * 0.2 * 1.8, 1e-14));
    assert_eq!(clock_power, 1.0);
}

#[test]
fn kappa_eq_sigma_below_rate_matches_main_decay() {
    // Long-time decay rate of the main ODE on the t/d clock.
    let e = ScalingExponents::new(1.2, 1.2, 0.5);
    let c = ScalingConstants {
        eta_star: 0.2,
        b_star: 1.0,
        p_star: 1.0,
        ..Default::default()
    };
    let LimitSystem::Sgd1D { c_eff, .. } = select_limit(&e, &c).unwrap() else {
        panic!("expected scalar limit");
    };
    let d = 100_000u64;
    let params = instantiate(&e, &c, d).unwrap().params;
    let m = build_main_matrix(&params).unwrap();
    let slowest = m
        .matrix()
        .complex_eigenvalues()
        .iter()
        .map(|z| -z.re)
        .fold(f64::INFINITY, f64::min);
    let fitted = slowest * d as f64;
    assert!(close(fitted, c_eff, 0.02), "fitted {fitted} vs {c_eff}");
}

#[test]
fn chi_star_tends_to_one_for_sparse_batches() {
    for x in [1e-2, 1e-4, 1e-8] {
        let c = ScalingConstants {
            p_star: x,
            b_star: 1.0,
            ..Default::default()
        };
        assert!((chi_star(&c) - 1.0).abs() <= 0.6 * x, "p*B*={x}");
    }
}

#[test]
fn triple_point_flips_at_twice_batch() {
    for b_star in [0.5, 1.0, 4.0] {
        let stable_margin = |eta_star: f64| {
            let c = ScalingConstants {
                eta_star,
                b_star,
                ..Default::default()
            };
            let sys = select_limit(&ScalingExponents::new(1.2, 1.2, 1.0), &c).unwrap();
            sys.char_coeffs().2
        };
        let root = bisect_1d(stable_margin, 0.1 * b_star, 4.0 * b_star, 1e-10).unwrap();
        assert!((root - 2.0 * b_star).abs() < 1e-6, "B*={b_star}: flip at {root}");
        let c = |eta_star| ScalingConstants {
            eta_star,
            b_star,
            ..Default::default()
        };
        let e = ScalingExponents::new(1.2, 1.2, 1.0);
        assert!(select_limit(&e, &c(2.0 * b_star * (1.0 - 1e-6))).unwrap().hurwitz().stable);
        assert!(!select_limit(&e, &c(2.0 * b_star * (1.0 + 1e-6))).unwrap().hurwitz().stable);
    }
}

#[test]
fn resonance_zeta_is_universal() {
    let c = ScalingConstants {
        p_star: 0.3,
        b_star: 2.0,
        eps_star: 0.7,
        eta_star: 0.2,
    };
    let expected = c.eps_star / (c.p_star * c.b_star);
    for e in [
        ScalingExponents::new(0.85, 1.2, 0.65),
        ScalingExponents::new(2.2, 1.2, 2.0),
        ScalingExponents::new(1.2, 1.2, 1.0),
    ] {
        let zeta = select_limit(&e, &c).unwrap().zeta().unwrap();
        assert!(close(zeta, expected, 1e-14), "{e:?}: ζ={zeta}");
    }
}

#[test]
fn memoryless_unit_rate_decays_as_exponential() {
    let c = ScalingConstants {
        eta_star: 1.0,
        b_star: 1.0,
        ..Default::default()
    };
    let sys = select_limit(&ScalingExponents::new(2.2, 1.2, 0.4), &c).unwrap();
    assert_eq!(
        sys,
        LimitSystem::Sgd1D {
            c_eff: 1.0,
            clock_power: 1.0
        }
    );
    let taus = [0.0, 0.5, 1.0, 3.0];
    let tr = evolve_limit(&sys, &MomentState::new(1.0, 0.0, 0.0), &taus).unwrap();
    for (t, s) in taus.iter().zip(&tr.states) {
        assert!((s.r - (-t).exp()).abs() < 1e-15);
    }
}

#[test]
fn heavy_ball_critical_damping() {
    let rate = 1.7;
    let sys = LimitSystem::HeavyBall2D {
        rate,
        eta_bar: 0.25,
        clock_power: 1.0,
    };
    let a = Matrix2::new(0.0, -rate * 0.25, rate, -rate);
    let disc = a.trace().powi(2) - 4.0 * a.determinant();
    assert!(disc.abs() < 1e-14);
    assert!((a.trace() / 2.0 + rate / 2.0).abs() < 1e-15);
    // The lift of a double root −r/2: x(τ) = e^{−rτ/2}(1 + rτ/2) from (1, 0).
    let taus = [0.0, 0.3, 1.0, 4.0];
    let tr = evolve_limit(&sys, &MomentState::new(1.0, 0.0, 0.0), &taus).unwrap();
    for (&t, s) in taus.iter().zip(&tr.states) {
        let x = (-rate * t / 2.0).exp() * (1.0 + rate * t / 2.0);
        assert!((s.r - x * x).abs() < 1e-12, "τ={t}: {} vs {}", s.r, x * x);
    }
}

#[test]
fn heavy_ball_lift_matches_moment_flow() {
    let sys = LimitSystem::HeavyBall2D {
        rate: 0.8,
        eta_bar: 0.6,
        clock_power: 1.0,
    };
    let taus: Vec<f64> = (0..30).map(|i| 0.25 * i as f64).collect();
    let init = MomentState::new(2.0, 0.5, 1.0);
    let lifted = evolve_limit(&sys, &init, &taus).unwrap();
    let flow = smlab::numerics::LinearFlow::new(&sys.moment_matrix());
    for (&t, s) in taus.iter().zip(&lifted.states) {
        let x = flow.apply(t, &init.as_vector());
        assert!((s.r - x[0]).abs() < 1e-12 && (s.v - x[1]).abs() < 1e-12 && (s.c - x[2]).abs() < 1e-12);
    }
}

#[test]
fn resonance_discriminant_decides_root_type() {
    for (eta_bar, zeta) in [(0.05, 0.1), (0.1, 1.0), (0.2, 0.5), (0.5, 1.0), (1.0, 1.5), (0.02, 3.0)] {
        let disc = resonance_discriminant(eta_bar, zeta);
        let expected = 4.0 * ((1.0 - 4.0 * eta_bar).powi(3) - 27.0 * eta_bar.powi(4) * zeta * zeta);
        assert!((disc - expected).abs() < 1e-12 * expected.abs().max(1.0));
        let roots = resonance_normalized_roots(eta_bar, zeta);
        let n_complex = roots.iter().filter(|z| z.im.abs() > 1e-9).count();
        if disc > 1e-9 {
            assert_eq!(n_complex, 0, "η̄={eta_bar} ζ={zeta}");
        } else if disc < -1e-9 {
            assert_eq!(n_complex, 2, "η̄={eta_bar} ζ={zeta}");
        }
        let (a1, a2, a3) = resonance_normalized_poly(eta_bar, zeta);
        assert_eq!((a1, a2), (3.0, 2.0 + 4.0 * eta_bar));
        assert!((a3 - 2.0 * eta_bar * (2.0 - eta_bar * zeta)).abs() < 1e-15);
    }
}

#[test]
fn dense_above_balancing_converges() {
    let e = ScalingExponents::new(0.85, 1.2, 1.15);
    let c = constants(0.2);
    let limit = select_limit(&e, &c).unwrap().moment_matrix();
    let devs: Vec<f64> = [100u64, 1000, 10_000]
        .iter()
        .map(|&d| max_abs_diff(&balanced_main(&e, &c, d), &limit))
        .collect();
    assert!(devs[0] > devs[1] && devs[1] > devs[2], "{devs:?}");
    assert!(devs[2] < 0.1, "{devs:?}");
}

#[test]
fn triple_point_feedthrough_entry() {
    let e = ScalingExponents::new(1.2, 1.2, 1.0);
    let c = ScalingConstants {
        p_star: 0.5,
        b_star: 2.0,
        eps_star: 0.8,
        eta_star: 0.3,
    };
    let p_star = p_batch_star(&c);
    let xi = c.eps_star * c.eps_star / (p_star * c.p_star * c.b_star);
    let entries: Vec<f64> = [1000u64, 100_000, 10_000_000]
        .iter()
        .map(|&d| balanced_main(&e, &c, d)[(1, 0)])
        .collect();
    let errs: Vec<f64> = entries.iter().map(|x| (x - xi).abs() / xi).collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{entries:?} vs {xi}");
    assert!(errs[2] < 0.01, "{entries:?} vs {xi}");
}

#[test]
fn scalar_regions_have_no_balancing() {
    let c = constants(0.2);
    for e in [
        ScalingExponents::new(0.85, 1.2, 0.325),
        ScalingExponents::new(2.2, 1.2, 0.4),
        ScalingExponents::new(2.2, 1.2, 1.5),
    ] {
        let params = instantiate(&e, &c, 1000).unwrap().params;
        assert!(balancing_transform(classify_region(&e), &e, &params).is_err());
    }
}

#[test]
fn noise_character_line_is_unsupported() {
    assert!(select_limit(&ScalingExponents::new(0.2, 1.2, 0.5), &constants(0.2)).is_err());
}

#[test]
fn sde_without_noise_reproduces_heavy_ball() {
    let sys = LimitSystem::Resonance3D {
        rho_star: 1.0,
        eta_bar: 0.3,
        xi_star: 0.0,
        clock_power: 1.0,
    };
    let hb = LimitSystem::HeavyBall2D {
        rate: 1.0,
        eta_bar: 0.3,
        clock_power: 1.0,
    };
    let taus: Vec<f64> = (0..=10).map(|i| i as f64 * 0.5).collect();
    let ens = sde_lift_simulate(&sys, 1.0, 0.0, &taus, 1000, 3, None).unwrap();
    let exact = evolve_limit(&hb, &MomentState::new(1.0, 0.0, 0.0), &taus).unwrap();
    for (k, (m, s)) in ens.mean.iter().zip(&exact.states).enumerate() {
        assert_eq!(ens.std_error[k].r, 0.0);
        // Euler error at step 0.01 over τ ≤ 5.
        assert!((m.r - s.r).abs() < 0.02, "τ={}: {} vs {}", taus[k], m.r, s.r);
        assert!((m.c - s.c).abs() < 0.02);
    }
}

#[test]
fn sde_ensemble_matches_chain_moments() {
    let sys = select_limit(&ScalingExponents::new(1.2, 1.2, 1.0), &constants(0.2)).unwrap();
    let LimitSystem::Resonance3D {
        rho_star,
        eta_bar,
        xi_star,
        ..
    } = sys
    else {
        panic!("expected resonance limit");
    };
    let taus = [0.0, 0.5, 1.0, 2.0];
    let ens = sde_lift_simulate(&sys, 1.0, 0.0, &taus, 4000, 11, None).unwrap();
    assert_eq!(ens.n_nonfinite, 0);
    for (k, &t) in taus.iter().enumerate().skip(1) {
        let n = (t / ens.step).round() as usize;
        let chain = em_moments(rho_star, eta_bar, xi_star, 1.0, 0.0, t / n as f64, n);
        let got = [ens.mean[k].r, ens.mean[k].v, ens.mean[k].c];
        let se = [ens.std_error[k].r, ens.std_error[k].v, ens.std_error[k].c];
        for i in 0..3 {
            let z = (got[i] - chain[i]) / se[i];
            assert!(z.abs() < 4.0, "τ={t} component {i}: z={z}");
        }
    }
}

#[test]
fn euler_chain_has_weak_order_one() {
    let sys = select_limit(&ScalingExponents::new(1.2, 1.2, 1.0), &constants(0.2)).unwrap();
    let LimitSystem::Resonance3D {
        rho_star,
        eta_bar,
        xi_star,
        ..
    } = sys
    else {
        panic!("expected resonance limit");
    };
    let t = 2.0;
    let exact = evolve_limit(&sys, &MomentState::new(1.0, 0.0, 0.0), &[t]).unwrap().states[0];
    let err = |n: usize| {
        let m = em_moments(rho_star, eta_bar, xi_star, 1.0, 0.0, t / n as f64, n);
        (m[0] - exact.r).abs() + (m[1] - exact.v).abs() + (m[2] - exact.c).abs()
    };
    let (e1, e2, e4) = (err(100), err(200), err(400));
    assert!((e1 / e2 - 2.0).abs() < 0.1, "{e1} {e2}");
    assert!((e2 / e4 - 2.0).abs() < 0.05, "{e2} {e4}");
}

#[test]
fn sde_rejects_small_ensembles_and_scalar_limits() {
    let sys = select_limit(&ScalingExponents::new(1.2, 1.2, 1.0), &constants(0.2)).unwrap();
    assert!(sde_lift_simulate(&sys, 1.0, 0.0, &[0.0, 1.0], 999, 0, None).is_err());
    let scalar = LimitSystem::Sgd1D {
        c_eff: 1.0,
        clock_power: 1.0,
    };
    assert!(sde_lift_simulate(&scalar, 1.0, 0.0, &[0.0, 1.0], 1000, 0, None).is_err());
    let unstable = select_limit(&ScalingExponents::new(1.2, 1.2, 1.0), &constants(2.5)).unwrap();
    assert!(sde_lift_simulate(&unstable, 1.0, 0.0, &[0.0, 1.0], 1000, 0, None).is_err());
    assert!(evolve_limit(&unstable, &MomentState::new(1.0, 0.0, 0.0), &[0.0]).is_err());
}

#[test]
fn main_tracks_limit_in_sample_regions() {
    for (name, e, c) in ls_limit_cases()
        .into_iter()
        .filter(|(n, _, _)| ["A", "B", "triple-point"].contains(n))
    {
        let lim = select_limit(&e, &c).unwrap();
        let taus = default_tau_grid(&lim, 101);
        let limit_r: Vec<f64> = evolve_limit(&lim, &MomentState::new(1.0, 0.0, 0.0), &taus)
            .unwrap()
            .states
            .iter()
            .map(|s| s.r)
            .collect();
        let errs: Vec<f64> = [100u64, 1000, 10_000]
            .iter()
            .map(|&d| {
                let main = rescaled_main(&e, &c, d, &taus, 1.0).unwrap();
                let r: Vec<f64> = main.trajectory.states.iter().map(|s| s.r).collect();
                sup_relative_error(&r, &limit_r).unwrap()
            })
            .collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0]), "{name}: {errs:?}");
        assert!(errs[2] < 0.05, "{name}: {errs:?}");
    }
}

#[test]
fn sup_error_rejects_mismatched_series() {
    assert!(sup_relative_error(&[1.0, 2.0], &[1.0]).is_err());
    assert!(sup_relative_error(&[], &[]).is_err());
    assert_eq!(sup_relative_error(&[1.0, 0.5], &[1.0, 0.5]).unwrap(), 0.0);
}

proptest! {
    #[test]
    fn square_root_lift_identity(
        rate in 0.01f64..10.0,
        eta_bar in 0.0f64..3.0,
        x in -5.0f64..5.0,
        y in -5.0f64..5.0,
    ) {
        let sys = LimitSystem::HeavyBall2D { rate, eta_bar, clock_power: 1.0 };
        let f = heavy_ball_field(rate, eta_bar, x, y);
        let lifted = [2.0 * x * f[0], 2.0 * y * f[1], f[0] * y + x * f[1]];
        let moment = limit_moment_field(&sys, &MomentState::new(x * x, y * y, x * y));
        let scale = 1.0 + rate * (1.0 + eta_bar) * (x * x + y * y);
        for i in 0..3 {
            prop_assert!((lifted[i] - moment[i]).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn heavy_ball_eigenpolynomial(rate in 0.01f64..10.0, eta_bar in 0.0f64..3.0) {
        let a = Matrix2::new(0.0, -rate * eta_bar, rate, -rate);
        prop_assert!((a.trace() + rate).abs() <= 1e-14 * rate);
        prop_assert!((a.determinant() - rate * rate * eta_bar).abs() <= 1e-12 * rate * rate);
    }
}
