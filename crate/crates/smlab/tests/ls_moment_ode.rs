mod common;

use common::*;
use proptest::prelude::*;
use smlab::ls_moment_ode::*;
use smlab::scaling::*;
use smlab::stability::find_eta_max_params;
use smlab::trajectory::Clock;

fn sgd(d: u64, eta: f64) -> InstanceParams {
    InstanceParams::new(d, 1.0, 1, 1.0, eta).unwrap()
}

#[test]
fn memoryless_matrix_entries() {
    let m = build_main_matrix(&sgd(8, 0.1)).unwrap();
    assert!((m.a_r + 0.1).abs() < 1e-15);
    assert!((m.b_r - 10.0).abs() < 1e-14);
    assert!(m.c_r.abs() < 1e-15);
    assert!((m.b_v + 1.0).abs() < 1e-15);
    assert!((m.c_c + 1.0).abs() < 1e-15);
    for x in [m.a_v, m.a_c, m.b_c, m.c_v] {
        assert_eq!(x, 0.0);
    }
}

#[test]
fn memoryless_decay_matches_discrete_recursion() {
    // E R_{k+1} = (1 − 2η + η²(d+2)) E R_k for plain SGD on isotropic data.
    for (d, eta) in [(8, 0.1), (100, 0.01), (1000, 1e-3)] {
        let m = build_main_matrix(&sgd(d, eta)).unwrap();
        let factor = 1.0 - 2.0 * eta + eta * eta * (d as f64 + 2.0);
        assert!(close(1.0 + m.a_r, factor, 1e-14));
    }
}

#[test]
fn zero_learning_rate_freezes_error() {
    let p = InstanceParams::new(50, 0.1, 8, 0.3, 0.0).unwrap();
    let m = build_main_matrix(&p).unwrap();
    assert_eq!((m.a_r, m.a_v, m.a_c), (0.0, 0.0, 0.0));
    assert_eq!(char_poly(&m).2, 0.0);
}

#[test]
fn scaled_forcing_is_one() {
    let p = InstanceParams::new(300, 0.02, 40, 0.05, 0.01).unwrap();
    let m = build_main_matrix(&p).unwrap();
    let t = ScaledTransform::for_matrix(&m).unwrap();
    let s = t.scale_matrix(&m);
    assert_eq!(s[(1, 0)], 1.0);
    assert_eq!(s[(1, 1)], m.b_v);
    assert_eq!(s[(2, 2)], m.c_c);
}

#[test]
fn clock_conversion_examples() {
    let p = InstanceParams::new(1000, 0.5, 1, 0.1, 1e-4).unwrap();
    let m = build_main_matrix(&p).unwrap();
    let tr = evolve_linear(&m, &MomentState::new(1.0, 0.0, 0.0), &[0.0, 10.0, 500.0]).unwrap();
    let k = clock_convert(&tr, Clock::Minibatch, 0.5, 1000.0).unwrap();
    assert!(close(k.times[1], 20.0, 1e-15));
    let tau = clock_convert(&tr, Clock::Slow { power: 1.0 }, 0.5, 1000.0).unwrap();
    assert!(close(tau.times[2], 0.5, 1e-15));
    let dense = clock_convert(&tr, Clock::Slow { power: 1.0 - 1.2 + 0.85 }, 0.5, 1000.0).unwrap();
    assert!(close(dense.times[2], 500.0 / 1000f64.powf(0.65), 1e-12));
    let back = clock_convert(&k, Clock::ActiveUpdate, 0.5, 1000.0).unwrap();
    assert!(close(back.times[2], 500.0, 1e-14));
}

#[test]
fn evolution_rejects_blow_up() {
    let p = sgd(10, 0.5);
    let m = build_main_matrix(&p).unwrap();
    let err = evolve_linear(&m, &MomentState::new(1.0, 0.0, 0.0), &[0.0, 1e4]).unwrap_err();
    assert!(matches!(err, smlab::Error::Unstable { .. }));
}

#[test]
fn dense_above_main_tracks_heavy_ball_limit() {
    use smlab::ls_limits::*;
    let e = ScalingExponents::new(0.85, 1.2, 1.15);
    let c = ScalingConstants {
        eta_star: 0.2,
        ..Default::default()
    };
    let lim = select_limit(&e, &c).unwrap();
    let taus = default_tau_grid(&lim, 200);
    let l = evolve_limit(&lim, &MomentState::new(1.0, 0.0, 0.0), &taus).unwrap();
    let m = rescaled_main(&e, &c, 10_000, &taus, 1.0).unwrap();
    let a: Vec<f64> = m.trajectory.states.iter().map(|s| s.r).collect();
    let b: Vec<f64> = l.states.iter().map(|s| s.r).collect();
    assert!(sup_relative_error(&a, &b).unwrap() < 0.05);
}

#[test]
fn default_grid_spans_both_timescales() {
    let p = InstanceParams::new(100, 0.1, 4, 0.05, 0.01).unwrap();
    let m = build_main_matrix(&p).unwrap();
    let g = default_time_grid(&m);
    assert_eq!(g[0], 0.0);
    assert!(g.windows(2).all(|w| w[1] > w[0]));
    assert!(close(g[1], 1e-3 / m.retention.rho, 1e-9));
    assert!(close(*g.last().unwrap(), 10.0 / (p.eta * m.batch.b1), 1e-9));
}

fn arb_params() -> impl Strategy<Value = InstanceParams> {
    (2u64..500, 1e-3f64..1.0, 1u64..64, 1e-3f64..1.0, 1e-4f64..0.5)
        .prop_map(|(d, p, b, eps, eta)| InstanceParams::new(d, p, b, eps, eta).unwrap())
}

proptest! {
    #[test]
    fn forcing_entry_is_exact(p in arb_params()) {
        let m = build_main_matrix(&p).unwrap();
        prop_assert_eq!(m.b_r, p.eps * p.eps * m.batch.b2);
        let z = build_main_matrix(&p.with_eta(0.0)).unwrap();
        prop_assert_eq!((z.a_r, z.a_v, z.a_c), (0.0, 0.0, 0.0));
    }

    #[test]
    fn scaled_round_trip(p in arb_params(), r in 0.0f64..10.0, v in 0.0f64..10.0, c in -3.0f64..3.0) {
        let m = build_main_matrix(&p).unwrap();
        let t = ScaledTransform::for_matrix(&m).unwrap();
        let s = MomentState::new(r, v, c);
        let back = t.from_scaled(&t.to_scaled(&s));
        prop_assert!((back.r - r).abs() <= 1e-14 * r.abs().max(1e-300));
        prop_assert!((back.v - v).abs() <= 1e-14 * v.abs().max(1e-300));
        prop_assert!((back.c - c).abs() <= 1e-14 * c.abs().max(1e-300));
    }

    #[test]
    fn char_poly_matches_matrix_invariants(p in arb_params()) {
        let m = build_main_matrix(&p).unwrap();
        let a = m.matrix();
        let (c1, c2, c3) = char_poly(&m);
        let minors = a[(0,0)]*a[(1,1)] - a[(0,1)]*a[(1,0)] + a[(0,0)]*a[(2,2)] - a[(0,2)]*a[(2,0)]
            + a[(1,1)]*a[(2,2)] - a[(1,2)]*a[(2,1)];
        let scale = a.amax().powi(3).max(1e-300);
        prop_assert!((c1 + a.trace()).abs() <= 1e-12 * a.amax());
        prop_assert!((c2 - minors).abs() <= 1e-12 * a.amax().powi(2));
        prop_assert!((c3 + a.determinant()).abs() <= 1e-10 * scale);
    }

    #[test]
    fn cauchy_schwarz_is_preserved(p in arb_params(), x in 0.1f64..2.0, y in -2.0f64..2.0) {
        let eta_max = find_eta_max_params(&p).unwrap().eta_max;
        let m = build_main_matrix(&p.with_eta(0.5 * eta_max)).unwrap();
        let start = MomentState::new(x * x, y * y, x * y);
        let rate = m.retention.rho.min(0.5 * eta_max * m.batch.b1);
        let times: Vec<f64> = (0..20).map(|i| i as f64 / rate).collect();
        let tr = evolve_linear(&m, &start, &times).unwrap();
        for s in &tr.states {
            prop_assert!(s.is_admissible(), "{:?}", s);
        }
    }
}
