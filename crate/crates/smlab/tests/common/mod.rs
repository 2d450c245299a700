//! Oracles and settings shared by several test targets.
#![allow(dead_code)]

use smlab::ls_moment_ode::{build_main_matrix, char_poly};
use smlab::scaling::{InstanceParams, ScalingConstants, ScalingExponents};

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1e-300)
}

pub fn c3_at(params: &InstanceParams, eta: f64) -> f64 {
    char_poly(&build_main_matrix(&params.with_eta(eta)).unwrap()).2
}

/// Richardson estimates of the `η¹` and `η²` coefficients of `c3(η)` from
/// steps `h, h/2, h/4`.
pub fn c3_taylor(params: &InstanceParams, h: f64) -> (f64, f64) {
    let g = |x: f64| c3_at(params, x) / x;
    let (g1, g2, g4) = (g(h), g(h / 2.0), g(h / 4.0));
    let r1a = 2.0 * g2 - g1;
    let r1b = 2.0 * g4 - g2;
    let a1 = (4.0 * r1b - r1a) / 3.0;
    let k = |x: f64, gx: f64| (gx - a1) / x;
    let (k1, k2, k4) = (k(h, g1), k(h / 2.0, g2), k(h / 4.0, g4));
    let s1a = 2.0 * k2 - k1;
    let s1b = 2.0 * k4 - k2;
    (a1, (4.0 * s1b - s1a) / 3.0)
}

/// Predicted `η¹` coefficient `2 B1 (1 − β̄1)(1 − β̄2)`.
pub fn c3_linear_prediction(params: &InstanceParams) -> f64 {
    let rd = params.retention_drift();
    2.0 * params.batch_factors().b1 * rd.one_minus_beta_bar1 * rd.one_minus_beta_bar2
}

/// Main-versus-limit settings at σ = 1.2: the six interior regions and the
/// five rays meeting at the triple point.
pub fn ls_limit_cases() -> Vec<(&'static str, ScalingExponents, ScalingConstants)> {
    let c = |eta_star: f64| ScalingConstants {
        eta_star,
        ..Default::default()
    };
    vec![
        ("A", ScalingExponents::new(0.05, 1.2, 0.8), c(0.2)),
        ("B", ScalingExponents::new(0.85, 1.2, 0.325), c(0.2)),
        ("C", ScalingExponents::new(0.85, 1.2, 1.15), c(0.2)),
        ("D", ScalingExponents::new(2.2, 1.2, 0.4), c(0.2)),
        ("E", ScalingExponents::new(2.2, 1.2, 1.5), c(0.2)),
        ("F", ScalingExponents::new(2.2, 1.2, 2.6), c(0.2)),
        ("resonance-dense", ScalingExponents::new(0.85, 1.2, 0.65), c(0.5)),
        ("resonance-sparse", ScalingExponents::new(2.2, 1.2, 2.0), c(0.5)),
        ("kappa-eq-sigma-above", ScalingExponents::new(1.2, 1.2, 1.5), c(0.2)),
        ("kappa-eq-sigma-below", ScalingExponents::new(1.2, 1.2, 0.5), c(0.2)),
        ("triple-point", ScalingExponents::new(1.2, 1.2, 1.0), c(0.2)),
    ]
}

/// One-step oracle settings `(d, p, B, ε, η)` spanning β ∈ {0, 0.5, 0.99},
/// p ∈ {1, 0.1, 0.01} and B ∈ {1, 8}.
pub fn one_step_settings() -> Vec<InstanceParams> {
    [
        (20, 1.0, 1, 1.0, 0.05),
        (16, 0.1, 8, 0.5, 0.1),
        (30, 0.01, 8, 0.01, 0.2),
        (10, 1.0, 8, 0.5, 0.05),
        (25, 0.1, 1, 0.01, 0.3),
    ]
    .into_iter()
    .map(|(d, p, b, eps, eta)| InstanceParams::new(d, p, b, eps, eta).unwrap())
    .collect()
}

/// A fixed error/momentum pair with nonzero `R`, `V` and `C`.
pub fn one_step_state(d: usize) -> smlab::ls_mc::McState {
    let err = (0..d).map(|j| match j {
        0 => 1.0,
        1 => 0.3,
        _ => 0.0,
    });
    let momentum = (0..d).map(|j| match j {
        0 => 0.4,
        2 => 0.5,
        _ => 0.0,
    });
    smlab::ls_mc::McState {
        err: err.collect(),
        momentum: momentum.collect(),
    }
}
