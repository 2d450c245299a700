//! Rare-class logistic regression: coefficient functions, the five-variable
//! moment ODE, its reduced per-region systems, equilibria and the population KL.
//!
//! The data are a two-class Gaussian mixture: with probability `1 − p` the
//! common class `X ~ N(0, I)` (label 0), with probability `p` the rare class
//! `X ~ N(μ, I)` (label 1), `‖μ‖ = r`. The bias is pinned at its Bayes value
//! `b* = log(p/(1−p)) − r²/2`. With `θ = θ∥ μ̂ + θ⊥`, `q = ‖θ‖²` and the
//! class-conditional logits `G1 ~ N(b*, q)`, `G2 ~ N(θ∥ r + b*, q)`:
//!
//! ```text
//! A  = (1−p) E σ'(G1) + p E σ'(G2)
//! ℬ  = p (E σ(G2) − 1)
//! D0 = (1−p) E σ(G1)² + p E (1−σ(G2))²
//! Dθ = (1−p) E (σ²)''(G1) + p E ((1−σ)²)''(G2)
//! f  = A θ∥ + ℬ r
//! N̄⊥ = [(d−1) D0 + R⊥ Dθ]/B + (B−1)/B · A² R⊥
//! ```
//!
//! and the per-step conditional drift of `(s, u, R⊥, V⊥, C⊥)` is
//!
//! ```text
//! ṡ  = −η(1−ε) u − ηε f
//! u̇  = ε (f − u)
//! Ṙ⊥ = −2η(1−ε) C⊥ − 2ηε A R⊥ + η²(1−ε)² V⊥ + 2η²(1−ε)ε A C⊥ + η²ε² N̄⊥
//! V̇⊥ = −(2ε − ε²) V⊥ + 2(1−ε)ε A C⊥ + ε² N̄⊥
//! Ċ⊥ = −ε C⊥ + ε A R⊥ − η(1−ε)² V⊥ − 2η(1−ε)ε A C⊥ − ηε² N̄⊥
//! ```
//!
//! For small `p` with `α = e^{(q − r²)/2} = O(1)` the coefficients reduce to
//! `A = pα`, `ℬ = −p`, `D0 = p`, `Dθ = 0`, `N̂⊥ = dp/B + (B−1)/B · p²α² R⊥`.

use std::sync::OnceLock;

use nalgebra::{Matrix2, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{bisect_1d, gauss_hermite, integrate, newton_1d, QuadratureRule, RkOptions};
use crate::scaling::{ScalingConstants, ScalingExponents, BOUNDARY_TOL};
use crate::trajectory::{Clock, Trajectory, TrajectoryMeta};

/// Largest `R⊥` treated as tame.
pub const R_PERP_MAX: f64 = 50.0;
/// Largest `|θ∥|` accepted by the ODE integrator.
pub const THETA_PAR_MAX: f64 = 10.0;
/// Largest `p` accepted by the tame coefficient forms.
pub const TAME_P_MAX: f64 = 0.1;
/// Relative tolerance between the two quadrature orders.
pub const QUADRATURE_TOL: f64 = 1e-8;

fn rule(order: usize) -> &'static QuadratureRule {
    static R40: OnceLock<QuadratureRule> = OnceLock::new();
    static R64: OnceLock<QuadratureRule> = OnceLock::new();
    static R128: OnceLock<QuadratureRule> = OnceLock::new();
    static R256: OnceLock<QuadratureRule> = OnceLock::new();
    let cell = match order {
        40 => &R40,
        64 => &R64,
        128 => &R128,
        256 => &R256,
        _ => unreachable!("unsupported cached order {order}"),
    };
    cell.get_or_init(|| gauss_hermite(order).expect("valid order"))
}

/// `log(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `σ(z) = e^{−softplus(−z)}`.
pub fn sigmoid(z: f64) -> f64 {
    (-softplus(-z)).exp()
}

/// Bayes bias `log(p/(1−p)) − r²/2`.
pub fn bayes_bias(p: f64, r: f64) -> f64 {
    (p / (1.0 - p)).ln() - 0.5 * r * r
}

/// Concrete logistic-regression parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrParams {
    pub r: f64,
    pub p: f64,
    #[serde(rename = "B")]
    pub b: u64,
    pub beta: f64,
    pub eps: f64,
    pub eta: f64,
    pub d: u64,
    pub b_star: f64,
}

impl LrParams {
    pub fn new(r: f64, p: f64, b: u64, eps: f64, eta: f64, d: u64) -> Result<Self> {
        let out = Self {
            r,
            p,
            b,
            beta: 1.0 - eps,
            eps,
            eta,
            d,
            b_star: bayes_bias(p, r),
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::invalid("r", "must be positive and finite"));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::invalid("p", format!("{} is outside (0, 1)", self.p)));
        }
        if self.b < 1 || self.d < 1 {
            return Err(Error::invalid("B, d", "must be positive"));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::invalid("eps", format!("{} is outside (0, 1]", self.eps)));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::invalid("eta", "must be finite and >= 0"));
        }
        if (self.b_star - bayes_bias(self.p, self.r)).abs() > 1e-12 * self.b_star.abs().max(1.0) {
            return Err(Error::invalid("b_star", "must equal log(p/(1-p)) - r^2/2"));
        }
        Ok(())
    }

    /// `η d / B`.
    pub fn eta_eff(&self) -> f64 {
        self.eta * self.d as f64 / self.b as f64
    }

    /// `η p / ε`.
    pub fn eta_bar(&self) -> f64 {
        self.eta * self.p / self.eps
    }
}

/// Five-variable state `(s, u, R⊥, V⊥, C⊥)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LrState {
    pub s: f64,
    pub u: f64,
    #[serde(rename = "R_perp")]
    pub r_perp: f64,
    #[serde(rename = "V_perp")]
    pub v_perp: f64,
    #[serde(rename = "C_perp")]
    pub c_perp: f64,
}

impl LrState {
    pub fn new(s: f64, u: f64, r_perp: f64, v_perp: f64, c_perp: f64) -> Self {
        Self {
            s,
            u,
            r_perp,
            v_perp,
            c_perp,
        }
    }

    /// `(s, 0, R⊥, 0, 0)`.
    pub fn at_rest(s: f64, r_perp: f64) -> Self {
        Self::new(s, 0.0, r_perp, 0.0, 0.0)
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.s, self.u, self.r_perp, self.v_perp, self.c_perp]
    }

    pub fn from_array(x: &[f64; 5]) -> Self {
        Self::new(x[0], x[1], x[2], x[3], x[4])
    }

    pub fn theta_par(&self, r: f64) -> f64 {
        self.s + r
    }

    pub fn q(&self, r: f64) -> f64 {
        let t = self.theta_par(r);
        t * t + self.r_perp
    }

    /// `α = e^{(q − r²)/2}`.
    pub fn alpha(&self, r: f64) -> f64 {
        alpha(self.s, self.r_perp, r)
    }

    /// Non-negative bulk norms and Cauchy–Schwarz up to `slack`.
    pub fn is_admissible(&self, slack: f64) -> bool {
        self.r_perp >= -slack
            && self.v_perp >= -slack
            && self.c_perp * self.c_perp <= self.r_perp.max(0.0) * self.v_perp.max(0.0) + slack
    }
}

/// `α(s, R⊥) = exp(((s+r)² + R⊥ − r²)/2)`.
pub fn alpha(s: f64, r_perp: f64, r: f64) -> f64 {
    (0.5 * (s * (s + 2.0 * r) + r_perp)).exp()
}

/// Coefficient functions at one state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrCoefficients {
    #[serde(rename = "A")]
    pub a: f64,
    pub b_coef: f64,
    pub d0: f64,
    pub d_theta: f64,
    /// Signal drift `A θ∥ + ℬ r`.
    pub f: f64,
    /// Batched orthogonal noise.
    pub n_perp_bar: f64,
}

/// Which coefficient forms the ODE uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoeffMode {
    Exact,
    Tame,
}

fn assemble(a: f64, b_coef: f64, d0: f64, d_theta: f64, state: &LrState, params: &LrParams) -> LrCoefficients {
    let bf = params.b as f64;
    let n_perp_bar = ((params.d as f64 - 1.0) * d0 + state.r_perp * d_theta) / bf
        + (bf - 1.0) / bf * a * a * state.r_perp;
    LrCoefficients {
        a,
        b_coef,
        d0,
        d_theta,
        f: a * state.theta_par(params.r) + b_coef * params.r,
        n_perp_bar,
    }
}

/// Raw Gaussian expectations behind the coefficients, with the matching
/// expectations of absolute values used as error scales.
fn raw_expectations(state: &LrState, params: &LrParams, qr: &QuadratureRule) -> ([f64; 4], [f64; 4]) {
    let q = state.q(params.r);
    let mu1 = params.b_star;
    let mu2 = state.theta_par(params.r) * params.r + params.b_star;
    let p = params.p;
    let class1 = |z: f64| {
        let s = sigmoid(z);
        let sm = sigmoid(-z);
        let ds = s * sm;
        [ds, 0.0, s * s, 2.0 * s * ds * (2.0 - 3.0 * s)]
    };
    let class2 = |z: f64| {
        let s = sigmoid(z);
        let sm = sigmoid(-z);
        let ds = s * sm;
        [ds, -sm, sm * sm, 2.0 * ds * sm * (3.0 * s - 1.0)]
    };
    let mut val = [0.0; 4];
    let mut mag = [0.0; 4];
    for k in 0..4 {
        let e1 = qr.expect_normal(mu1, q, |z| class1(z)[k]);
        let e2 = qr.expect_normal(mu2, q, |z| class2(z)[k]);
        let m1 = qr.expect_normal(mu1, q, |z| class1(z)[k].abs());
        let m2 = qr.expect_normal(mu2, q, |z| class2(z)[k].abs());
        val[k] = (1.0 - p) * e1 + p * e2;
        mag[k] = (1.0 - p) * m1 + p * m2;
    }
    // ℬ = p (E σ(G2) − 1) = −p E(1 − σ(G2)).
    (val, mag)
}

fn coefficients_with(state: &LrState, params: &LrParams, order: usize) -> (LrCoefficients, [f64; 4]) {
    let (v, m) = raw_expectations(state, params, rule(order));
    (assemble(v[0], v[1], v[2], v[3], state, params), [m[0], m[1], m[2], m[3]])
}

fn check_state(state: &LrState, params: &LrParams) -> Result<()> {
    params.validate()?;
    let vals = state.as_array();
    if vals.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("state", "non-finite component"));
    }
    if state.r_perp < 0.0 {
        return Err(Error::invalid("R_perp", "must be >= 0"));
    }
    Ok(())
}

fn quadrature_gap(lo: &LrCoefficients, hi: &LrCoefficients, scale: &[f64; 4]) -> Option<String> {
    let pairs = [
        ("A", lo.a, hi.a, scale[0]),
        ("B", lo.b_coef, hi.b_coef, scale[1]),
        ("D0", lo.d0, hi.d0, scale[2]),
        ("Dtheta", lo.d_theta, hi.d_theta, scale[3]),
    ];
    pairs.iter().find_map(|&(name, x, y, s)| {
        ((x - y).abs() > QUADRATURE_TOL * s.max(f64::MIN_POSITIVE))
            .then(|| format!("{name}: difference {:e} at scale {s:e}", (x - y).abs()))
    })
}

/// Exact coefficients by Gauss–Hermite quadrature. The 64-node value is
/// accepted when it agrees with 128 nodes; otherwise the 128-node value is
/// accepted when it agrees with 256 nodes.
pub fn coefficients_exact(state: &LrState, params: &LrParams) -> Result<LrCoefficients> {
    check_state(state, params)?;
    let (c64, scale) = coefficients_with(state, params, 64);
    let (c128, _) = coefficients_with(state, params, 128);
    if quadrature_gap(&c64, &c128, &scale).is_none() {
        return Ok(c64);
    }
    let (c256, _) = coefficients_with(state, params, 256);
    match quadrature_gap(&c128, &c256, &scale) {
        None => Ok(c128),
        Some(detail) => Err(Error::NoConvergence {
            solver: "gauss-hermite",
            detail: format!("128 vs 256 nodes, {detail}"),
        }),
    }
}

/// Tame-`α` closed forms.
pub fn coefficients_tame(state: &LrState, params: &LrParams) -> Result<LrCoefficients> {
    check_state(state, params)?;
    if state.r_perp > R_PERP_MAX {
        return Err(Error::LeftTameRegime {
            detail: format!("R_perp = {} exceeds {R_PERP_MAX}", state.r_perp),
        });
    }
    if params.p > TAME_P_MAX {
        return Err(Error::invalid("p", format!("{} exceeds the tame limit {TAME_P_MAX}", params.p)));
    }
    let p = params.p;
    let a = p * state.alpha(params.r);
    let bf = params.b as f64;
    let df = params.d as f64;
    Ok(LrCoefficients {
        a,
        b_coef: -p,
        d0: p,
        d_theta: 0.0,
        f: a * state.theta_par(params.r) - p * params.r,
        n_perp_bar: df * p / bf + (bf - 1.0) / bf * a * a * state.r_perp,
    })
}

/// Coefficients for the ODE right-hand side. The exact mode uses 64 nodes
/// without the escalation check.
pub fn coefficients(state: &LrState, params: &LrParams, mode: CoeffMode) -> Result<LrCoefficients> {
    match mode {
        CoeffMode::Exact => {
            check_state(state, params)?;
            Ok(coefficients_with(state, params, 64).0)
        }
        CoeffMode::Tame => coefficients_tame(state, params),
    }
}

/// Five-variable drift from given coefficients.
pub fn drift_from_coefficients(state: &LrState, params: &LrParams, c: &LrCoefficients) -> LrState {
    let eta = params.eta;
    let eps = params.eps;
    let om = 1.0 - eps;
    let (u, r, v, cc) = (state.u, state.r_perp, state.v_perp, state.c_perp);
    let a = c.a;
    let n = c.n_perp_bar;
    LrState {
        s: -eta * om * u - eta * eps * c.f,
        u: eps * (c.f - u),
        r_perp: -2.0 * eta * om * cc - 2.0 * eta * eps * a * r
            + eta * eta * om * om * v
            + 2.0 * eta * eta * om * eps * a * cc
            + eta * eta * eps * eps * n,
        v_perp: -(2.0 * eps - eps * eps) * v + 2.0 * om * eps * a * cc + eps * eps * n,
        c_perp: -eps * cc + eps * a * r - eta * om * om * v - 2.0 * eta * om * eps * a * cc
            - eta * eps * eps * n,
    }
}

/// Expected one-step change of the five-variable state.
pub fn drift_5var(state: &LrState, params: &LrParams, mode: CoeffMode) -> Result<LrState> {
    let c = coefficients(state, params, mode)?;
    Ok(drift_from_coefficients(state, params, &c))
}

fn tame_guard(state: &LrState, r: f64) -> Result<()> {
    if state.r_perp > R_PERP_MAX || state.theta_par(r).abs() > THETA_PAR_MAX || !state.s.is_finite() {
        return Err(Error::LeftTameRegime {
            detail: format!(
                "R_perp = {:.3e}, theta_par = {:.3e} outside the tame box",
                state.r_perp,
                state.theta_par(r)
            ),
        });
    }
    Ok(())
}

/// Integrates the five-variable ODE on the step clock.
pub fn evolve_5var(
    initial: &LrState,
    params: &LrParams,
    times: &[f64],
    mode: CoeffMode,
) -> Result<Trajectory<LrState>> {
    params.validate()?;
    tame_guard(initial, params.r)?;
    let opts = RkOptions {
        h_max: 0.1 / params.eps,
        ..Default::default()
    };
    let (ys, stats) = integrate(
        |_, y: &[f64; 5]| {
            let mut st = LrState::from_array(y);
            tame_guard(&st, params.r)?;
            st.r_perp = st.r_perp.max(0.0);
            Ok(drift_5var(&st, params, mode)?.as_array())
        },
        initial.as_array(),
        times,
        &opts,
    )?;
    Trajectory::new(
        Clock::ActiveUpdate,
        times.to_vec(),
        ys.iter().map(LrState::from_array).collect(),
        TrajectoryMeta {
            params: None,
            seed: None,
            solver: Some(format!("{:?}", stats.method)),
        },
    )
}

/// Stationary point of the five-variable ODE.
///
/// At a fixed point `u = f` and `f = 0`. For a trial `R⊥` the signal root of
/// `f(s, R⊥) = 0` fixes the coefficients, the bulk equations are then linear
/// in `(R⊥, V⊥, C⊥)`, and the returned `R⊥` is iterated to self-consistency
/// by bisection.
pub fn steady_state_5var(params: &LrParams, mode: CoeffMode) -> Result<LrState> {
    params.validate()?;
    let r = params.r;
    let signal_root = |r_perp: f64| -> Result<f64> {
        let f = |s: f64| -> f64 {
            coefficients(&LrState::at_rest(s, r_perp), params, mode)
                .map(|c| c.f)
                .unwrap_or(f64::NAN)
        };
        // θ∥ α(θ∥) is increasing, so f has one root in θ∥ ∈ (−1, 2r]. The
        // upper end stays clear of s = 0, where quadrature roundoff can give
        // f a tiny negative value at R⊥ = 0.
        let lo = -r - 0.999_999;
        let hi = r;
        bisect_1d(f, lo, hi, 1e-15)
    };
    let bulk = |r_perp: f64| -> Result<(f64, LrState)> {
        let s = signal_root(r_perp)?;
        let probe = LrState::at_rest(s, r_perp);
        let c = coefficients(&probe, params, mode)?;
        let (eta, eps) = (params.eta, params.eps);
        let om = 1.0 - eps;
        let bf = params.b as f64;
        let a = c.a;
        let n1 = c.d_theta / bf + (bf - 1.0) / bf * a * a;
        let n0 = c.n_perp_bar - n1 * r_perp;
        let m = Matrix3::new(
            -2.0 * eta * eps * a + eta * eta * eps * eps * n1,
            eta * eta * om * om,
            -2.0 * eta * om + 2.0 * eta * eta * om * eps * a,
            eps * eps * n1,
            -(2.0 * eps - eps * eps),
            2.0 * om * eps * a,
            eps * a - eta * eps * eps * n1,
            -eta * om * om,
            -eps - 2.0 * eta * om * eps * a,
        );
        let forcing = Vector3::new(eta * eta * eps * eps * n0, eps * eps * n0, -eta * eps * eps * n0);
        let x = m
            .lu()
            .solve(&(-forcing))
            .ok_or_else(|| Error::NoConvergence {
                solver: "steady state",
                detail: "singular bulk matrix".into(),
            })?;
        Ok((x[0], LrState::new(s, c.f, x[0], x[1], x[2])))
    };
    let h = |r_perp: f64| bulk(r_perp).map(|(x, _)| x - r_perp).unwrap_or(f64::NAN);
    let h0 = h(0.0);
    if h0 == 0.0 {
        return Ok(bulk(0.0)?.1);
    }
    let mut hi = 1e-300_f64.max(bulk(0.0)?.0 * 2.0);
    let mut n = 0;
    while h(hi) > 0.0 {
        hi *= 2.0;
        n += 1;
        if hi > R_PERP_MAX || n > 2000 {
            return Err(Error::LeftTameRegime {
                detail: "steady-state R_perp exceeds the tame limit".into(),
            });
        }
    }
    let root = bisect_1d(h, 0.0, hi, 1e-15 * hi)?;
    Ok(bulk(root)?.1)
}

/// Logistic-regression phase-plane regions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrRegion {
    ConcentratedAbove,
    NoiseFloorAbove,
    NoiseFloorBelow,
    BoundaryE,
    BoundaryF,
}

impl LrRegion {
    pub const ALL: [LrRegion; 5] = [
        LrRegion::ConcentratedAbove,
        LrRegion::NoiseFloorAbove,
        LrRegion::NoiseFloorBelow,
        LrRegion::BoundaryE,
        LrRegion::BoundaryF,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            LrRegion::ConcentratedAbove => "concentrated-above",
            LrRegion::NoiseFloorAbove => "noise-floor-above",
            LrRegion::NoiseFloorBelow => "noise-floor-below",
            LrRegion::BoundaryE => "boundary-e",
            LrRegion::BoundaryF => "boundary-f",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.tag() == tag)
    }
}

impl std::fmt::Display for LrRegion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Classifies `(κ, σ, γ)` for the logistic model. The resonance line takes
/// precedence over the noise-character line where they meet.
pub fn classify_lr_region(e: &ScalingExponents) -> Result<LrRegion> {
    e.validate()?;
    let res = e.resonance_gamma();
    let noise_line = e.sigma - 1.0;
    if (e.gamma - res).abs() <= BOUNDARY_TOL {
        return Ok(LrRegion::BoundaryE);
    }
    if (e.kappa - noise_line).abs() <= BOUNDARY_TOL {
        return Ok(LrRegion::BoundaryF);
    }
    let above = e.gamma > res;
    if e.kappa < noise_line {
        if above {
            Ok(LrRegion::ConcentratedAbove)
        } else {
            Err(Error::UnsupportedRegion(
                "concentrated below resonance is empty: it forces gamma < 0".into(),
            ))
        }
    } else if above {
        Ok(LrRegion::NoiseFloorAbove)
    } else {
        Ok(LrRegion::NoiseFloorBelow)
    }
}

/// Regime-adapted learning-rate exponent: `γ − κ` above resonance and on
/// both boundaries, `1 − σ` below.
pub fn lr_alpha_eta(region: LrRegion, e: &ScalingExponents) -> f64 {
    match region {
        LrRegion::NoiseFloorBelow => 1.0 - e.sigma,
        _ => e.gamma - e.kappa,
    }
}

/// Instantiates logistic parameters at dimension `d`. An explicit
/// `alpha_eta` on the exponents overrides the regime-adapted value.
pub fn lr_instantiate(e: &ScalingExponents, c: &ScalingConstants, r: f64, d: u64) -> Result<LrParams> {
    let region = classify_lr_region(e)?;
    if d < 2 {
        return Err(Error::invalid("d", format!("{d} < 2")));
    }
    for (name, v) in [
        ("p_star", c.p_star),
        ("b_star", c.b_star),
        ("eps_star", c.eps_star),
        ("eta_star", c.eta_star),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(name, "must be positive and finite"));
        }
    }
    let df = d as f64;
    let p = c.p_star * df.powf(-e.kappa);
    if p >= 1.0 {
        return Err(Error::invalid("p", format!("{p} >= 1 at d = {d}")));
    }
    let b = (c.b_star * df.powf(e.sigma) * (1.0 - 1e-12)).ceil().max(1.0) as u64;
    let eps = (c.eps_star * df.powf(-e.gamma)).min(1.0);
    let alpha_eta = e.alpha_eta.unwrap_or_else(|| lr_alpha_eta(region, e));
    let eta = c.eta_star * df.powf(-alpha_eta);
    LrParams::new(r, p, b, eps, eta, d)
}

/// Per-region reduced system on the slow clock `τ = t / d^{clock_power}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReducedSystem {
    /// Coupled signal and bulk heavy-ball in `(s, u/p, R⊥, V⊥/p², C⊥/p)`:
    ///
    /// ```text
    /// ṡ = −η*p* ū                ū̇ = ε*[α(s+r) − r − ū]
    /// Ṙ = −2η*p* C̃               Ṽ̇ = −2ε* Ṽ + 2ε* α C̃
    /// C̃̇ = −ε* C̃ + ε* α R − η*p* Ṽ
    /// ```
    HeavyBall {
        eps_star: f64,
        eta_p_star: f64,
        r: f64,
        clock_power: f64,
    },
    /// Slow manifold in `(s, R⊥)`:
    ///
    /// ```text
    /// ṡ = −η*p* [α(s+r) − r],    Ṙ = −2η*p* α R + η*p* η_eff
    /// ```
    SlowManifold {
        eta_p_star: f64,
        eta_eff: f64,
        r: f64,
        clock_power: f64,
    },
    /// Resonance line in `(s, u d^κ, R⊥, V⊥ d^{2κ}, C⊥ d^κ)`:
    ///
    /// ```text
    /// ṡ = −η* ũ                  ũ̇ = ε*p*[α(s+r) − r] − ε* ũ
    /// Ṙ = −2η* C̃ + 1{γ=0}(η*²ε*²p*/B* + η*²ε*²p*²α² R)
    /// Ṽ̇ = −2ε* Ṽ + 2ε*p* α C̃ + ε*²p*/B* + 1{γ=0} ε*²p*²α² R
    /// C̃̇ = −ε* C̃ + ε*p* α R − η* Ṽ
    /// ```
    Resonance {
        eta_star: f64,
        eps_star: f64,
        p_star: f64,
        b_star: f64,
        r: f64,
        kappa: f64,
        clock_power: f64,
        corner: bool,
    },
}

/// Reduced system for a logistic region.
pub fn reduced_system(
    region: LrRegion,
    e: &ScalingExponents,
    c: &ScalingConstants,
    r: f64,
) -> Result<ReducedSystem> {
    let actual = classify_lr_region(e)?;
    if actual != region {
        return Err(Error::invalid(
            "region",
            format!("exponents classify as {actual}, not {region}"),
        ));
    }
    Ok(match region {
        LrRegion::ConcentratedAbove | LrRegion::NoiseFloorAbove | LrRegion::BoundaryF => {
            ReducedSystem::HeavyBall {
                eps_star: c.eps_star,
                eta_p_star: c.eta_star * c.p_star,
                r,
                clock_power: e.gamma,
            }
        }
        LrRegion::NoiseFloorBelow => ReducedSystem::SlowManifold {
            eta_p_star: c.eta_star * c.p_star,
            eta_eff: c.eta_star / c.b_star,
            r,
            clock_power: e.resonance_gamma(),
        },
        LrRegion::BoundaryE => ReducedSystem::Resonance {
            eta_star: c.eta_star,
            eps_star: c.eps_star,
            p_star: c.p_star,
            b_star: c.b_star,
            r,
            kappa: e.kappa,
            clock_power: e.gamma,
            corner: e.gamma.abs() <= BOUNDARY_TOL,
        },
    })
}

impl ReducedSystem {
    pub fn dim(&self) -> usize {
        match self {
            ReducedSystem::SlowManifold { .. } => 2,
            _ => 5,
        }
    }

    pub fn clock_power(&self) -> f64 {
        match *self {
            ReducedSystem::HeavyBall { clock_power, .. }
            | ReducedSystem::SlowManifold { clock_power, .. }
            | ReducedSystem::Resonance { clock_power, .. } => clock_power,
        }
    }

    fn r(&self) -> f64 {
        match *self {
            ReducedSystem::HeavyBall { r, .. }
            | ReducedSystem::SlowManifold { r, .. }
            | ReducedSystem::Resonance { r, .. } => r,
        }
    }

    /// Right-hand side; `x` has length [`ReducedSystem::dim`].
    pub fn rhs(&self, x: &[f64]) -> Vec<f64> {
        match *self {
            ReducedSystem::HeavyBall {
                eps_star,
                eta_p_star,
                r,
                ..
            } => {
                let (s, ub, rr, v, c) = (x[0], x[1], x[2], x[3], x[4]);
                let a = alpha(s, rr, r);
                vec![
                    -eta_p_star * ub,
                    eps_star * (a * (s + r) - r - ub),
                    -2.0 * eta_p_star * c,
                    -2.0 * eps_star * v + 2.0 * eps_star * a * c,
                    -eps_star * c + eps_star * a * rr - eta_p_star * v,
                ]
            }
            ReducedSystem::SlowManifold {
                eta_p_star,
                eta_eff,
                r,
                ..
            } => {
                let (s, rr) = (x[0], x[1]);
                let a = alpha(s, rr, r);
                vec![
                    -eta_p_star * (a * (s + r) - r),
                    -2.0 * eta_p_star * a * rr + eta_p_star * eta_eff,
                ]
            }
            ReducedSystem::Resonance {
                eta_star,
                eps_star,
                p_star,
                b_star,
                r,
                corner,
                ..
            } => {
                let (s, ut, rr, v, c) = (x[0], x[1], x[2], x[3], x[4]);
                let a = alpha(s, rr, r);
                let ind = if corner { 1.0 } else { 0.0 };
                let e2 = eps_star * eps_star;
                let mult = p_star * p_star * a * a * rr;
                vec![
                    -eta_star * ut,
                    eps_star * p_star * (a * (s + r) - r) - eps_star * ut,
                    -2.0 * eta_star * c + ind * eta_star * eta_star * e2 * (p_star / b_star + mult),
                    -2.0 * eps_star * v + 2.0 * eps_star * p_star * a * c + e2 * p_star / b_star
                        + ind * e2 * mult,
                    -eps_star * c + eps_star * p_star * a * rr - eta_star * v,
                ]
            }
        }
    }

    /// Scale factors mapping `(s, u, R⊥, V⊥, C⊥)` of a finite-`d` instance to
    /// reduced coordinates (the 2D system keeps `s` and `R⊥`).
    pub fn scales(&self, params: &LrParams) -> [f64; 5] {
        match *self {
            ReducedSystem::HeavyBall { .. } | ReducedSystem::SlowManifold { .. } => {
                let p = params.p;
                [1.0, 1.0 / p, 1.0, 1.0 / (p * p), 1.0 / p]
            }
            ReducedSystem::Resonance { kappa, .. } => {
                let k = (params.d as f64).powf(kappa);
                [1.0, k, 1.0, k * k, k]
            }
        }
    }

    /// Reduced coordinates of a full state.
    pub fn reduce(&self, state: &LrState, params: &LrParams) -> Vec<f64> {
        let sc = self.scales(params);
        let x = state.as_array();
        match self {
            ReducedSystem::SlowManifold { .. } => vec![x[0], x[2]],
            _ => (0..5).map(|i| x[i] * sc[i]).collect(),
        }
    }

    /// Integrates the reduced system on the slow clock.
    pub fn evolve(&self, initial: &[f64], taus: &[f64]) -> Result<Vec<Vec<f64>>> {
        if initial.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "initial state has {} entries, system has {}",
                initial.len(),
                self.dim()
            )));
        }
        let r = self.r();
        let guard = |s: f64, rr: f64| -> Result<()> {
            if rr > R_PERP_MAX || (s + r).abs() > THETA_PAR_MAX {
                return Err(Error::LeftTameRegime {
                    detail: "reduced trajectory left the tame box".into(),
                });
            }
            Ok(())
        };
        let opts = RkOptions::default();
        match self.dim() {
            2 => {
                let (ys, _) = integrate(
                    |_, y: &[f64; 2]| {
                        guard(y[0], y[1])?;
                        let v = self.rhs(y);
                        Ok([v[0], v[1]])
                    },
                    [initial[0], initial[1]],
                    taus,
                    &opts,
                )?;
                Ok(ys.iter().map(|y| y.to_vec()).collect())
            }
            _ => {
                let y0 = [initial[0], initial[1], initial[2], initial[3], initial[4]];
                let (ys, _) = integrate(
                    |_, y: &[f64; 5]| {
                        guard(y[0], y[2])?;
                        let v = self.rhs(y);
                        Ok([v[0], v[1], v[2], v[3], v[4]])
                    },
                    y0,
                    taus,
                    &opts,
                )?;
                Ok(ys.iter().map(|y| y.to_vec()).collect())
            }
        }
    }

    /// Square-root lift `(s, ū, x, y)` of the heavy-ball bulk, with
    /// `R = x²`, `Ṽ = y²`, `C̃ = xy`:
    ///
    /// ```text
    /// ẋ = −η*p* y,    ẏ = −ε* y + ε* α(s, x²) x
    /// ```
    pub fn volterra_rhs(&self, z: &[f64; 4]) -> Result<[f64; 4]> {
        match *self {
            ReducedSystem::HeavyBall {
                eps_star,
                eta_p_star,
                r,
                ..
            } => {
                let (s, ub, x, y) = (z[0], z[1], z[2], z[3]);
                let a = alpha(s, x * x, r);
                Ok([
                    -eta_p_star * ub,
                    eps_star * (a * (s + r) - r - ub),
                    -eta_p_star * y,
                    -eps_star * y + eps_star * a * x,
                ])
            }
            _ => Err(Error::UnsupportedRegion(
                "the square-root lift exists only for the heavy-ball system".into(),
            )),
        }
    }
}

/// Full five-variable trajectory next to its reduced system on a shared
/// slow-clock grid.
#[derive(Clone, Debug)]
pub struct ReducedComparison {
    pub region: LrRegion,
    pub system: ReducedSystem,
    pub params: LrParams,
    pub taus: Vec<f64>,
    pub full: Vec<LrState>,
    pub reduced: Vec<Vec<f64>>,
    /// `sup_τ |s_full − s_red| / sup_τ |s_red|`.
    pub err_s: f64,
    /// `sup_τ |R_full − R_red| / sup_τ |R_red|`.
    pub err_r: f64,
}

/// Integrates the full ODE at dimension `d` from `(s0, 0, R0, 0, 0)` and the
/// reduced system from the matching reduced state, then compares `s` and
/// `R⊥` in sup norm relative to the reduced trajectory.
#[allow(clippy::too_many_arguments)]
pub fn compare_reduced(
    e: &ScalingExponents,
    c: &ScalingConstants,
    r: f64,
    d: u64,
    s0: f64,
    r0: f64,
    taus: &[f64],
    mode: CoeffMode,
) -> Result<ReducedComparison> {
    let region = classify_lr_region(e)?;
    let system = reduced_system(region, e, c, r)?;
    let params = lr_instantiate(e, c, r, d)?;
    let start = LrState::at_rest(s0, r0);
    let clock = (d as f64).powf(system.clock_power());
    let times: Vec<f64> = taus.iter().map(|t| t * clock).collect();
    let full = evolve_5var(&start, &params, &times, mode)?.states;
    let reduced = system.evolve(&system.reduce(&start, &params), taus)?;
    let r_index = if system.dim() == 2 { 1 } else { 2 };
    let rel = |a: &dyn Fn(usize) -> f64, b: &dyn Fn(usize) -> f64| {
        let num = (0..taus.len()).map(|i| (a(i) - b(i)).abs()).fold(0.0, f64::max);
        let den = (0..taus.len()).map(|i| b(i).abs()).fold(0.0, f64::max);
        num / den
    };
    let err_s = rel(&|i| full[i].s, &|i| reduced[i][0]);
    let err_r = rel(&|i| full[i].r_perp, &|i| reduced[i][r_index]);
    Ok(ReducedComparison {
        region,
        system,
        params,
        taus: taus.to_vec(),
        full,
        reduced,
        err_s,
        err_r,
    })
}

/// Linearized heavy-ball signal block `(s, ũ)` at the optimum:
/// `ṡ = −ε*η̄ ũ`, `ũ̇ = ε*[α*(1+r²) s − ũ]`.
pub fn signal_linearized_matrix(eps_star: f64, eta_bar: f64, alpha_star: f64, r: f64) -> Matrix2<f64> {
    Matrix2::new(
        0.0,
        -eps_star * eta_bar,
        eps_star * alpha_star * (1.0 + r * r),
        -eps_star,
    )
}

/// `η̄ α* (1 + r²) > 1/4`.
pub fn signal_underdamped(eta_bar: f64, alpha_star: f64, r: f64) -> bool {
    eta_bar * alpha_star * (1.0 + r * r) > 0.25
}

/// Equilibrium of the slow manifold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlowEquilibrium {
    pub s_star: f64,
    pub r_star: f64,
    pub alpha_star: f64,
}

/// Residuals of `α(s+r) = r`, `R = η_eff/(2α)` and
/// `α = exp(((s+r)² + R − r²)/2)`.
pub fn equilibrium_residuals(eq: &SlowEquilibrium, r: f64, eta_eff: f64) -> [f64; 3] {
    [
        eq.alpha_star * (eq.s_star + r) - r,
        eq.r_star - eta_eff / (2.0 * eq.alpha_star),
        eq.alpha_star - alpha(eq.s_star, eq.r_star, r),
    ]
}

/// Solves `2 log α = r²(1/α² − 1) + η_eff/(2α)` by Newton from `α = 1`,
/// with bisection as a fallback.
pub fn equilibrium_slow(r: f64, eta_eff: f64) -> Result<SlowEquilibrium> {
    if !(eta_eff > 0.0 && eta_eff < 2.0) {
        return Err(Error::invalid("eta_eff", format!("{eta_eff} is outside (0, 2)")));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::invalid("r", "must be positive"));
    }
    let g = |a: f64| 2.0 * a.ln() - r * r * (1.0 / (a * a) - 1.0) - eta_eff / (2.0 * a);
    let dg = |a: f64| 2.0 / a + 2.0 * r * r / (a * a * a) + eta_eff / (2.0 * a * a);
    let a = match newton_1d(g, dg, 1.0, 1e-15, 100) {
        Ok(a) if a > 0.0 => a,
        _ => {
            // g is increasing on (0, ∞) with g(1) < 0.
            let mut hi = 2.0;
            while g(hi) < 0.0 {
                hi *= 2.0;
            }
            bisect_1d(g, 1.0, hi, 1e-15).map_err(|_| Error::NoConvergence {
                solver: "equilibrium_slow",
                detail: "no root after 100 Newton iterations or bisection".into(),
            })?
        }
    };
    let eq = SlowEquilibrium {
        s_star: r * (1.0 / a - 1.0),
        r_star: eta_eff / (2.0 * a),
        alpha_star: a,
    };
    let res = equilibrium_residuals(&eq, r, eta_eff);
    if res.iter().any(|x| x.abs() > 1e-10) {
        return Err(Error::NoConvergence {
            solver: "equilibrium_slow",
            detail: format!("residuals {res:?}"),
        });
    }
    Ok(eq)
}

/// Leading-order floor: root of `R e^{R/(2(1+r²))} = η_eff/2`.
pub fn leading_floor(r: f64, eta_eff: f64) -> Result<f64> {
    let k = 1.0 / (2.0 * (1.0 + r * r));
    let target = 0.5 * eta_eff;
    bisect_1d(|x| x * (k * x).exp() - target, 0.0, target.max(1e-300), 1e-16)
}

/// Jacobian of the slow manifold with its eigenvalues.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlowJacobian {
    pub matrix: Matrix2<f64>,
    pub eigenvalues: [f64; 2],
    pub discriminant: f64,
}

impl SlowJacobian {
    fn from_matrix(m: Matrix2<f64>) -> Self {
        let tr = m.trace();
        let det = m.determinant();
        let disc = tr * tr - 4.0 * det;
        let sq = disc.max(0.0).sqrt();
        Self {
            matrix: m,
            eigenvalues: [0.5 * (tr + sq), 0.5 * (tr - sq)],
            discriminant: disc,
        }
    }
}

/// Exact Jacobian of the slow manifold at `(s, R⊥)`, with `c = η*p*`:
///
/// ```text
/// [ −cα(1 + (s+r)²)     −c(s+r)α/2    ]
/// [ −2cR(s+r)α          −2cα(1 + R/2) ]
/// ```
pub fn jacobian_slow(s: f64, r_perp: f64, eta_p_star: f64, r: f64) -> SlowJacobian {
    let a = alpha(s, r_perp, r);
    let t = s + r;
    let c = eta_p_star;
    SlowJacobian::from_matrix(Matrix2::new(
        -c * a * (1.0 + t * t),
        -c * t * a / 2.0,
        -2.0 * c * r_perp * t * a,
        -2.0 * c * a * (1.0 + r_perp / 2.0),
    ))
}

/// Leading-order Jacobian at the equilibrium,
/// `−η*p*α* [[1+r², r/2], [2rR*, 2(1+R*/2)]]`, exact when `α* = 1`.
pub fn jacobian_slow_leading(eq: &SlowEquilibrium, eta_p_star: f64, r: f64) -> SlowJacobian {
    let k = -eta_p_star * eq.alpha_star;
    SlowJacobian::from_matrix(Matrix2::new(
        k * (1.0 + r * r),
        k * r / 2.0,
        k * 2.0 * r * eq.r_star,
        k * 2.0 * (1.0 + eq.r_star / 2.0),
    ))
}

/// Binary KL `σ(a)(a − c) + φ(c) − φ(a)`, `φ = softplus`.
///
/// With `Δ = c − a` this is `log1p(σ(a)·expm1(Δ)) − σ(a)Δ`. For small `|Δ|`
/// the Taylor series of `φ` about `a` through fifth order is used instead,
/// since the two terms cancel to `O(Δ²)`.
pub fn binary_kl(a: f64, c: f64) -> f64 {
    binary_kl_gap(a, c - a)
}

/// Binary KL between logits `a` and `a + delta`. Passing the gap directly
/// avoids the roundoff of forming `c − a` when both logits are large.
pub fn binary_kl_gap(a: f64, delta: f64) -> f64 {
    let c = a + delta;
    let s = sigmoid(a);
    if delta.abs() < 1e-3 {
        let ds = s * sigmoid(-a);
        let t = 1.0 - 2.0 * s;
        let d2 = ds;
        let d3 = ds * t;
        let d4 = ds * (1.0 - 6.0 * s * (1.0 - s));
        let d5 = ds * t * (1.0 - 12.0 * s * (1.0 - s));
        let x = delta;
        return (x * x * (d2 / 2.0 + x * (d3 / 6.0 + x * (d4 / 24.0 + x * d5 / 120.0)))).max(0.0);
    }
    let direct = if s * delta.exp_m1() > -1.0 && delta < 30.0 {
        (s * delta.exp_m1()).ln_1p() - s * delta
    } else {
        softplus(c) - softplus(a) - s * delta
    };
    direct.max(0.0)
}

fn kl_with(s: f64, r_perp: f64, params: &LrParams, qr: &QuadratureRule) -> f64 {
    let r = params.r;
    let b = params.b_star;
    let sr = r_perp.max(0.0).sqrt();
    let k1 = qr.expect_std_normal_2d(|xi, zeta| binary_kl_gap(r * xi + b, s * xi + sr * zeta));
    let k2 = qr.expect_std_normal_2d(|xi, zeta| {
        binary_kl_gap(r * r + r * xi + b, s * (r + xi) + sr * zeta)
    });
    (1.0 - params.p) * k1 + params.p * k2
}

/// Population KL from the Bayes conditional, by 40×40 Gauss–Hermite with a
/// 64×64 cross-check.
pub fn kl_pop(s: f64, r_perp: f64, params: &LrParams) -> Result<f64> {
    params.validate()?;
    if r_perp < 0.0 || !s.is_finite() {
        return Err(Error::invalid("state", "R_perp must be >= 0 and s finite"));
    }
    if s == 0.0 && r_perp == 0.0 {
        return Ok(0.0);
    }
    let lo = kl_with(s, r_perp, params, rule(40));
    let hi = kl_with(s, r_perp, params, rule(64));
    if (lo - hi).abs() > QUADRATURE_TOL * hi.abs().max(1e-300) {
        return Err(Error::NoConvergence {
            solver: "kl quadrature",
            detail: format!("40x40 = {lo:e}, 64x64 = {hi:e}"),
        });
    }
    Ok(hi)
}

/// Small-error expansion `½ p α* [(1 + r²) s² + R⊥]`.
pub fn kl_quadratic(s: f64, r_perp: f64, p: f64, r: f64, alpha_star: f64) -> f64 {
    0.5 * p * alpha_star * ((1.0 + r * r) * s * s + r_perp)
}

/// `lim KL/p = α(s, R) − 1 − s r`.
pub fn kl_normalized_limit(s: f64, r_perp: f64, r: f64) -> f64 {
    alpha(s, r_perp, r) - 1.0 - s * r
}

/// One cell of the logistic heatmaps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub kappa: f64,
    pub gamma: f64,
    pub region_tag: String,
    /// Equilibrium `R⊥*` at and below resonance, the floor exponent
    /// `1 − σ + κ − 2γ` above resonance and on the noise-character line,
    /// 0 in the concentrated region, NaN in the empty corner.
    pub floor_value_or_exponent: f64,
    #[serde(rename = "T_exponent")]
    pub t_exponent: f64,
}

/// Limit-loss and convergence-time maps over a `(κ, γ)` grid.
pub fn lr_heatmaps(
    kappas: &[f64],
    gammas: &[f64],
    sigma: f64,
    c: &ScalingConstants,
    r: f64,
) -> Result<Vec<HeatmapCell>> {
    let eta_eff = c.eta_star / c.b_star;
    let below = equilibrium_slow(r, eta_eff)?;
    let cells: Vec<(f64, f64)> = kappas
        .iter()
        .flat_map(|&k| gammas.iter().map(move |&g| (k, g)))
        .collect();
    cells
        .par_iter()
        .map(|&(kappa, gamma)| {
            let e = ScalingExponents::new(kappa, sigma, gamma);
            let t_exponent = gamma.max(1.0 - sigma + kappa);
            let (tag, floor) = match classify_lr_region(&e) {
                Ok(region) => {
                    let floor = match region {
                        LrRegion::ConcentratedAbove => 0.0,
                        LrRegion::NoiseFloorAbove | LrRegion::BoundaryF => {
                            1.0 - sigma + kappa - 2.0 * gamma
                        }
                        LrRegion::NoiseFloorBelow | LrRegion::BoundaryE => below.r_star,
                    };
                    (region.tag().to_string(), floor)
                }
                Err(Error::UnsupportedRegion(_)) => ("empty".to_string(), f64::NAN),
                Err(other) => return Err(other),
            };
            Ok(HeatmapCell {
                kappa,
                gamma,
                region_tag: tag,
                floor_value_or_exponent: floor,
                t_exponent,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-16);
        assert!((sigmoid(-40.0) - (-40.0f64).exp()).abs() < 1e-30);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn binary_kl_branches_agree() {
        for a in [-9.0, -1.0, 0.0, 2.5] {
            for delta in [-0.5f64, -2e-3, 2e-3, 0.7, 5.0] {
                let sa = sigmoid(a);
                let reference = (sa * delta.exp_m1()).ln_1p() - sa * delta;
                let got = binary_kl_gap(a, delta);
                assert!((got - reference).abs() < 1e-9 * reference, "a={a} Δ={delta}");
            }
            let small = binary_kl_gap(a, 1e-6);
            let quad = 0.5 * sigmoid(a) * sigmoid(-a) * 1e-12;
            assert!((small - quad).abs() < 1e-5 * quad);
        }
    }

    #[test]
    fn calibration_identity() {
        let params = LrParams::new(1.5, 0.02, 4, 0.1, 0.1, 50).unwrap();
        let c = coefficients_exact(&LrState::default(), &params).unwrap();
        assert!((c.a + c.b_coef).abs() < 1e-12 * c.a.abs());
        assert!(c.f.abs() < 1e-12);
    }

    #[test]
    fn lr_regions() {
        let cls = |k, g| classify_lr_region(&ScalingExponents::new(k, 1.6, g));
        assert_eq!(cls(0.5, 2.0).unwrap(), LrRegion::ConcentratedAbove);
        assert_eq!(cls(1.2, 1.0).unwrap(), LrRegion::NoiseFloorAbove);
        assert_eq!(cls(1.2, 0.4).unwrap(), LrRegion::NoiseFloorBelow);
        assert_eq!(cls(1.2, 0.6).unwrap(), LrRegion::BoundaryE);
        assert_eq!(cls(0.6, 1.0).unwrap(), LrRegion::BoundaryF);
        // Below the noise-character line the resonance exponent is negative.
        assert_eq!(cls(0.2, 0.0).unwrap(), LrRegion::ConcentratedAbove);
    }
}
