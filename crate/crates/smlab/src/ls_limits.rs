//! High-dimensional limits of the least-squares moment ODE.
//!
//! Each region of the phase plane has a limiting system on a slow clock
//! `τ = t / d^{clock_power}`. With `η̄ = η* p* / ε*`, `P* = 1 − e^{−p*B*}` and
//! `χ* = p*B*/P*`:
//!
//! ```text
//! scalar SGD           R' = −c_eff R
//!     dense below      c_eff = η*p*(2 − η*/B*)                     clock 1−σ+κ
//!     sparse / memoryless  c_eff = (η*/B*)(2 − η*/B*)              clock 1
//!     κ=σ below        c_eff = χ* (η*/B*)(2 − η*/B*)               clock 1
//!
//! heavy ball           x' = −r η̄ y,   y' = r (x − y),   (R,V,C) = (x², y², xy)
//!     concentrated, dense above   r = ε*                           clock γ
//!     sparse above                r = ε*/(p*B*)                    clock γ−κ+σ
//!     κ=σ above                   r = ε*/P*                        clock γ
//!
//! resonance            R' = −2ρη̄ C
//!                      V' = −2ρ V + 2ρ C + ξ R
//!                      C' =  ρ R − ρη̄ V − ρ C
//!     dense half       ρ = ε*,          ξ = ε*²/(p*B*)             clock γ
//!     sparse half      ρ = ε*/(p*B*),   ξ = ρ²                     clock 1
//!     triple point     ρ = ε*/P*,       ξ = ε*²/(P* p*B*)          clock 1
//! ```
//!
//! On the whole resonance line `ζ = ξ/ρ = ε*/(p*B*)`, and the normalized
//! characteristic polynomial is `μ³ + 3μ² + (2+4η̄)μ + 2η̄(2 − η̄ζ)`, stable
//! iff `η* < 2B*`.
//!
//! Main-ODE trajectories are compared with a limit after the diagonal
//! balancing `D(d)` of the scaled `(R, W, Z)` coordinates. Starting from
//! `(R0, 0, 0)` the balanced, normalized coordinates are
//!
//! ```text
//! R/R0,    V̂ = W D_R / (D_W R0),    Ĉ = Z D_R / (D_Z R0).
//! ```

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ls_moment_ode::{build_main_matrix, evolve_linear, MomentState, ScaledTransform};
use crate::numerics::{cubic_roots, LinearFlow, RngStream, Welford};
use crate::scaling::{
    classify_region, instantiate, InstanceParams, Region, ScalingConstants, ScalingExponents,
};
use crate::stability::{routh_hurwitz, StabilityVerdict};
use crate::trajectory::{Clock, Trajectory, TrajectoryMeta};

/// Per-region limiting dynamical system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LimitSystem {
    Sgd1D {
        c_eff: f64,
        clock_power: f64,
    },
    HeavyBall2D {
        rate: f64,
        eta_bar: f64,
        clock_power: f64,
    },
    Resonance3D {
        rho_star: f64,
        eta_bar: f64,
        xi_star: f64,
        clock_power: f64,
    },
}

impl LimitSystem {
    pub fn clock_power(&self) -> f64 {
        match *self {
            LimitSystem::Sgd1D { clock_power, .. }
            | LimitSystem::HeavyBall2D { clock_power, .. }
            | LimitSystem::Resonance3D { clock_power, .. } => clock_power,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LimitSystem::Sgd1D { .. } => "sgd-1d",
            LimitSystem::HeavyBall2D { .. } => "heavy-ball-2d",
            LimitSystem::Resonance3D { .. } => "resonance-3d",
        }
    }

    /// Limit drift on the `(R, V, C)` moments. The scalar law is embedded as
    /// `diag(−c_eff, 0, 0)`.
    pub fn moment_matrix(&self) -> Matrix3<f64> {
        match *self {
            LimitSystem::Sgd1D { c_eff, .. } => {
                Matrix3::new(-c_eff, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
            }
            LimitSystem::HeavyBall2D { rate, eta_bar, .. } => {
                resonance_matrix(rate, eta_bar, 0.0)
            }
            LimitSystem::Resonance3D {
                rho_star,
                eta_bar,
                xi_star,
                ..
            } => resonance_matrix(rho_star, eta_bar, xi_star),
        }
    }

    /// Moment right-hand side at `s`.
    pub fn moment_rhs(&self, s: &MomentState) -> MomentState {
        MomentState::from_vector(&(self.moment_matrix() * s.as_vector()))
    }

    /// `ζ = ξ/ρ` of a resonance system.
    pub fn zeta(&self) -> Option<f64> {
        match *self {
            LimitSystem::Resonance3D {
                rho_star, xi_star, ..
            } => Some(xi_star / rho_star),
            _ => None,
        }
    }

    /// Characteristic coefficients `(a1, a2, a3)` of the moment matrix of a
    /// 2D or 3D system.
    pub fn char_coeffs(&self) -> (f64, f64, f64) {
        let (rho, eta_bar, zeta) = match *self {
            LimitSystem::Sgd1D { c_eff, .. } => return (c_eff, 0.0, 0.0),
            LimitSystem::HeavyBall2D { rate, eta_bar, .. } => (rate, eta_bar, 0.0),
            LimitSystem::Resonance3D {
                rho_star,
                eta_bar,
                xi_star,
                ..
            } => (rho_star, eta_bar, xi_star / rho_star),
        };
        (
            3.0 * rho,
            rho * rho * (2.0 + 4.0 * eta_bar),
            2.0 * rho.powi(3) * eta_bar * (2.0 - eta_bar * zeta),
        )
    }

    /// Routh–Hurwitz verdict of the moment matrix.
    pub fn hurwitz(&self) -> StabilityVerdict {
        let (a1, a2, a3) = self.char_coeffs();
        routh_hurwitz(a1, a2, a3)
    }

    /// Slowest decay rate of the squared error, used to size comparison windows.
    pub fn slowest_rate(&self) -> f64 {
        match *self {
            LimitSystem::Sgd1D { c_eff, .. } => c_eff,
            _ => {
                let (a1, a2, a3) = self.char_coeffs();
                cubic_roots(a1, a2, a3)
                    .iter()
                    .map(|z| -z.re)
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }
}

fn resonance_matrix(rho: f64, eta_bar: f64, xi: f64) -> Matrix3<f64> {
    Matrix3::new(
        0.0,
        0.0,
        -2.0 * rho * eta_bar,
        xi,
        -2.0 * rho,
        2.0 * rho,
        rho,
        -rho * eta_bar,
        -rho,
    )
}

/// Normalized resonance cubic `μ³ + 3μ² + (2+4η̄)μ + 2η̄(2 − η̄ζ)` (μ = λ/ρ).
pub fn resonance_normalized_poly(eta_bar: f64, zeta: f64) -> (f64, f64, f64) {
    (3.0, 2.0 + 4.0 * eta_bar, 2.0 * eta_bar * (2.0 - eta_bar * zeta))
}

/// Discriminant `4((1−4η̄)³ − 27η̄⁴ζ²)` of the normalized resonance cubic.
/// Positive means three real roots.
pub fn resonance_discriminant(eta_bar: f64, zeta: f64) -> f64 {
    4.0 * ((1.0 - 4.0 * eta_bar).powi(3) - 27.0 * eta_bar.powi(4) * zeta * zeta)
}

/// `P* = 1 − e^{−p*B*}`.
pub fn p_batch_star(c: &ScalingConstants) -> f64 {
    -(-c.p_star * c.b_star).exp_m1()
}

/// `χ* = p*B*/P*`, with its limit 1 as `p*B* → 0`.
pub fn chi_star(c: &ScalingConstants) -> f64 {
    let x = c.p_star * c.b_star;
    if x < 1e-12 {
        1.0 + x / 2.0
    } else {
        x / -(-x).exp_m1()
    }
}

/// Limit system for a scaling point.
pub fn select_limit(e: &ScalingExponents, c: &ScalingConstants) -> Result<LimitSystem> {
    e.validate()?;
    c.validate(e)?;
    let region = classify_region(e);
    let eta_bar = c.eta_star * c.p_star / c.eps_star;
    let pb = c.p_star * c.b_star;
    let p_star_batch = p_batch_star(c);
    let ratio = c.eta_star / c.b_star;
    let sgd = ratio * (2.0 - ratio);
    Ok(match region {
        Region::A | Region::C => LimitSystem::HeavyBall2D {
            rate: c.eps_star,
            eta_bar,
            clock_power: e.gamma,
        },
        Region::F => LimitSystem::HeavyBall2D {
            rate: c.eps_star / pb,
            eta_bar,
            clock_power: e.gamma - (e.kappa - e.sigma),
        },
        Region::KappaEqSigmaAbove => LimitSystem::HeavyBall2D {
            rate: c.eps_star / p_star_batch,
            eta_bar,
            clock_power: e.gamma,
        },
        Region::B => LimitSystem::Sgd1D {
            c_eff: c.eta_star * c.p_star * (2.0 - ratio),
            clock_power: e.resonance_gamma(),
        },
        Region::D | Region::E => LimitSystem::Sgd1D {
            c_eff: sgd,
            clock_power: 1.0,
        },
        Region::KappaEqSigmaBelow => LimitSystem::Sgd1D {
            c_eff: chi_star(c) * sgd,
            clock_power: 1.0,
        },
        Region::ResonanceDense => LimitSystem::Resonance3D {
            rho_star: c.eps_star,
            eta_bar,
            xi_star: c.eps_star * c.eps_star / pb,
            clock_power: e.gamma,
        },
        Region::ResonanceSparse => {
            let rho = c.eps_star / pb;
            LimitSystem::Resonance3D {
                rho_star: rho,
                eta_bar,
                xi_star: rho * rho,
                clock_power: 1.0,
            }
        }
        Region::TriplePoint => LimitSystem::Resonance3D {
            rho_star: c.eps_star / p_star_batch,
            eta_bar,
            xi_star: c.eps_star * c.eps_star / (p_star_batch * pb),
            clock_power: 1.0,
        },
        Region::NoiseCharacterLine => {
            return Err(Error::UnsupportedRegion(
                "noise-character line: limit constants are only available in the strict interior"
                    .into(),
            ))
        }
    })
}

/// Exact propagator `e^{At}` of a real 2×2 matrix, valid through the
/// critically damped case.
pub fn expm2(a: &Matrix2<f64>, t: f64) -> Matrix2<f64> {
    let mu = 0.5 * a.trace();
    let det = a.determinant();
    let disc = mu * mu - det;
    let shifted = a - Matrix2::identity() * mu;
    let (ch, sh_over) = if disc > 0.0 {
        let s = disc.sqrt();
        let x = s * t;
        (x.cosh(), if s == 0.0 { t } else { x.sinh() / s })
    } else if disc < 0.0 {
        let w = (-disc).sqrt();
        let x = w * t;
        (x.cos(), x.sin() / w)
    } else {
        (1.0, t)
    };
    (Matrix2::identity() * ch + shifted * sh_over) * (mu * t).exp()
}

/// Evolves a limit system from moment initial data on a slow-time grid.
///
/// For the heavy-ball system, initial data on the manifold `C² = RV` use the
/// square-root lift `(x, y)` with `R = x²`, `V = y²`, `C = xy`. Other initial
/// data evolve under the equivalent 3D moment system.
pub fn evolve_limit(
    system: &LimitSystem,
    initial: &MomentState,
    taus: &[f64],
) -> Result<Trajectory<MomentState>> {
    let clock = Clock::Slow {
        power: system.clock_power(),
    };
    let states: Vec<MomentState> = match *system {
        LimitSystem::Sgd1D { c_eff, .. } => taus
            .iter()
            .map(|&t| MomentState::new(initial.r * (-c_eff * t).exp(), 0.0, 0.0))
            .collect(),
        LimitSystem::HeavyBall2D { rate, eta_bar, .. } => {
            let on_manifold = initial.r >= 0.0
                && initial.v >= 0.0
                && (initial.c * initial.c - initial.r * initial.v).abs()
                    <= 1e-12 * (initial.r * initial.v).max(1e-300);
            if on_manifold && initial.r > 0.0 {
                let x0 = initial.r.sqrt();
                let y0 = initial.c / x0;
                let a = Matrix2::new(0.0, -rate * eta_bar, rate, -rate);
                taus.iter()
                    .map(|&t| {
                        let xy = expm2(&a, t) * Vector2::new(x0, y0);
                        MomentState::new(xy[0] * xy[0], xy[1] * xy[1], xy[0] * xy[1])
                    })
                    .collect()
            } else {
                let flow = LinearFlow::new(&system.moment_matrix());
                taus.iter()
                    .map(|&t| MomentState::from_vector(&flow.apply(t, &initial.as_vector())))
                    .collect()
            }
        }
        LimitSystem::Resonance3D { .. } => {
            if !system.hurwitz().stable {
                return Err(Error::Unstable {
                    time: 0.0,
                    threshold: f64::INFINITY,
                });
            }
            let flow = LinearFlow::new(&system.moment_matrix());
            taus.iter()
                .map(|&t| MomentState::from_vector(&flow.apply(t, &initial.as_vector())))
                .collect()
        }
    };
    Trajectory::new(
        clock,
        taus.to_vec(),
        states,
        TrajectoryMeta {
            solver: Some(system.kind().to_string()),
            ..Default::default()
        },
    )
}

/// Diagonal balancing of the scaled `(R, W, Z)` coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalancingTransform {
    pub diag: [f64; 3],
    pub clock_power: f64,
}

/// Balancing for regions with a 2D or 3D limit.
pub fn balancing_transform(
    region: Region,
    e: &ScalingExponents,
    params: &InstanceParams,
) -> Result<BalancingTransform> {
    let bf = params.batch_factors();
    let rho = params.rho();
    let (d, p, b) = (params.d as f64, params.p, params.b as f64);
    let r2 = rho * rho;
    let (diag, clock_power) = match region {
        Region::C | Region::ResonanceDense => ([r2 * d / (b * p), 1.0, r2 * d / b], e.gamma),
        Region::A => ([r2, 1.0, r2 * p], e.gamma),
        Region::F => ([r2 * d, 1.0, r2 * d / b], e.gamma - (e.kappa - e.sigma)),
        Region::ResonanceSparse => ([r2 * d, 1.0, r2 * d / b], 1.0),
        Region::TriplePoint | Region::KappaEqSigmaAbove => (
            [r2 * d * bf.p_batch / (p * b), 1.0, r2 * d / b],
            e.gamma,
        ),
        other => {
            return Err(Error::UnsupportedRegion(format!(
                "region {other} has no balanced multi-dimensional limit"
            )))
        }
    };
    if diag.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::invalid("params", "balancing entries must be positive and finite"));
    }
    Ok(BalancingTransform { diag, clock_power })
}

impl BalancingTransform {
    /// `D⁻¹ (d^{clock_power} S) D` for a scaled main matrix `S`.
    pub fn balance_matrix(&self, scaled: &Matrix3<f64>, d: f64) -> Matrix3<f64> {
        let mut out = scaled * d.powf(self.clock_power);
        for i in 0..3 {
            for j in 0..3 {
                out[(i, j)] *= self.diag[j] / self.diag[i];
            }
        }
        out
    }
}

/// Main ODE rescaled into limit coordinates at one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct RescaledMain {
    pub region: Region,
    pub params: InstanceParams,
    /// Normalized `(R/R0, V̂, Ĉ)` on the limit's slow clock. For scalar limits
    /// only the first component is meaningful and the others are zero.
    pub trajectory: Trajectory<MomentState>,
    pub has_momentum_coordinates: bool,
}

/// Runs the main ODE from `(R0, 0, 0)` and maps it into the limit's
/// normalized coordinates on the slow grid `taus`.
pub fn rescaled_main(
    e: &ScalingExponents,
    c: &ScalingConstants,
    d: u64,
    taus: &[f64],
    r0: f64,
) -> Result<RescaledMain> {
    let region = classify_region(e);
    let limit = select_limit(e, c)?;
    let params = instantiate(e, c, d)?.params;
    let m = build_main_matrix(&params)?;
    let power = limit.clock_power();
    let df = d as f64;
    let ts: Vec<f64> = taus.iter().map(|&t| t * df.powf(power)).collect();
    let raw = evolve_linear(&m, &MomentState::new(r0, 0.0, 0.0), &ts)?;
    let (states, has_mc) = match limit {
        LimitSystem::Sgd1D { .. } => (
            raw.states
                .iter()
                .map(|s| MomentState::new(s.r / r0, 0.0, 0.0))
                .collect(),
            false,
        ),
        _ => {
            let bt = balancing_transform(region, e, &params)?;
            let st = ScaledTransform::for_matrix(&m)?;
            let [dr, dw, dz] = bt.diag;
            (
                raw.states
                    .iter()
                    .map(|s| {
                        let [r, w, z] = st.to_scaled(s);
                        MomentState::new(r / r0, w * dr / (dw * r0), z * dr / (dz * r0))
                    })
                    .collect(),
                true,
            )
        }
    };
    let trajectory = Trajectory::new(
        Clock::Slow { power },
        taus.to_vec(),
        states,
        TrajectoryMeta {
            params: Some(params),
            seed: None,
            solver: raw.meta.solver.clone(),
        },
    )?;
    Ok(RescaledMain {
        region,
        params,
        trajectory,
        has_momentum_coordinates: has_mc,
    })
}

/// Sup-norm relative error `max|a − b| / max|b|` over two equal-length series.
pub fn sup_relative_error(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "series of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let num = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    Ok(if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    })
}

/// Default comparison window: evenly spaced slow times up to four e-folds of
/// the slowest limit mode.
pub fn default_tau_grid(system: &LimitSystem, n: usize) -> Vec<f64> {
    let end = 4.0 / system.slowest_rate();
    (0..n).map(|i| end * i as f64 / (n - 1) as f64).collect()
}

/// Ensemble second moments of the 2D SDE lift with standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdeEnsemble {
    pub taus: Vec<f64>,
    pub mean: Vec<MomentState>,
    pub std_error: Vec<MomentState>,
    pub n_paths: usize,
    pub n_nonfinite: usize,
    pub step: f64,
}

/// Euler–Maruyama ensemble of
///
/// ```text
/// dX = −ρη̄ Y dτ,    dY = ρ(X − Y) dτ + √ξ X dW
/// ```
///
/// whose second moments `(E X², E Y², E XY)` follow the resonance system.
/// Path `i` draws from stream `i` of `seed`; results do not depend on thread
/// scheduling. The step is the largest value `≤ max_step` dividing every
/// output interval into whole steps.
pub fn sde_lift_simulate(
    system: &LimitSystem,
    x0: f64,
    y0: f64,
    taus: &[f64],
    n_paths: usize,
    seed: u64,
    max_step: Option<f64>,
) -> Result<SdeEnsemble> {
    let (rho, eta_bar, xi) = match *system {
        LimitSystem::Resonance3D {
            rho_star,
            eta_bar,
            xi_star,
            ..
        } => (rho_star, eta_bar, xi_star),
        LimitSystem::HeavyBall2D { rate, eta_bar, .. } => (rate, eta_bar, 0.0),
        LimitSystem::Sgd1D { .. } => {
            return Err(Error::UnsupportedRegion("scalar limit has no SDE lift".into()))
        }
    };
    if n_paths < 1000 {
        return Err(Error::invalid("n_paths", "at least 1000 paths are required"));
    }
    if !system.hurwitz().stable {
        return Err(Error::Unstable {
            time: 0.0,
            threshold: f64::INFINITY,
        });
    }
    crate::trajectory::check_increasing(taus)?;
    let h_cap = max_step.unwrap_or(0.01 / rho).min(0.01 / rho);
    // Steps per output interval.
    let mut steps = Vec::with_capacity(taus.len());
    let mut prev = taus[0];
    for &t in taus {
        let span = t - prev;
        let n = if span > 0.0 { (span / h_cap).ceil() as usize } else { 0 };
        steps.push((n, if n > 0 { span / n as f64 } else { 0.0 }));
        prev = t;
    }
    let sq = xi.sqrt();

    let paths: Vec<Option<Vec<[f64; 2]>>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, i as u64);
            let (mut x, mut y) = (x0, y0);
            let mut out = Vec::with_capacity(taus.len());
            for &(n, h) in &steps {
                let sh = h.sqrt();
                for _ in 0..n {
                    let dw = sh * rng.normal();
                    let nx = x - rho * eta_bar * y * h;
                    let ny = y + rho * (x - y) * h + sq * x * dw;
                    x = nx;
                    y = ny;
                }
                if !(x.is_finite() && y.is_finite()) {
                    return None;
                }
                out.push([x, y]);
            }
            Some(out)
        })
        .collect();

    let mut acc = vec![[Welford::new(); 3]; taus.len()];
    let mut n_nonfinite = 0;
    for path in &paths {
        match path {
            None => n_nonfinite += 1,
            Some(p) => {
                for (k, [x, y]) in p.iter().enumerate() {
                    acc[k][0].push(x * x);
                    acc[k][1].push(y * y);
                    acc[k][2].push(x * y);
                }
            }
        }
    }
    let mean = acc
        .iter()
        .map(|a| MomentState::new(a[0].mean(), a[1].mean(), a[2].mean()))
        .collect();
    let std_error = acc
        .iter()
        .map(|a| MomentState::new(a[0].std_error(), a[1].std_error(), a[2].std_error()))
        .collect();
    Ok(SdeEnsemble {
        taus: taus.to_vec(),
        mean,
        std_error,
        n_paths,
        n_nonfinite,
        step: steps.iter().map(|s| s.1).fold(0.0, f64::max),
    })
}

/// Roots of the normalized resonance cubic.
pub fn resonance_normalized_roots(eta_bar: f64, zeta: f64) -> [Complex64; 3] {
    let (a1, a2, a3) = resonance_normalized_poly(eta_bar, zeta);
    cubic_roots(a1, a2, a3)
}

/// Heavy-ball amplitude vector field, used to check the square-root lift.
pub fn heavy_ball_field(rate: f64, eta_bar: f64, x: f64, y: f64) -> Vector2<f64> {
    Vector2::new(-rate * eta_bar * y, rate * (x - y))
}

/// Moment vector field of a limit at `(R, V, C)`.
pub fn limit_moment_field(system: &LimitSystem, s: &MomentState) -> Vector3<f64> {
    system.moment_matrix() * s.as_vector()
}
