//! Exact second-moment ODE of momentum SGD on Bernoulli-gated least squares.
//!
//! On the active-update clock `t` the moments `R = E‖θ−θ*‖²`, `V = E‖m‖²`,
//! `C = E⟨θ−θ*, m⟩` satisfy a closed linear system whose matrix depends only on
//! the batch factors and the retention/drift coefficients:
//!
//! ```text
//! d/dt (R, V, C)ᵀ = M (R, V, C)ᵀ,   rows of M:
//!
//! a_R = −2ηεB1 + η²ε²B2
//! a_V = η²δθ² − 2η³εB1 δθg + η⁴ε²B2 δg²
//! a_C = −2ηδθ + 2η²εB1(δg + δθ) − 2η³ε²B2 δg
//!
//! b_R = ε²B2
//! b_V = (β̄2 − 1) − 2ηεB1 δ₋₁g + η²ε²B2 δg²
//! b_C = 2εβ̄1B1 − 2ηε²B2 δg
//!
//! c_R = εB1 − ηε²B2
//! c_V = −ηδ₋₁θ + η²εB1(δθg + δ₋₁g) − η³ε²B2 δg²
//! c_C = (β̄1 − 1) − ηεB1(δg + δθ + β̄1) + 2η²ε²B2 δg
//! ```
//!
//! The scaled coordinates `W = V/Λ_W`, `Z = C/Λ_Z` with `Λ_W = ε²B2` and
//! `Λ_Z = P_batch + ε` make the forcing of `W` by `R` exactly one.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{char_coeffs, LinearFlow};
use crate::scaling::{BatchFactors, InstanceParams, RetentionDrift};
use crate::trajectory::{log_grid, Clock, Trajectory, TrajectoryMeta};

/// Threshold above which a linear trajectory is reported as unstable.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

/// Least-squares second-moment state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentState {
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "V")]
    pub v: f64,
    #[serde(rename = "C")]
    pub c: f64,
}

impl MomentState {
    pub fn new(r: f64, v: f64, c: f64) -> Self {
        Self { r, v, c }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.r, self.v, self.c)
    }

    pub fn from_vector(x: &Vector3<f64>) -> Self {
        Self::new(x[0], x[1], x[2])
    }

    /// Checks `R, V ≥ 0` and `C² ≤ RV` up to numerical slack.
    pub fn is_admissible(&self) -> bool {
        let rv = self.r * self.v;
        self.r >= 0.0 && self.v >= 0.0 && self.c * self.c <= rv + 1e-9 * rv.max(1.0)
    }
}

/// The 3×3 drift matrix with the constituents used to build it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftMatrix {
    pub a_r: f64,
    pub a_v: f64,
    pub a_c: f64,
    pub b_r: f64,
    pub b_v: f64,
    pub b_c: f64,
    pub c_r: f64,
    pub c_v: f64,
    pub c_c: f64,
    pub params: InstanceParams,
    pub batch: BatchFactors,
    pub retention: RetentionDrift,
}

impl DriftMatrix {
    /// The matrix with rows `(dR, dV, dC)`.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.a_r, self.a_v, self.a_c, self.b_r, self.b_v, self.b_c, self.c_r, self.c_v,
            self.c_c,
        )
    }

    /// `M · state`.
    pub fn apply(&self, s: &MomentState) -> MomentState {
        MomentState::from_vector(&(self.matrix() * s.as_vector()))
    }
}

/// Builds the drift matrix of the exact moment ODE.
pub fn build_main_matrix(params: &InstanceParams) -> Result<DriftMatrix> {
    params.validate()?;
    let bf = params.batch_factors();
    let rd = params.retention_drift();
    let (eta, eps) = (params.eta, params.eps);
    let (b1, b2) = (bf.b1, bf.b2);
    let e2b2 = eps * eps * b2;

    let a_r = -2.0 * eta * eps * b1 + eta * eta * e2b2;
    let a_v = eta * eta * rd.delta_theta2 - 2.0 * eta.powi(3) * eps * b1 * rd.delta_theta_g
        + eta.powi(4) * e2b2 * rd.delta_g2;
    let a_c = -2.0 * eta * rd.delta_theta + 2.0 * eta * eta * eps * b1 * (rd.delta_g + rd.delta_theta)
        - 2.0 * eta.powi(3) * e2b2 * rd.delta_g;

    let b_r = e2b2;
    let b_v = -rd.one_minus_beta_bar2 - 2.0 * eta * eps * b1 * rd.delta_m1_g
        + eta * eta * e2b2 * rd.delta_g2;
    let b_c = 2.0 * eps * rd.beta_bar1 * b1 - 2.0 * eta * e2b2 * rd.delta_g;

    let c_r = eps * b1 - eta * e2b2;
    let c_v = -eta * rd.delta_m1_theta + eta * eta * eps * b1 * (rd.delta_theta_g + rd.delta_m1_g)
        - eta.powi(3) * e2b2 * rd.delta_g2;
    let c_c = -rd.one_minus_beta_bar1
        - eta * eps * b1 * (rd.delta_g + rd.delta_theta + rd.beta_bar1)
        + 2.0 * eta * eta * e2b2 * rd.delta_g;

    let out = DriftMatrix {
        a_r,
        a_v,
        a_c,
        b_r,
        b_v,
        b_c,
        c_r,
        c_v,
        c_c,
        params: *params,
        batch: bf,
        retention: rd,
    };
    if out.matrix().iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("params", "drift matrix has non-finite entries"));
    }
    Ok(out)
}

/// Characteristic coefficients `(c1, c2, c3)` of `det(λI − M)`.
///
/// The determinant is expanded along the first row, which carries the
/// factor `η`, so small-`η` coefficients keep their relative precision.
pub fn char_poly(m: &DriftMatrix) -> (f64, f64, f64) {
    let c1 = -(m.a_r + m.b_v + m.c_c);
    let c2 = (m.a_r * m.b_v - m.a_v * m.b_r)
        + (m.a_r * m.c_c - m.a_c * m.c_r)
        + (m.b_v * m.c_c - m.b_c * m.c_v);
    let det = m.a_r * (m.b_v * m.c_c - m.b_c * m.c_v) - m.a_v * (m.b_r * m.c_c - m.b_c * m.c_r)
        + m.a_c * (m.b_r * m.c_v - m.b_v * m.c_r);
    (c1, c2, -det)
}

/// Characteristic coefficients of an arbitrary 3×3 matrix.
pub fn char_poly_matrix(a: &Matrix3<f64>) -> (f64, f64, f64) {
    char_coeffs(a)
}

/// Diagonal change of variables `W = V/Λ_W`, `Z = C/Λ_Z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledTransform {
    pub lambda_w: f64,
    pub lambda_z: f64,
}

impl ScaledTransform {
    pub fn for_matrix(m: &DriftMatrix) -> Result<Self> {
        let lambda_w = m.params.eps * m.params.eps * m.batch.b2;
        let lambda_z = m.batch.p_batch + m.params.eps;
        if !(lambda_w > 0.0 && lambda_w.is_finite() && lambda_z > 0.0) {
            return Err(Error::invalid("params", "degenerate scaling constants"));
        }
        Ok(Self { lambda_w, lambda_z })
    }

    fn diag(&self) -> [f64; 3] {
        [1.0, 1.0 / self.lambda_w, 1.0 / self.lambda_z]
    }

    /// `T M T⁻¹` with `T = diag(1, 1/Λ_W, 1/Λ_Z)`.
    pub fn scale_matrix(&self, m: &DriftMatrix) -> Matrix3<f64> {
        let t = self.diag();
        let mut out = m.matrix();
        for i in 0..3 {
            for j in 0..3 {
                out[(i, j)] *= t[i] / t[j];
            }
        }
        // The (W, R) entry is ε²B2/Λ_W, identically one.
        out[(1, 0)] = m.b_r / self.lambda_w;
        out
    }

    /// `(R, V, C) ↦ (R, W, Z)`.
    pub fn to_scaled(&self, s: &MomentState) -> [f64; 3] {
        [s.r, s.v / self.lambda_w, s.c / self.lambda_z]
    }

    /// `(R, W, Z) ↦ (R, V, C)`.
    pub fn from_scaled(&self, x: &[f64; 3]) -> MomentState {
        MomentState::new(x[0], x[1] * self.lambda_w, x[2] * self.lambda_z)
    }
}

/// Default output grid: 0 followed by 512 log-spaced points from
/// `1e−3/ρ` to `10/(η B1)`.
pub fn default_time_grid(m: &DriftMatrix) -> Vec<f64> {
    let tau_fast = 1.0 / m.retention.rho;
    let tau_slow = if m.params.eta > 0.0 {
        1.0 / (m.params.eta * m.batch.b1)
    } else {
        tau_fast
    };
    let lo = 1e-3 * tau_fast;
    let hi = (10.0 * tau_slow).max(10.0 * tau_fast).max(lo * 10.0);
    let mut g = vec![0.0];
    g.extend(log_grid(lo, hi, 512));
    g
}

/// Exact solution of the moment ODE on the active-update clock.
///
/// Reports [`Error::Unstable`] at the first grid time where a component
/// exceeds [`BLOWUP_THRESHOLD`] or becomes non-finite. Negative `R` or `V` of
/// roundoff size are set to zero in the output only.
pub fn evolve_linear(
    m: &DriftMatrix,
    initial: &MomentState,
    times: &[f64],
) -> Result<Trajectory<MomentState>> {
    let flow = LinearFlow::new(&m.matrix());
    let x0 = initial.as_vector();
    let scale = x0.amax().max(f64::MIN_POSITIVE);
    let mut states = Vec::with_capacity(times.len());
    for &t in times {
        let x = flow.apply(t, &x0);
        if x.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_THRESHOLD) {
            return Err(Error::Unstable {
                time: t,
                threshold: BLOWUP_THRESHOLD,
            });
        }
        let mut s = MomentState::from_vector(&x);
        let slack = 1e-12 * scale;
        if s.r < 0.0 && s.r > -slack {
            s.r = 0.0;
        }
        if s.v < 0.0 && s.v > -slack {
            s.v = 0.0;
        }
        states.push(s);
    }
    let method = match flow.method() {
        crate::numerics::FlowMethod::Eigen => "eigen",
        crate::numerics::FlowMethod::ScalingSquaring => "scaling-squaring",
    };
    Trajectory::new(
        Clock::ActiveUpdate,
        times.to_vec(),
        states,
        TrajectoryMeta {
            params: Some(m.params),
            seed: None,
            solver: Some(method.to_string()),
        },
    )
}

/// Re-expresses a trajectory on another clock; see [`Trajectory::convert_clock`].
pub fn clock_convert<S: Clone>(
    traj: &Trajectory<S>,
    target: Clock,
    p_batch: f64,
    d: f64,
) -> Result<Trajectory<S>> {
    traj.convert_clock(target, p_batch, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple() -> InstanceParams {
        InstanceParams::new(8, 1.0, 1, 1.0, 0.1).unwrap()
    }

    #[test]
    fn plain_sgd_entries() {
        let m = build_main_matrix(&simple()).unwrap();
        assert!((m.a_r + 0.1).abs() < 1e-15);
        assert_eq!(m.b_r, 10.0);
        assert!(m.c_r.abs() < 1e-15);
        assert_eq!(m.b_v, -1.0);
        assert_eq!(m.c_c, -1.0);
        assert_eq!((m.a_v, m.a_c, m.b_c, m.c_v), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn zero_learning_rate_freezes_error() {
        let p = InstanceParams::new(50, 0.1, 4, 0.05, 0.0).unwrap();
        let m = build_main_matrix(&p).unwrap();
        assert_eq!((m.a_r, m.a_v, m.a_c), (0.0, 0.0, 0.0));
        assert_eq!(char_poly(&m).2, 0.0);
    }

    #[test]
    fn scaled_forcing_is_one() {
        let p = InstanceParams::new(1000, 2.8e-3, 3982, 3.5e-4, 2.5e-2).unwrap();
        let m = build_main_matrix(&p).unwrap();
        let t = ScaledTransform::for_matrix(&m).unwrap();
        let s = t.scale_matrix(&m);
        assert_eq!(s[(1, 0)], 1.0);
        assert_eq!(s[(1, 1)], m.b_v);
        assert_eq!(s[(2, 2)], m.c_c);
    }
}
