//! Adaptive integration of small nonlinear ODE systems.
//!
//! The primary stepper is the Dormand–Prince 5(4) embedded pair with a PI step
//! controller. The fallback for stiff stretches is the linearly implicit
//! trapezoid rule with a finite-difference Jacobian and step-doubling error
//! control:
//!
//! ```text
//! y⁺ = y + h (I − h/2 J)⁻¹ f(t, y)
//! ```
//!
//! Both integrators land exactly on every requested output time.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerances and limits for the adaptive integrators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RkOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Largest allowed step.
    pub h_max: f64,
    /// Maximum number of attempted steps over the whole grid.
    pub max_steps: usize,
}

impl Default for RkOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-12,
            h_max: f64::INFINITY,
            max_steps: 5_000_000,
        }
    }
}

/// Which integrator produced a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OdeMethod {
    DormandPrince,
    ImplicitTrapezoid,
}

/// Work counters of an integration.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OdeStats {
    pub method: OdeMethod,
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

fn combo<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..N {
            out[i] += h * c * k[i];
        }
    }
    out
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("grid", "empty output grid"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("grid", "output times must be strictly increasing"));
    }
    Ok(())
}

/// Dormand–Prince 5(4) integration of `y' = f(t, y)` from `grid[0]`, returning
/// the state at every grid point.
pub fn rk_adaptive<const N: usize, F>(
    mut rhs: F,
    y0: [f64; N],
    grid: &[f64],
    opts: &RkOptions,
) -> Result<(Vec<[f64; N]>, OdeStats)>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
{
    check_grid(grid)?;
    let mut stats = OdeStats {
        method: OdeMethod::DormandPrince,
        accepted: 0,
        rejected: 0,
        rhs_evals: 0,
    };
    let mut out = Vec::with_capacity(grid.len());
    out.push(y0);
    let mut t = grid[0];
    let mut y = y0;
    let mut k1 = rhs(t, &y)?;
    stats.rhs_evals += 1;

    let err_norm = |y: &[f64; N], yn: &[f64; N], e: &[f64; N]| -> f64 {
        let mut s = 0.0;
        for i in 0..N {
            let sc = opts.atol + opts.rtol * y[i].abs().max(yn[i].abs());
            s += (e[i] / sc).powi(2);
        }
        (s / N as f64).sqrt()
    };

    // Initial step from the derivative scale.
    let span = grid[grid.len() - 1] - grid[0];
    let mut h = {
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..N {
            let sc = opts.atol + opts.rtol * y[i].abs();
            d0 += (y[i] / sc).powi(2);
            d1 += (k1[i] / sc).powi(2);
        }
        let (d0, d1) = ((d0 / N as f64).sqrt(), (d1 / N as f64).sqrt());
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0.min(opts.h_max).min(span.max(f64::MIN_POSITIVE))
    };
    let mut err_prev: f64 = 1e-4;
    let mut attempts = 0usize;

    for &t_out in &grid[1..] {
        while t < t_out {
            attempts += 1;
            if attempts > opts.max_steps {
                return Err(Error::StepUnderflow { time: t, step: h });
            }
            let mut last = false;
            let mut hs = h.min(opts.h_max);
            if t + hs >= t_out {
                hs = t_out - t;
                last = true;
            }
            if hs <= 1e-14 * t.abs().max(1.0) && !last {
                return Err(Error::StepUnderflow { time: t, step: hs });
            }
            let k2 = rhs(t + C2 * hs, &combo(&y, hs, &[(A21, &k1)]))?;
            let k3 = rhs(t + C3 * hs, &combo(&y, hs, &[(A31, &k1), (A32, &k2)]))?;
            let k4 = rhs(
                t + C4 * hs,
                &combo(&y, hs, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
            )?;
            let k5 = rhs(
                t + C5 * hs,
                &combo(&y, hs, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            )?;
            let k6 = rhs(
                t + hs,
                &combo(
                    &y,
                    hs,
                    &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
                ),
            )?;
            let yn = combo(
                &y,
                hs,
                &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
            );
            let t_new = if last { t_out } else { t + hs };
            let k7 = rhs(t_new, &yn)?;
            stats.rhs_evals += 6;
            let mut e = [0.0; N];
            for i in 0..N {
                e[i] = hs
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            }
            let err = err_norm(&y, &yn, &e);
            if !err.is_finite() || yn.iter().any(|v| !v.is_finite()) {
                stats.rejected += 1;
                h = hs * 0.1;
                continue;
            }
            if err <= 1.0 {
                stats.accepted += 1;
                t = t_new;
                y = yn;
                k1 = k7;
                let fac = 0.9 * err.max(1e-10).powf(-0.17) * err_prev.powf(0.04);
                let fac = fac.clamp(0.2, 10.0);
                err_prev = err.max(1e-4);
                // Keep the pre-truncation step when the last step was cut short.
                h = if last { h.max(hs * fac) } else { hs * fac };
            } else {
                stats.rejected += 1;
                let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
                h = hs * fac;
            }
        }
        out.push(y);
    }
    Ok((out, stats))
}

fn trapezoid_step<const N: usize, F>(
    rhs: &mut F,
    t: f64,
    y: &[f64; N],
    h: f64,
    evals: &mut usize,
) -> Result<[f64; N]>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
{
    let f0 = rhs(t, y)?;
    *evals += 1;
    let mut jac = DMatrix::<f64>::zeros(N, N);
    for j in 0..N {
        let dy = 1e-7 * y[j].abs().max(1e-7);
        let mut yp = *y;
        yp[j] += dy;
        let fp = rhs(t, &yp)?;
        *evals += 1;
        for i in 0..N {
            jac[(i, j)] = (fp[i] - f0[i]) / dy;
        }
    }
    let lhs = DMatrix::<f64>::identity(N, N) - jac * (0.5 * h);
    let f = DVector::<f64>::from_column_slice(&f0);
    let incr = lhs.lu().solve(&f).ok_or_else(|| Error::NoConvergence {
        solver: "implicit trapezoid",
        detail: format!("singular iteration matrix at t = {t}"),
    })?;
    let mut out = *y;
    for i in 0..N {
        out[i] += h * incr[i];
    }
    Ok(out)
}

/// Linearly implicit trapezoid integration with step-doubling error control.
pub fn implicit_trapezoid<const N: usize, F>(
    mut rhs: F,
    y0: [f64; N],
    grid: &[f64],
    opts: &RkOptions,
) -> Result<(Vec<[f64; N]>, OdeStats)>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
{
    check_grid(grid)?;
    let mut stats = OdeStats {
        method: OdeMethod::ImplicitTrapezoid,
        accepted: 0,
        rejected: 0,
        rhs_evals: 0,
    };
    let mut out = Vec::with_capacity(grid.len());
    out.push(y0);
    let mut t = grid[0];
    let mut y = y0;
    let span = grid[grid.len() - 1] - grid[0];
    let mut h = (span * 1e-6).min(opts.h_max).max(f64::MIN_POSITIVE);
    let mut attempts = 0usize;
    for &t_out in &grid[1..] {
        while t < t_out {
            attempts += 1;
            if attempts > opts.max_steps {
                return Err(Error::StepUnderflow { time: t, step: h });
            }
            let mut hs = h.min(opts.h_max);
            let mut last = false;
            if t + hs >= t_out {
                hs = t_out - t;
                last = true;
            }
            let full = trapezoid_step(&mut rhs, t, &y, hs, &mut stats.rhs_evals)?;
            let half = trapezoid_step(&mut rhs, t, &y, 0.5 * hs, &mut stats.rhs_evals)?;
            let two = trapezoid_step(&mut rhs, t + 0.5 * hs, &half, 0.5 * hs, &mut stats.rhs_evals)?;
            let mut s = 0.0;
            for i in 0..N {
                let sc = opts.atol + opts.rtol * y[i].abs().max(two[i].abs());
                s += ((two[i] - full[i]) / 3.0 / sc).powi(2);
            }
            let err = (s / N as f64).sqrt();
            if err.is_finite() && err <= 1.0 {
                stats.accepted += 1;
                // Richardson extrapolation of the second-order pair.
                for i in 0..N {
                    y[i] = two[i] + (two[i] - full[i]) / 3.0;
                }
                t = if last { t_out } else { t + hs };
                let fac = (0.9 * err.max(1e-10).powf(-1.0 / 3.0)).clamp(0.2, 5.0);
                h = if last { h.max(hs * fac) } else { hs * fac };
            } else {
                stats.rejected += 1;
                h = hs * 0.25;
                if h <= 1e-15 * t.abs().max(1.0) {
                    return Err(Error::StepUnderflow { time: t, step: h });
                }
            }
        }
        out.push(y);
    }
    Ok((out, stats))
}

/// Dormand–Prince with automatic fallback to the implicit trapezoid rule when
/// the explicit pair fails with a step-size underflow.
pub fn integrate<const N: usize, F>(
    mut rhs: F,
    y0: [f64; N],
    grid: &[f64],
    opts: &RkOptions,
) -> Result<(Vec<[f64; N]>, OdeStats)>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
{
    match rk_adaptive(&mut rhs, y0, grid, opts) {
        Err(Error::StepUnderflow { .. }) => implicit_trapezoid(&mut rhs, y0, grid, opts),
        other => other,
    }
}
