//! Finite-`d` versus limit convergence summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ls_limits::sup_relative_error;
use crate::ls_moment_ode::MomentState;
use crate::trajectory::Trajectory;

/// Relative slack allowed when checking that errors do not increase.
pub const MONOTONE_SLACK: f64 = 1e-9;

/// Errors of one dimension against the limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub d: u64,
    pub sup_err_r: f64,
    /// Present only where the limit carries momentum coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sup_err_v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sup_err_c: Option<f64>,
}

/// Per-dimension errors with monotonicity flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub rows: Vec<ConvergenceRow>,
    /// `R` error nonincreasing in `d`.
    pub monotone_r: bool,
    /// `R` error strictly decreasing in `d`.
    pub strictly_decreasing_r: bool,
}

/// Whether `xs` never increases by more than [`MONOTONE_SLACK`] relative.
pub fn is_nonincreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0] * (1.0 + MONOTONE_SLACK) + f64::MIN_POSITIVE)
}

/// Compares normalized finite-`d` trajectories with the limit on a common grid.
pub fn convergence_report(
    runs: &[(u64, Trajectory<MomentState>)],
    limit: &Trajectory<MomentState>,
    with_momentum: bool,
) -> Result<ConvergenceSummary> {
    let mut rows = Vec::with_capacity(runs.len());
    for (d, tr) in runs {
        if tr.times.len() != limit.times.len()
            || tr.times.iter().zip(&limit.times).any(|(a, b)| (a - b).abs() > 1e-12 * b.abs().max(1.0))
        {
            return Err(Error::ShapeMismatch(format!("time grid of d = {d} differs from the limit grid")));
        }
        let col = |tr: &Trajectory<MomentState>, f: fn(&MomentState) -> f64| -> Vec<f64> {
            tr.states.iter().map(f).collect()
        };
        let err = |f: fn(&MomentState) -> f64| sup_relative_error(&col(tr, f), &col(limit, f));
        rows.push(ConvergenceRow {
            d: *d,
            sup_err_r: err(|s| s.r)?,
            sup_err_v: if with_momentum { Some(err(|s| s.v)?) } else { None },
            sup_err_c: if with_momentum { Some(err(|s| s.c)?) } else { None },
        });
    }
    let er: Vec<f64> = rows.iter().map(|r| r.sup_err_r).collect();
    Ok(ConvergenceSummary {
        monotone_r: is_nonincreasing(&er),
        strictly_decreasing_r: er.windows(2).all(|w| w[1] < w[0]),
        rows,
    })
}

/// Logistic full-vs-reduced errors of one dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrConvergenceRow {
    pub d: u64,
    pub sup_err_s: f64,
    #[serde(rename = "sup_err_R_perp")]
    pub sup_err_r_perp: f64,
}
