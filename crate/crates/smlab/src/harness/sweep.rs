//! Phase-plane sweeps. Cells are independent; a failing cell records its
//! error and the sweep continues.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ls_moment_ode::{build_main_matrix, evolve_linear, MomentState};
use crate::scaling::{classify_region, eta_max_exponent, instantiate, ScalingConstants, ScalingExponents};
use crate::stability::find_eta_max_params;

/// Status string of a successful cell.
pub const CELL_OK: &str = "ok";

fn grid_cells(kappas: &[f64], gammas: &[f64]) -> Vec<(f64, f64)> {
    kappas
        .iter()
        .flat_map(|&k| gammas.iter().map(move |&g| (k, g)))
        .collect()
}

/// Stability ceiling at one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseMapCell {
    pub kappa: f64,
    pub gamma: f64,
    pub region_tag: String,
    pub eta_max: f64,
    pub binding: String,
    /// Predicted exponent `e` in `η_max ≍ d^e`.
    pub eta_max_exponent: f64,
    pub status: String,
}

/// Region tags and bisected `η_max` over a `(κ, γ)` grid.
pub fn phase_map(kappas: &[f64], gammas: &[f64], sigma: f64, c: &ScalingConstants, d: u64) -> Vec<PhaseMapCell> {
    grid_cells(kappas, gammas)
        .par_iter()
        .map(|&(kappa, gamma)| {
            let e = ScalingExponents::new(kappa, sigma, gamma);
            let region = classify_region(&e);
            let mut cell = PhaseMapCell {
                kappa,
                gamma,
                region_tag: region.tag().to_string(),
                eta_max: f64::NAN,
                binding: String::new(),
                eta_max_exponent: eta_max_exponent(region, &e),
                status: CELL_OK.to_string(),
            };
            match instantiate(&e, c, d).and_then(|inst| find_eta_max_params(&inst.params)) {
                Ok(em) => {
                    cell.eta_max = em.eta_max;
                    cell.binding = em.binding.label().to_string();
                }
                Err(err) => cell.status = err.to_string(),
            }
            cell
        })
        .collect()
}

/// Last-iterate risk at the best learning rate for one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskCell {
    pub kappa: f64,
    pub gamma: f64,
    pub region_tag: String,
    pub eta_opt: f64,
    pub log10_risk: f64,
    /// Active updates afforded by the budget.
    pub active_updates: f64,
    pub status: String,
}

/// Number of log-spaced learning rates scanned before refinement.
const ETA_SCAN: usize = 60;
/// Lower end of the scan relative to `η_max`.
const ETA_SCAN_FLOOR: f64 = 1e-6;

/// `log10 R(t)` from `(1, 0, 0)` minimized over `η < η_max`, where `t` is the
/// number of active updates that consume `budget` nonzero gradients on
/// average (`P_batch / (pB)` updates per gradient).
pub fn risk_at_optimal_eta(e: &ScalingExponents, c: &ScalingConstants, d: u64, budget: f64) -> Result<(f64, f64, f64)> {
    let inst = instantiate(e, c, d)?.params;
    let eta_max = find_eta_max_params(&inst)?.eta_max;
    let bf = inst.batch_factors();
    let t = budget * bf.p_batch / (inst.p * inst.b as f64);
    let start = MomentState::new(1.0, 0.0, 0.0);
    let objective = |log_eta: f64| -> f64 {
        build_main_matrix(&inst.with_eta(log_eta.exp()))
            .and_then(|m| evolve_linear(&m, &start, &[0.0, t]))
            .map(|tr| tr.states[1].r.max(f64::MIN_POSITIVE).ln())
            .unwrap_or(f64::INFINITY)
    };
    let lo = (eta_max * ETA_SCAN_FLOOR).ln();
    let hi = (eta_max * 0.999).ln();
    let step = (hi - lo) / ETA_SCAN as f64;
    let (mut best_x, mut best_f) = (hi, f64::INFINITY);
    for i in 0..=ETA_SCAN {
        let x = lo + step * i as f64;
        let f = objective(x);
        if f < best_f {
            best_f = f;
            best_x = x;
        }
    }
    // Golden-section refinement inside the neighbouring scan cells.
    let (mut a, mut b) = ((best_x - step).max(lo), (best_x + step).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (objective(x1), objective(x2));
    for _ in 0..40 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = objective(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = objective(x2);
        }
    }
    let (x, f) = if f1 < f2 { (x1, f1) } else { (x2, f2) };
    let (x, f) = if f < best_f { (x, f) } else { (best_x, best_f) };
    Ok((x.exp(), f / std::f64::consts::LN_10, t))
}

/// Least-squares risk heatmap under a fixed budget of `budget_factor · d`
/// nonzero gradients.
pub fn ls_risk_heatmap(
    kappas: &[f64],
    gammas: &[f64],
    sigma: f64,
    c: &ScalingConstants,
    d: u64,
    budget_factor: f64,
) -> Vec<RiskCell> {
    let budget = budget_factor * d as f64;
    grid_cells(kappas, gammas)
        .par_iter()
        .map(|&(kappa, gamma)| {
            let e = ScalingExponents::new(kappa, sigma, gamma);
            let region_tag = classify_region(&e).tag().to_string();
            match risk_at_optimal_eta(&e, c, d, budget) {
                Ok((eta_opt, log10_risk, active_updates)) => RiskCell {
                    kappa,
                    gamma,
                    region_tag,
                    eta_opt,
                    log10_risk,
                    active_updates,
                    status: CELL_OK.to_string(),
                },
                Err(err) => RiskCell {
                    kappa,
                    gamma,
                    region_tag,
                    eta_opt: f64::NAN,
                    log10_risk: f64::NAN,
                    active_updates: f64::NAN,
                    status: err.to_string(),
                },
            }
        })
        .collect()
}
