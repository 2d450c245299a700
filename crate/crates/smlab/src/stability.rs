//! Mean-square stability of the moment ODE and its timescale structure.
//!
//! A real cubic `λ³ + c1 λ² + c2 λ + c3` has all roots in the open left half
//! plane iff
//!
//! ```text
//! c1 > 0,   c2 > 0,   c3 > 0,   c1 c2 > c3.
//! ```
//!
//! The largest stable learning rate `η_max` is located by bisection in `log η`.
//! The ratio `Δ = η B1 / ρ` compares the retention time `1/ρ` with the
//! learning time `1/(η B1)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ls_moment_ode::{build_main_matrix, char_poly, DriftMatrix};
use crate::numerics::cubic_roots;
use crate::scaling::{instantiate, InstanceParams, ScalingConstants, ScalingExponents};

/// One of the four Routh–Hurwitz conditions for a cubic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HurwitzCondition {
    C1Positive,
    C2Positive,
    C3Positive,
    ProductExceedsC3,
}

impl HurwitzCondition {
    pub fn label(&self) -> &'static str {
        match self {
            HurwitzCondition::C1Positive => "c1>0",
            HurwitzCondition::C2Positive => "c2>0",
            HurwitzCondition::C3Positive => "c3>0",
            HurwitzCondition::ProductExceedsC3 => "c1c2>c3",
        }
    }
}

/// Outcome of the Routh–Hurwitz test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub stable: bool,
    pub c1_positive: bool,
    pub c2_positive: bool,
    pub c3_positive: bool,
    pub product_exceeds_c3: bool,
    /// First violated condition, in the order c1, c2, c3, c1c2 > c3.
    pub binding: Option<HurwitzCondition>,
    /// `min(c1, c2, c3, c1 c2 − c3)`.
    pub margin: f64,
}

/// Routh–Hurwitz verdict for `λ³ + c1 λ² + c2 λ + c3`.
pub fn routh_hurwitz(c1: f64, c2: f64, c3: f64) -> StabilityVerdict {
    let prod = c1 * c2 - c3;
    let flags = [
        (HurwitzCondition::C1Positive, c1 > 0.0),
        (HurwitzCondition::C2Positive, c2 > 0.0),
        (HurwitzCondition::C3Positive, c3 > 0.0),
        (HurwitzCondition::ProductExceedsC3, prod > 0.0),
    ];
    let binding = flags.iter().find(|(_, ok)| !ok).map(|(c, _)| *c);
    StabilityVerdict {
        stable: binding.is_none(),
        c1_positive: flags[0].1,
        c2_positive: flags[1].1,
        c3_positive: flags[2].1,
        product_exceeds_c3: flags[3].1,
        binding,
        margin: c1.min(c2).min(c3).min(prod),
    }
}

/// Verdict for a fully specified instance.
pub fn verdict_for(params: &InstanceParams) -> Result<StabilityVerdict> {
    let m = build_main_matrix(params)?;
    let (c1, c2, c3) = char_poly(&m);
    Ok(routh_hurwitz(c1, c2, c3))
}

/// Result of the `η_max` search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaMax {
    pub eta_max: f64,
    /// Condition that fails just above `η_max`.
    pub binding: HurwitzCondition,
    /// Learning rates where a scan of the verdict changed sign. A single entry
    /// means the stable set is an interval, as expected.
    pub sign_changes: Vec<f64>,
}

/// Lower end of the learning-rate search bracket.
pub const ETA_MIN: f64 = 1e-12;

/// Largest stable learning rate of a fixed instance (its own `η` is ignored).
pub fn find_eta_max_params(base: &InstanceParams) -> Result<EtaMax> {
    let stable_at = |eta: f64| -> Result<StabilityVerdict> { verdict_for(&base.with_eta(eta)) };
    if !stable_at(ETA_MIN)?.stable {
        return Err(Error::NoConvergence {
            solver: "eta_max bisection",
            detail: "no stable eta found: unstable already at 1e-12".into(),
        });
    }
    let mut hi = 10.0;
    while stable_at(hi)?.stable {
        hi *= 2.0;
        if hi > 1e15 {
            return Err(Error::NoConvergence {
                solver: "eta_max bisection",
                detail: "verdict stays stable up to 1e15".into(),
            });
        }
    }

    // Scan for non-monotone verdicts across the bracket.
    let n_scan = 96;
    let (la, lb) = (ETA_MIN.ln(), hi.ln());
    let mut sign_changes = Vec::new();
    let mut prev = true;
    let mut prev_eta = ETA_MIN;
    for i in 1..=n_scan {
        let eta = (la + (lb - la) * i as f64 / n_scan as f64).exp();
        let s = stable_at(eta)?.stable;
        if s != prev {
            sign_changes.push((prev_eta * eta).sqrt());
        }
        prev = s;
        prev_eta = eta;
    }

    // Bisect on the first transition from stable to unstable.
    let mut lo = ETA_MIN;
    let mut up = hi;
    if let Some(&first) = sign_changes.first() {
        let step = ((lb - la) / n_scan as f64).exp();
        lo = (first / step.sqrt()).max(ETA_MIN);
        up = (first * step.sqrt()).min(hi);
        if !stable_at(lo)?.stable || stable_at(up)?.stable {
            lo = ETA_MIN;
            up = hi;
        }
    }
    while up / lo - 1.0 > 1e-7 {
        let mid = (lo * up).sqrt();
        if stable_at(mid)?.stable {
            lo = mid;
        } else {
            up = mid;
        }
    }
    let binding = stable_at(up)?
        .binding
        .unwrap_or(HurwitzCondition::ProductExceedsC3);
    if sign_changes.is_empty() {
        sign_changes.push(lo);
    } else {
        sign_changes[0] = lo;
    }
    Ok(EtaMax {
        eta_max: lo,
        binding,
        sign_changes,
    })
}

/// Largest stable learning rate at a scaling point and dimension.
pub fn find_eta_max(
    exponents: &ScalingExponents,
    constants: &ScalingConstants,
    d: u64,
) -> Result<EtaMax> {
    let inst = instantiate(exponents, constants, d)?;
    find_eta_max_params(&inst.params)
}

/// Spectral classification of the moment ODE.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectralType {
    AllAtRho,
    OneSlowTwoFast,
}

/// Retention versus learning timescales and the spectrum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimescaleReport {
    pub rho: f64,
    pub tau_learn: f64,
    pub delta: f64,
    pub eigenvalues: [Complex64; 3],
    pub spectral_type: SpectralType,
}

/// Threshold (as a fraction of ρ) below which an eigenvalue counts as slow.
pub const SLOW_FRACTION: f64 = 0.1;

/// Eigenvalues from the characteristic cubic and the timescale ratio `Δ`.
pub fn spectrum_report(m: &DriftMatrix) -> TimescaleReport {
    let (c1, c2, c3) = char_poly(m);
    let eigenvalues = cubic_roots(c1, c2, c3);
    let rho = m.retention.rho;
    let rate = m.params.eta * m.batch.b1;
    let n_slow = eigenvalues
        .iter()
        .filter(|z| z.norm() < SLOW_FRACTION * rho)
        .count();
    TimescaleReport {
        rho,
        tau_learn: 1.0 / rate,
        delta: rate / rho,
        eigenvalues,
        spectral_type: if n_slow == 1 {
            SpectralType::OneSlowTwoFast
        } else {
            SpectralType::AllAtRho
        },
    }
}
