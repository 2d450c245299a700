//! Co-scaling of the problem constants with dimension, the batch and
//! retention primitives derived from them, and the phase-plane classifier.
//!
//! ```text
//! p = p* d^{−κ}   B = ⌈B* d^{σ}⌉   ε = ε* d^{−γ}   β = 1 − ε   η = η* d^{−α_η}
//!
//! P_batch = 1 − (1−p)^B            Q_batch = 1 − P_batch
//! B1 = p / P_batch                 B_diag = B1 / B
//! B_cross = p (B−1) B_diag         B2 = (d+2) B_diag + B_cross
//! ```
//!
//! With `K ~ Geom(P_batch)` the gap between active minibatches and
//! `S_K = β(1 − β^K)/ε`, the retention and drift coefficients are
//!
//! ```text
//! β̄1 = E β^K = Pβ/D1           β̄2 = E β^{2K} = Pβ²/D2
//! δθ = E S_K = β/D1             δg = E S_{K−1} = Qβ/D1
//! δθ² = E S_K² = β²(1+Qβ)/(D1 D2)            δg² = Q δθ²
//! δ₋₁θ = E β^K S_K = Pβ²/(D1 D2)             δ₋₁g = E β^K S_{K−1} = PQβ³/(D1 D2)
//! δθg = E S_K S_{K−1} = Qβ²(1+β)/(D1 D2)
//! D1 = 1 − Qβ = P + Qε          D2 = 1 − Qβ² = P + Qε(2−ε)
//! ```
//!
//! The `D1`, `D2` forms on the right avoid cancellation when `ε` is tiny.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// Tolerance on the exponent equalities that define boundary tags.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Exponents of the co-scaling ansatz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingExponents {
    /// Sparsity exponent κ.
    pub kappa: f64,
    /// Batch exponent σ.
    pub sigma: f64,
    /// Momentum exponent γ.
    pub gamma: f64,
    /// Learning-rate exponent α_η; derived from the region when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_eta: Option<f64>,
}

impl ScalingExponents {
    /// Exponents with an auto-derived learning-rate exponent.
    pub fn new(kappa: f64, sigma: f64, gamma: f64) -> Self {
        Self {
            kappa,
            sigma,
            gamma,
            alpha_eta: None,
        }
    }

    /// Exponents with an explicit learning-rate exponent.
    pub fn with_alpha_eta(mut self, alpha_eta: f64) -> Self {
        self.alpha_eta = Some(alpha_eta);
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("kappa", self.kappa),
            ("sigma", self.sigma),
            ("gamma", self.gamma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(name, format!("{v} must be finite and >= 0")));
            }
        }
        if let Some(a) = self.alpha_eta {
            if !a.is_finite() {
                return Err(Error::invalid("alpha_eta", "must be finite"));
            }
        }
        Ok(())
    }

    /// The resonance value `1 − σ + κ` of γ.
    pub fn resonance_gamma(&self) -> f64 {
        1.0 - self.sigma + self.kappa
    }

    /// Effective sparsity exponent `max(0, κ − σ)`.
    pub fn kappa_eff(&self) -> f64 {
        (self.kappa - self.sigma).max(0.0)
    }

    /// Retention exponent `max(0, γ − κ_eff)`.
    pub fn nu(&self) -> f64 {
        (self.gamma - self.kappa_eff()).max(0.0)
    }

    /// The learning-rate exponent in force: the explicit one, or the value
    /// that tracks the stability ceiling of the point's region.
    pub fn resolved_alpha_eta(&self) -> f64 {
        self.alpha_eta
            .unwrap_or_else(|| -eta_max_exponent(classify_region(self), self))
    }
}

/// Prefactors of the co-scaling ansatz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingConstants {
    pub p_star: f64,
    pub b_star: f64,
    pub eps_star: f64,
    pub eta_star: f64,
}

impl Default for ScalingConstants {
    fn default() -> Self {
        Self {
            p_star: 1.0,
            b_star: 1.0,
            eps_star: 1.0,
            eta_star: 1.0,
        }
    }
}

impl ScalingConstants {
    pub fn validate(&self, exps: &ScalingExponents) -> Result<()> {
        for (name, v) in [
            ("p_star", self.p_star),
            ("b_star", self.b_star),
            ("eps_star", self.eps_star),
            ("eta_star", self.eta_star),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::invalid(name, format!("{v} must be finite and > 0")));
            }
        }
        if exps.gamma == 0.0 && self.eps_star > 1.0 {
            return Err(Error::invalid(
                "eps_star",
                format!("{} > 1 with gamma = 0 is not a valid decay rate", self.eps_star),
            ));
        }
        Ok(())
    }
}

/// Concrete problem parameters at one dimension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceParams {
    pub d: u64,
    pub p: f64,
    #[serde(rename = "B")]
    pub b: u64,
    pub beta: f64,
    pub eps: f64,
    pub eta: f64,
}

impl InstanceParams {
    /// Builds parameters from the momentum decay `eps = 1 − β`.
    pub fn new(d: u64, p: f64, b: u64, eps: f64, eta: f64) -> Result<Self> {
        let out = Self {
            d,
            p,
            b,
            beta: 1.0 - eps,
            eps,
            eta,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return Err(Error::invalid("d", "must be positive"));
        }
        if self.b < 1 {
            return Err(Error::invalid("B", "must be positive"));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::invalid("p", format!("{} is outside (0, 1]", self.p)));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::invalid("eps", format!("{} is outside (0, 1]", self.eps)));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::invalid("eta", format!("{} must be finite and >= 0", self.eta)));
        }
        Ok(())
    }

    pub fn batch_factors(&self) -> BatchFactors {
        batch_factors(self.p, self.b, self.d).expect("validated instance")
    }

    pub fn retention_drift(&self) -> RetentionDrift {
        let bf = self.batch_factors();
        retention_drift_eps(self.eps, bf.p_batch, bf.q_batch).expect("validated instance")
    }

    /// Retention scale `ρ = ε/(P_batch + ε)`.
    pub fn rho(&self) -> f64 {
        let bf = self.batch_factors();
        self.eps / (bf.p_batch + self.eps)
    }

    /// Same parameters with a different learning rate.
    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }
}

/// A non-fatal adjustment made while instantiating a scaling point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ScalingWarning {
    /// `p* d^{−κ}` exceeded one and was clamped.
    GateClamped { raw: f64 },
    /// `ε* d^{−γ}` exceeded one and was clamped.
    DecayClamped { raw: f64 },
}

impl fmt::Display for ScalingWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalingWarning::GateClamped { raw } => write!(f, "p = {raw} clamped to 1"),
            ScalingWarning::DecayClamped { raw } => write!(f, "eps = {raw} clamped to 1"),
        }
    }
}

/// Instantiated parameters with the clamping events that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub params: InstanceParams,
    pub warnings: Vec<ScalingWarning>,
}

/// Evaluates the co-scaling ansatz at dimension `d`.
pub fn instantiate(
    exponents: &ScalingExponents,
    constants: &ScalingConstants,
    d: u64,
) -> Result<Instance> {
    if d < 2 {
        return Err(Error::invalid("d", format!("{d} < 2")));
    }
    exponents.validate()?;
    constants.validate(exponents)?;
    let df = d as f64;
    let mut warnings = Vec::new();

    let p_raw = constants.p_star * df.powf(-exponents.kappa);
    let p = if p_raw > 1.0 {
        warnings.push(ScalingWarning::GateClamped { raw: p_raw });
        1.0
    } else {
        p_raw
    };

    let b_raw = constants.b_star * df.powf(exponents.sigma);
    // Absorb last-ulp rounding above an exact integer before taking the ceiling.
    let b = (b_raw * (1.0 - 1e-12)).ceil().max(1.0);
    if b > 9.0e15 {
        return Err(Error::invalid("B", format!("{b_raw:e} exceeds the integer range")));
    }

    let eps_raw = constants.eps_star * df.powf(-exponents.gamma);
    let eps = if eps_raw > 1.0 {
        warnings.push(ScalingWarning::DecayClamped { raw: eps_raw });
        1.0
    } else {
        eps_raw
    };

    let eta = constants.eta_star * df.powf(-exponents.resolved_alpha_eta());
    let params = InstanceParams::new(d, p, b as u64, eps, eta)?;
    Ok(Instance { params, warnings })
}

/// Batch activation probability and the batch scaling factors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchFactors {
    pub p_batch: f64,
    pub q_batch: f64,
    pub b1: f64,
    pub b_diag: f64,
    pub b_cross: f64,
    pub b2: f64,
}

/// Batch factors of a size-`B` minibatch with gate probability `p` in dimension `d`.
pub fn batch_factors(p: f64, b: u64, d: u64) -> Result<BatchFactors> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid("p", format!("{p} is outside (0, 1]")));
    }
    if b < 1 {
        return Err(Error::invalid("B", "must be positive"));
    }
    let bf = b as f64;
    let log_q = (b as f64) * (-p).ln_1p();
    let (p_batch, q_batch) = if p == 1.0 {
        (1.0, 0.0)
    } else {
        (-log_q.exp_m1(), log_q.exp())
    };
    let b1 = p / p_batch;
    let b_diag = b1 / bf;
    let b_cross = p * (bf - 1.0) * b_diag;
    let b2 = (d as f64 + 2.0) * b_diag + b_cross;
    Ok(BatchFactors {
        p_batch,
        q_batch,
        b1,
        b_diag,
        b_cross,
        b2,
    })
}

/// Geometric retention and drift coefficients of the active-to-active map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetentionDrift {
    pub beta_bar1: f64,
    pub beta_bar2: f64,
    /// `1 − β̄1`, evaluated without cancellation.
    pub one_minus_beta_bar1: f64,
    /// `1 − β̄2`, evaluated without cancellation.
    pub one_minus_beta_bar2: f64,
    pub delta_theta: f64,
    pub delta_g: f64,
    pub delta_theta2: f64,
    pub delta_g2: f64,
    pub delta_m1_theta: f64,
    pub delta_m1_g: f64,
    pub delta_theta_g: f64,
    /// Retention scale `ε/(P_batch + ε)`.
    pub rho: f64,
    /// `max(0, κ − σ)`, when the exponents are known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_eff: Option<f64>,
    /// `max(0, γ − κ_eff)`, when the exponents are known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
}

impl RetentionDrift {
    /// Attaches the exponent-level summaries of a scaling point.
    pub fn with_exponents(mut self, exps: &ScalingExponents) -> Self {
        self.kappa_eff = Some(exps.kappa_eff());
        self.nu = Some(exps.nu());
        self
    }
}

/// Retention and drift coefficients for momentum `beta` and batch activation
/// probability `p_batch`.
pub fn retention_drift(beta: f64, p_batch: f64) -> Result<RetentionDrift> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::invalid("beta", format!("{beta} is outside [0, 1)")));
    }
    retention_drift_eps(1.0 - beta, p_batch, 1.0 - p_batch)
}

/// Same as [`retention_drift`] but parameterized by `eps = 1 − β` and an
/// independently computed `q_batch = 1 − p_batch`, which keeps full relative
/// precision when either is tiny.
pub fn retention_drift_eps(eps: f64, p_batch: f64, q_batch: f64) -> Result<RetentionDrift> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::invalid("eps", format!("{eps} is outside (0, 1]")));
    }
    if !(p_batch > 0.0 && p_batch <= 1.0) {
        return Err(Error::invalid("p_batch", format!("{p_batch} is outside (0, 1]")));
    }
    let beta = 1.0 - eps;
    let (p, q) = (p_batch, q_batch);
    let d1 = p + q * eps;
    let d2 = p + q * eps * (2.0 - eps);
    let d12 = d1 * d2;
    Ok(RetentionDrift {
        beta_bar1: p * beta / d1,
        beta_bar2: p * beta * beta / d2,
        one_minus_beta_bar1: eps / d1,
        one_minus_beta_bar2: eps * (2.0 - eps) / d2,
        delta_theta: beta / d1,
        delta_g: q * beta / d1,
        delta_theta2: beta * beta * (1.0 + q * beta) / d12,
        delta_g2: q * beta * beta * (1.0 + q * beta) / d12,
        delta_m1_theta: p * beta * beta / d12,
        delta_m1_g: p * q * beta * beta * beta / d12,
        delta_theta_g: q * beta * beta * (1.0 + beta) / d12,
        rho: eps / (p + eps),
        kappa_eff: None,
        nu: None,
    })
}

/// Phase-plane region of a scaling point for the least-squares model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    /// Concentrated: `κ ≤ σ−1`.
    A,
    /// Dense below resonance.
    B,
    /// Dense above resonance.
    C,
    /// Memoryless sparse: `γ ≤ κ−σ`.
    D,
    /// Sparse below resonance.
    E,
    /// Sparse above resonance.
    F,
    #[serde(rename = "resonance-dense")]
    ResonanceDense,
    #[serde(rename = "resonance-sparse")]
    ResonanceSparse,
    #[serde(rename = "kappa-eq-sigma-above")]
    KappaEqSigmaAbove,
    #[serde(rename = "kappa-eq-sigma-below")]
    KappaEqSigmaBelow,
    #[serde(rename = "triple-point")]
    TriplePoint,
    #[serde(rename = "noise-character-line")]
    NoiseCharacterLine,
}

impl Region {
    pub const ALL: [Region; 12] = [
        Region::A,
        Region::B,
        Region::C,
        Region::D,
        Region::E,
        Region::F,
        Region::ResonanceDense,
        Region::ResonanceSparse,
        Region::KappaEqSigmaAbove,
        Region::KappaEqSigmaBelow,
        Region::TriplePoint,
        Region::NoiseCharacterLine,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Region::A => "A",
            Region::B => "B",
            Region::C => "C",
            Region::D => "D",
            Region::E => "E",
            Region::F => "F",
            Region::ResonanceDense => "resonance-dense",
            Region::ResonanceSparse => "resonance-sparse",
            Region::KappaEqSigmaAbove => "kappa-eq-sigma-above",
            Region::KappaEqSigmaBelow => "kappa-eq-sigma-below",
            Region::TriplePoint => "triple-point",
            Region::NoiseCharacterLine => "noise-character-line",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Region> {
        Region::ALL.iter().copied().find(|r| r.tag() == tag)
    }

    pub fn is_interior(&self) -> bool {
        matches!(
            self,
            Region::A | Region::B | Region::C | Region::D | Region::E | Region::F
        )
    }

    /// Whether the limit of this region lives strictly below the resonance
    /// line, where the squared error decouples into a scalar law.
    pub fn is_below_resonance(&self) -> bool {
        matches!(
            self,
            Region::B | Region::D | Region::E | Region::KappaEqSigmaBelow
        )
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Classifies a scaling point. Boundary tags take precedence over interior
/// ones whenever a defining equality holds to [`BOUNDARY_TOL`].
pub fn classify_region(e: &ScalingExponents) -> Region {
    let (k, s, g) = (e.kappa, e.sigma, e.gamma);
    let res = 1.0 - s + k;
    let on = |a: f64, b: f64| (a - b).abs() <= BOUNDARY_TOL;

    if on(k, s) {
        return if on(g, 1.0) {
            Region::TriplePoint
        } else if g > 1.0 {
            Region::KappaEqSigmaAbove
        } else {
            Region::KappaEqSigmaBelow
        };
    }
    if on(k, s - 1.0) {
        return Region::NoiseCharacterLine;
    }
    if k > s - 1.0 && on(g, res) {
        return if k < s {
            Region::ResonanceDense
        } else {
            Region::ResonanceSparse
        };
    }
    if k < s - 1.0 {
        Region::A
    } else if k <= s {
        if g < res {
            Region::B
        } else {
            Region::C
        }
    } else if g <= k - s {
        Region::D
    } else if g < res {
        Region::E
    } else {
        Region::F
    }
}

/// Exponent `e` with `η_max ≍ d^e`.
///
/// Correlation-limited regions (A, C, F and the boundaries above resonance)
/// give `κ − γ`; noise-limited regions (B, D, E and the boundaries below
/// resonance) give `σ − 1`. On the resonance line the two coincide.
pub fn eta_max_exponent(region: Region, e: &ScalingExponents) -> f64 {
    let correlation = e.kappa - e.gamma;
    let noise = e.sigma - 1.0;
    match region {
        Region::A | Region::C | Region::F | Region::KappaEqSigmaAbove => correlation,
        Region::B | Region::D | Region::E | Region::KappaEqSigmaBelow => noise,
        Region::ResonanceDense | Region::ResonanceSparse | Region::TriplePoint => noise,
        Region::NoiseCharacterLine => {
            if e.gamma >= e.resonance_gamma() {
                correlation
            } else {
                noise
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_instance() {
        let e = ScalingExponents::new(0.0, 0.0, 0.0).with_alpha_eta(0.0);
        let inst = instantiate(&e, &ScalingConstants::default(), 100).unwrap();
        let p = inst.params;
        assert_eq!((p.p, p.b, p.beta, p.eta), (1.0, 1, 0.0, 1.0));
    }

    #[test]
    fn always_active_batch() {
        let bf = batch_factors(1.0, 4, 10).unwrap();
        assert_eq!(bf.p_batch, 1.0);
        assert_eq!(bf.b1, 1.0);
        assert_eq!(bf.b_diag, 0.25);
        assert_eq!(bf.b_cross, 0.75);
    }

    #[test]
    fn classifier_examples() {
        assert_eq!(classify_region(&ScalingExponents::new(0.85, 1.2, 1.15)), Region::C);
        assert_eq!(classify_region(&ScalingExponents::new(2.2, 1.2, 0.4)), Region::D);
        assert_eq!(
            classify_region(&ScalingExponents::new(1.2, 1.2, 1.0)),
            Region::TriplePoint
        );
    }

    #[test]
    fn tags_round_trip() {
        for r in Region::ALL {
            assert_eq!(Region::from_tag(r.tag()), Some(r));
        }
    }
}
