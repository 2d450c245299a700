//! Effective-sparsity spread of a Zipfian vocabulary under one shared
//! momentum: which ranks sit above or below the resonance line.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scaling::{batch_factors, classify_region, ScalingExponents, BOUNDARY_TOL};

/// Per-rank entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralRow {
    pub rank: u64,
    pub p_r: f64,
    pub p_batch_r: f64,
    pub kappa_r: f64,
    pub kappa_eff_r: f64,
    pub region_tag: String,
    pub above_resonance: bool,
    pub concentrated: bool,
}

/// Report over all ranks of the vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralConflictReport {
    pub vocab_size: u64,
    pub zipf_exponent: f64,
    pub d: u64,
    pub batch: f64,
    pub beta: f64,
    /// `log_d B`.
    pub sigma: f64,
    /// `−log_d(1 − β)`.
    pub gamma: f64,
    /// `log_d V`.
    pub kappa_max: f64,
    pub rows: Vec<SpectralRow>,
    /// First rank whose above/below flag differs from the previous rank.
    pub crossing_rank: Option<u64>,
    pub n_crossings: usize,
    pub frac_above: f64,
    pub frac_below: f64,
    pub frac_concentrated: f64,
}

/// Zipf probabilities `p_r ∝ r^{−s}`, normalized over `1..=V`.
pub fn zipf_probabilities(vocab_size: u64, exponent: f64) -> Vec<f64> {
    let w: Vec<f64> = (1..=vocab_size).map(|r| (r as f64).powf(-exponent)).collect();
    let h: f64 = w.iter().sum();
    w.into_iter().map(|x| x / h).collect()
}

/// Per-rank phase placement of a vocabulary trained with batch `B`, dimension
/// `d` and one momentum `β`.
pub fn spectral_conflict(vocab_size: u64, zipf_exponent: f64, d: u64, batch: f64, beta: f64) -> Result<SpectralConflictReport> {
    if vocab_size < 2 {
        return Err(Error::invalid("vocab_size", "must be >= 2"));
    }
    if d < 2 {
        return Err(Error::invalid("d", "must be >= 2"));
    }
    if !(batch >= 1.0 && batch.is_finite()) {
        return Err(Error::invalid("batch", "must be >= 1"));
    }
    if beta >= 1.0 || beta < 0.0 || !beta.is_finite() {
        return Err(Error::invalid("beta", format!("{beta} is outside [0, 1)")));
    }
    if !(zipf_exponent >= 0.0 && zipf_exponent.is_finite()) {
        return Err(Error::invalid("zipf_exponent", "must be >= 0"));
    }
    let ln_d = (d as f64).ln();
    let sigma = batch.ln() / ln_d;
    let gamma = -(1.0 - beta).ln() / ln_d;
    let b_int = batch.round().max(1.0) as u64;
    let probs = zipf_probabilities(vocab_size, zipf_exponent);
    let rows = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let kappa = (-p.ln() / ln_d).max(0.0);
            let e = ScalingExponents::new(kappa, sigma, gamma);
            let p_batch = batch_factors(p, b_int, d)?.p_batch;
            Ok(SpectralRow {
                rank: i as u64 + 1,
                p_r: p,
                p_batch_r: p_batch,
                kappa_r: kappa,
                kappa_eff_r: e.kappa_eff(),
                region_tag: classify_region(&e).tag().to_string(),
                above_resonance: gamma > e.resonance_gamma() + BOUNDARY_TOL,
                concentrated: kappa < sigma - 1.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut crossing_rank = None;
    let mut n_crossings = 0;
    for w in rows.windows(2) {
        if w[0].above_resonance != w[1].above_resonance {
            n_crossings += 1;
            crossing_rank.get_or_insert(w[1].rank);
        }
    }
    let n = rows.len() as f64;
    let frac = |f: &dyn Fn(&SpectralRow) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / n;
    Ok(SpectralConflictReport {
        vocab_size,
        zipf_exponent,
        d,
        batch,
        beta,
        sigma,
        gamma,
        kappa_max: (vocab_size as f64).ln() / ln_d,
        frac_above: frac(&|r| r.above_resonance),
        frac_below: frac(&|r| !r.above_resonance),
        frac_concentrated: frac(&|r| r.concentrated),
        crossing_rank,
        n_crossings,
        rows,
    })
}
