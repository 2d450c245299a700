//! Monte Carlo simulation of SGD with heavy-ball momentum on the
//! Bernoulli-gated Gaussian least-squares model.
//!
//! Each sample is active with probability `p` and then carries a standard
//! Gaussian feature `x ∈ R^d`. With error `e = θ − θ*` and `N` active samples
//! in a minibatch of size `B`, the minibatch gradient is
//! `g = (1/B) Σ_{active} x ⟨x, e⟩` and one step reads
//!
//! ```text
//! m ← β m + ε g,    e ← e − η m.
//! ```
//!
//! Empty minibatches (`N = 0`) only decay the momentum and drift `e`. The
//! fast-forward mode jumps over a run of `K − 1` empty minibatches in closed
//! form with `S_j = Σ_{i=1}^{j} β^i`:
//!
//! ```text
//! e ← e − η S_{K−1} m,    m ← β^{K−1} m,   then one active step.
//! ```
//!
//! Both modes record `(R, V, C) = (‖e‖², ‖m‖², ⟨e, m⟩)` after every active
//! update. Runs start from `θ = 0`, `m = 0` with `θ*` uniform on the sphere of
//! radius `theta_star_norm`.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ls_moment_ode::MomentState;
use crate::numerics::{RngStream, Welford};
use crate::scaling::InstanceParams;

/// Largest allowed `B·d` per active step unless `allow_large` is set.
pub const STEP_BUDGET: f64 = 1e9;

/// How empty minibatches are handled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McMode {
    /// Sample every minibatch, including empty ones.
    ExplicitSteps,
    /// Sample the gap to the next active minibatch and apply it in closed form.
    FastForward,
}

/// Configuration of a Monte Carlo ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub params: InstanceParams,
    #[serde(default = "one")]
    pub theta_star_norm: f64,
    pub n_seeds: usize,
    pub max_active_updates: u64,
    pub mode: McMode,
    pub master_seed: u64,
    /// Record every `record_every`-th active update (and index 0).
    #[serde(default = "one_u64")]
    pub record_every: u64,
    /// Lifts the per-step cost guard.
    #[serde(default)]
    pub allow_large: bool,
}

fn one() -> f64 {
    1.0
}

fn one_u64() -> u64 {
    1
}

impl McConfig {
    pub fn new(params: InstanceParams, n_seeds: usize, max_active_updates: u64, master_seed: u64) -> Self {
        Self {
            params,
            theta_star_norm: 1.0,
            n_seeds,
            max_active_updates,
            mode: McMode::FastForward,
            master_seed,
            record_every: 1,
            allow_large: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.n_seeds < 1 {
            return Err(Error::invalid("n_seeds", "must be at least 1"));
        }
        if self.max_active_updates < 1 {
            return Err(Error::invalid("max_active_updates", "must be at least 1"));
        }
        if self.record_every < 1 {
            return Err(Error::invalid("record_every", "must be at least 1"));
        }
        if !(self.theta_star_norm.is_finite() && self.theta_star_norm >= 0.0) {
            return Err(Error::invalid("theta_star_norm", "must be finite and >= 0"));
        }
        let cost = self.params.b as f64 * self.params.d as f64;
        if cost > STEP_BUDGET && !self.allow_large {
            return Err(Error::Budget(format!(
                "B*d = {cost:e} exceeds {STEP_BUDGET:e} per active step; set allow_large to override"
            )));
        }
        Ok(())
    }

    /// Active-update indices that are recorded.
    pub fn recorded_indices(&self) -> Vec<u64> {
        let mut out: Vec<u64> = (0..=self.max_active_updates)
            .step_by(self.record_every as usize)
            .collect();
        if *out.last().expect("non-empty") != self.max_active_updates {
            out.push(self.max_active_updates);
        }
        out
    }
}

/// Per-time ensemble statistics on the active-update clock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEnsembleResult {
    pub index: Vec<u64>,
    pub mean: Vec<MomentState>,
    pub std_error: Vec<MomentState>,
    /// Number of seeds contributing at each recorded index.
    pub count: Vec<u64>,
    /// Seeds whose iterates became non-finite.
    pub diverged: Vec<bool>,
}

/// One row of the ensemble CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McCsvRow {
    pub active_update_index: u64,
    #[serde(rename = "mean_R")]
    pub mean_r: f64,
    #[serde(rename = "se_R")]
    pub se_r: f64,
    #[serde(rename = "mean_V")]
    pub mean_v: f64,
    #[serde(rename = "se_V")]
    pub se_v: f64,
    #[serde(rename = "mean_C")]
    pub mean_c: f64,
    #[serde(rename = "se_C")]
    pub se_c: f64,
}

impl McEnsembleResult {
    pub fn rows(&self) -> Vec<McCsvRow> {
        (0..self.index.len())
            .map(|i| McCsvRow {
                active_update_index: self.index[i],
                mean_r: self.mean[i].r,
                se_r: self.std_error[i].r,
                mean_v: self.mean[i].v,
                se_v: self.std_error[i].v,
                mean_c: self.mean[i].c,
                se_c: self.std_error[i].c,
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for row in self.rows() {
            wr.serialize(row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv_rows<R: Read>(r: R) -> Result<Vec<McCsvRow>> {
        let mut rd = csv::Reader::from_reader(r);
        let mut out = Vec::new();
        for row in rd.deserialize() {
            out.push(row?);
        }
        Ok(out)
    }

    pub fn n_diverged(&self) -> usize {
        self.diverged.iter().filter(|&&x| x).count()
    }
}

/// Iterate state in error coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct McState {
    /// `θ − θ*`.
    pub err: Vec<f64>,
    pub momentum: Vec<f64>,
}

impl McState {
    /// `θ = 0`, `m = 0`.
    pub fn at_origin(theta_star: &[f64]) -> Self {
        Self {
            err: theta_star.iter().map(|x| -x).collect(),
            momentum: vec![0.0; theta_star.len()],
        }
    }

    pub fn moments(&self) -> MomentState {
        MomentState::new(
            dot(&self.err, &self.err),
            dot(&self.momentum, &self.momentum),
            dot(&self.err, &self.momentum),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.err.iter().chain(&self.momentum).all(|x| x.is_finite())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `S_j = β(1 − β^j)/(1 − β)`, the total drift weight of `j` empty steps.
pub fn drift_weight(beta: f64, eps: f64, j: u64) -> f64 {
    if j == 0 || beta == 0.0 {
        return 0.0;
    }
    beta * -((j as f64) * beta.ln()).exp_m1() / eps
}

/// `θ*` uniform on the sphere of the given radius.
pub fn sample_theta_star(rng: &mut RngStream, d: usize, radius: f64) -> Vec<f64> {
    let mut v = vec![0.0; d];
    loop {
        rng.fill_normal(&mut v);
        let n = dot(&v, &v).sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x *= radius / n);
            return v;
        }
    }
}

/// Draws `n` standard Gaussian features, stored row-major.
pub fn sample_features(rng: &mut RngStream, n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    rng.fill_normal(&mut out);
    out
}

/// Minibatch gradient `(1/B) Σ x ⟨x, e⟩` for row-major features.
pub fn minibatch_gradient(err: &[f64], features: &[f64], b: u64, out: &mut [f64]) {
    let d = err.len();
    out.iter_mut().for_each(|x| *x = 0.0);
    let inv_b = 1.0 / b as f64;
    for x in features.chunks_exact(d) {
        let s = dot(x, err) * inv_b;
        for (o, xi) in out.iter_mut().zip(x) {
            *o += s * xi;
        }
    }
}

/// One minibatch step with a given (possibly empty) set of active features.
pub fn minibatch_step(state: &mut McState, features: &[f64], params: &InstanceParams, grad: &mut [f64]) {
    let beta = params.beta;
    let eps = params.eps;
    let eta = params.eta;
    if features.is_empty() {
        for (m, e) in state.momentum.iter_mut().zip(state.err.iter_mut()) {
            *m *= beta;
            *e -= eta * *m;
        }
        return;
    }
    minibatch_gradient(&state.err, features, params.b, grad);
    for ((m, e), g) in state.momentum.iter_mut().zip(state.err.iter_mut()).zip(grad.iter()) {
        *m = beta * *m + eps * g;
        *e -= eta * *m;
    }
}

/// `K − 1` empty minibatches in closed form followed by one active step on
/// `features`.
pub fn fast_forward_step(
    state: &mut McState,
    k: u64,
    features: &[f64],
    params: &InstanceParams,
    grad: &mut [f64],
) -> Result<()> {
    if k < 1 {
        return Err(Error::invalid("K", "must be at least 1"));
    }
    if params.beta >= 1.0 {
        return Err(Error::invalid("beta", "beta = 1 has no decay"));
    }
    if k > 1 {
        let s = drift_weight(params.beta, params.eps, k - 1);
        let decay = if params.beta == 0.0 {
            0.0
        } else {
            ((k - 1) as f64 * params.beta.ln()).exp()
        };
        for (m, e) in state.momentum.iter_mut().zip(state.err.iter_mut()) {
            *e -= params.eta * s * *m;
            *m *= decay;
        }
    }
    minibatch_step(state, features, params, grad);
    Ok(())
}

/// Trajectory of one seed at the recorded indices. Stops early on divergence.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedRun {
    pub moments: Vec<MomentState>,
    pub diverged: bool,
}

/// Runs one seed. `theta_star` overrides the random target when given.
pub fn run_seed(config: &McConfig, seed_index: u64, theta_star: Option<&[f64]>) -> Result<SeedRun> {
    let params = config.params;
    let d = params.d as usize;
    let mut rng = RngStream::new(config.master_seed, seed_index);
    let target = match theta_star {
        Some(t) => {
            if t.len() != d {
                return Err(Error::ShapeMismatch(format!("theta_star has {} entries, d = {d}", t.len())));
            }
            t.to_vec()
        }
        None => sample_theta_star(&mut rng, d, config.theta_star_norm),
    };
    let mut state = McState::at_origin(&target);
    let mut grad = vec![0.0; d];
    let bf = params.batch_factors();
    let every = config.record_every;
    let total = config.max_active_updates;
    let mut moments = Vec::with_capacity((total / every + 2) as usize);
    moments.push(state.moments());
    let mut diverged = false;
    for n in 1..=total {
        match config.mode {
            McMode::FastForward => {
                let k = rng.geometric(bf.p_batch);
                let count = rng.binomial_nonzero(params.b, params.p) as usize;
                let feats = sample_features(&mut rng, count, d);
                fast_forward_step(&mut state, k, &feats, &params, &mut grad)?;
            }
            McMode::ExplicitSteps => loop {
                let count = rng.binomial(params.b, params.p) as usize;
                let feats = sample_features(&mut rng, count, d);
                minibatch_step(&mut state, &feats, &params, &mut grad);
                if count > 0 {
                    break;
                }
            },
        }
        if n % every == 0 || n == total {
            if !state.is_finite() {
                diverged = true;
                break;
            }
            moments.push(state.moments());
        }
    }
    Ok(SeedRun { moments, diverged })
}

/// Runs the ensemble in parallel and reduces in seed order.
pub fn simulate(config: &McConfig) -> Result<McEnsembleResult> {
    simulate_with_target(config, None)
}

/// As [`simulate`], with every seed sharing the target `theta_star`.
pub fn simulate_with_target(config: &McConfig, theta_star: Option<&[f64]>) -> Result<McEnsembleResult> {
    config.validate()?;
    let runs: Vec<Result<SeedRun>> = (0..config.n_seeds as u64)
        .into_par_iter()
        .map(|i| run_seed(config, i, theta_star))
        .collect();
    let index = config.recorded_indices();
    let mut acc = vec![[Welford::new(); 3]; index.len()];
    let mut diverged = Vec::with_capacity(runs.len());
    for run in runs {
        let run = run?;
        for (k, s) in run.moments.iter().enumerate() {
            acc[k][0].push(s.r);
            acc[k][1].push(s.v);
            acc[k][2].push(s.c);
        }
        diverged.push(run.diverged);
    }
    Ok(McEnsembleResult {
        mean: acc
            .iter()
            .map(|a| MomentState::new(a[0].mean(), a[1].mean(), a[2].mean()))
            .collect(),
        std_error: acc
            .iter()
            .map(|a| MomentState::new(a[0].std_error(), a[1].std_error(), a[2].std_error()))
            .collect(),
        count: acc.iter().map(|a| a[0].count()).collect(),
        index,
        diverged,
    })
}

/// Empirical one-active-step increment `E[Δ(R, V, C)]` from a fixed state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneStepIncrement {
    pub mean: MomentState,
    pub std_error: MomentState,
    pub n_replicates: u64,
}

/// Chunk size for the one-step oracle; each chunk owns one random stream.
const ONE_STEP_CHUNK: u64 = 4096;

/// Monte Carlo estimate of the expected change of `(R, V, C)` over one
/// fast-forward step (gap plus active update) from `state`.
pub fn one_step_increment(
    params: &InstanceParams,
    state: &McState,
    n_replicates: u64,
    master_seed: u64,
) -> Result<OneStepIncrement> {
    params.validate()?;
    let d = params.d as usize;
    if state.err.len() != d || state.momentum.len() != d {
        return Err(Error::ShapeMismatch("state length differs from d".into()));
    }
    let before = state.moments();
    let bf = params.batch_factors();
    let n_chunks = n_replicates.div_ceil(ONE_STEP_CHUNK);
    let parts: Vec<Result<[Welford; 3]>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = RngStream::new(master_seed, c);
            let mut acc = [Welford::new(); 3];
            let mut grad = vec![0.0; d];
            let reps = ONE_STEP_CHUNK.min(n_replicates - c * ONE_STEP_CHUNK);
            for _ in 0..reps {
                let mut s = state.clone();
                let k = rng.geometric(bf.p_batch);
                let count = rng.binomial_nonzero(params.b, params.p) as usize;
                let feats = sample_features(&mut rng, count, d);
                fast_forward_step(&mut s, k, &feats, params, &mut grad)?;
                let after = s.moments();
                acc[0].push(after.r - before.r);
                acc[1].push(after.v - before.v);
                acc[2].push(after.c - before.c);
            }
            Ok(acc)
        })
        .collect();
    let mut total = [Welford::new(); 3];
    for p in parts {
        let p = p?;
        for i in 0..3 {
            total[i].merge(&p[i]);
        }
    }
    Ok(OneStepIncrement {
        mean: MomentState::new(total[0].mean(), total[1].mean(), total[2].mean()),
        std_error: MomentState::new(total[0].std_error(), total[1].std_error(), total[2].std_error()),
        n_replicates,
    })
}

/// Closed-form mean of `R` for plain SGD (`p = 1`, `B = 1`, `β = 0`):
/// `E R_k = (1 − 2η + η²(d+2))^k R_0`.
pub fn plain_sgd_mean_r(eta: f64, d: u64, k: u64, r0: f64) -> f64 {
    r0 * (1.0 - 2.0 * eta + eta * eta * (d as f64 + 2.0)).powf(k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drift_weight_matches_sum() {
        let beta: f64 = 0.9;
        let s: f64 = (1..=7).map(|i| beta.powi(i)).sum();
        assert!((drift_weight(beta, 0.1, 7) - s).abs() < 1e-14);
        assert_eq!(drift_weight(0.0, 1.0, 5), 0.0);
    }

    #[test]
    fn single_gap_is_plain_step() {
        let params = InstanceParams::new(3, 0.5, 2, 0.3, 0.1).unwrap();
        let mut a = McState {
            err: vec![1.0, -0.5, 0.2],
            momentum: vec![0.3, 0.1, -0.2],
        };
        let mut b = a.clone();
        let feats = vec![0.5, 1.0, -1.0];
        let mut g = vec![0.0; 3];
        fast_forward_step(&mut a, 1, &feats, &params, &mut g).unwrap();
        minibatch_step(&mut b, &feats, &params, &mut g);
        assert_eq!(a, b);
    }

    #[test]
    fn fast_forward_equals_explicit_empty_steps() {
        let params = InstanceParams::new(3, 0.5, 2, 0.3, 0.1).unwrap();
        let mut a = McState {
            err: vec![1.0, -0.5, 0.2],
            momentum: vec![0.3, 0.1, -0.2],
        };
        let mut b = a.clone();
        let feats = vec![0.5, 1.0, -1.0, 0.2, 0.1, 0.0];
        let mut g = vec![0.0; 3];
        fast_forward_step(&mut a, 6, &feats, &params, &mut g).unwrap();
        for _ in 0..5 {
            minibatch_step(&mut b, &[], &params, &mut g);
        }
        minibatch_step(&mut b, &feats, &params, &mut g);
        for (x, y) in a.err.iter().zip(&b.err).chain(a.momentum.iter().zip(&b.momentum)) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}
