//! Monte Carlo simulation of SGD with momentum on the rare-class Gaussian
//! mixture with the bias pinned at its Bayes value.
//!
//! Each step draws `B` labelled samples: the label `y ~ Bernoulli(p)` first,
//! then `x = y μ + z` with `z ~ N(0, I_d)`. With `g = (1/B) Σ (σ(⟨θ,x⟩+b*) − y) x`
//! the update is `m ← (1−ε) m + ε g`, `θ ← θ − η m`. The mean direction
//! `μ̂` is a fixed random unit vector drawn from the master seed; the five
//! recorded coordinates are projections against it.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lr_dynamics::{coefficients_exact, sigmoid, LrParams, LrState};
use crate::ls_mc::STEP_BUDGET;
use crate::numerics::{RngStream, Welford};

/// Stream id reserved for the shared geometry.
const GEOMETRY_STREAM: u64 = u64::MAX;
/// Replicates per random stream in the one-step and gradient oracles.
const CHUNK: u64 = 4096;
/// `R⊥` beyond which a seed is flagged as diverged.
const DIVERGENCE_R: f64 = 1e8;

/// Ensemble configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrMcConfig {
    pub lr_params: LrParams,
    pub n_seeds: usize,
    pub max_steps: u64,
    pub master_seed: u64,
    pub record_stride: u64,
    /// Initial five-variable state; the default is `θ = 0`, `m = 0`.
    pub initial: LrState,
    pub allow_large: bool,
}

impl LrMcConfig {
    pub fn new(lr_params: LrParams, n_seeds: usize, max_steps: u64, master_seed: u64) -> Self {
        Self {
            lr_params,
            n_seeds,
            max_steps,
            master_seed,
            record_stride: 1,
            initial: LrState::at_rest(-lr_params.r, 0.0),
            allow_large: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lr_params.validate()?;
        if self.record_stride < 1 {
            return Err(Error::invalid("record_stride", "must be >= 1"));
        }
        if self.n_seeds < 1 {
            return Err(Error::invalid("n_seeds", "must be >= 1"));
        }
        if self.lr_params.d < 3 {
            return Err(Error::invalid("d", "the simulator needs d >= 3"));
        }
        let cost = self.lr_params.b as f64 * self.lr_params.d as f64;
        if cost > STEP_BUDGET && !self.allow_large {
            return Err(Error::Budget(format!(
                "B*d = {cost:e} exceeds {STEP_BUDGET:e} per step; set allow_large to override"
            )));
        }
        Ok(())
    }

    pub fn recorded_steps(&self) -> Vec<u64> {
        let mut out: Vec<u64> = (0..=self.max_steps).step_by(self.record_stride as usize).collect();
        if *out.last().expect("non-empty") != self.max_steps {
            out.push(self.max_steps);
        }
        out
    }
}

/// Orthonormal frame `(μ̂, w1, w2)` shared by every seed of one master seed.
#[derive(Clone, Debug, PartialEq)]
pub struct LrGeometry {
    pub mu_hat: Vec<f64>,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl LrGeometry {
    /// Random orthonormal frame by Gram–Schmidt on three Gaussian vectors.
    pub fn sample(master_seed: u64, d: usize) -> Result<Self> {
        if d < 3 {
            return Err(Error::invalid("d", "the frame needs d >= 3"));
        }
        let mut rng = RngStream::new(master_seed, GEOMETRY_STREAM);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(3);
        while basis.len() < 3 {
            let mut v = vec![0.0; d];
            rng.fill_normal(&mut v);
            for b in &basis {
                let c = dot(&v, b);
                axpy(-c, b, &mut v);
            }
            let n = dot(&v, &v).sqrt();
            if n > 1e-8 {
                v.iter_mut().for_each(|x| *x /= n);
                basis.push(v);
            }
        }
        let w2 = basis.pop().expect("three vectors");
        let w1 = basis.pop().expect("three vectors");
        let mu_hat = basis.pop().expect("three vectors");
        Ok(Self { mu_hat, w1, w2 })
    }

    pub fn dim(&self) -> usize {
        self.mu_hat.len()
    }
}

/// Parameter and momentum vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct LrIterate {
    pub theta: Vec<f64>,
    pub momentum: Vec<f64>,
}

impl LrIterate {
    /// Vectors realizing `state`: `θ = (s+r) μ̂ + √R⊥ w1` and
    /// `m = u μ̂ + (C⊥/√R⊥) w1 + √(V⊥ − C⊥²/R⊥) w2`.
    pub fn from_state(state: &LrState, geom: &LrGeometry, r: f64) -> Result<Self> {
        if state.r_perp < 0.0 || state.v_perp < 0.0 {
            return Err(Error::invalid("state", "R_perp and V_perp must be >= 0"));
        }
        let d = geom.dim();
        let mut theta = vec![0.0; d];
        let mut momentum = vec![0.0; d];
        axpy(state.theta_par(r), &geom.mu_hat, &mut theta);
        let sr = state.r_perp.sqrt();
        axpy(sr, &geom.w1, &mut theta);
        axpy(state.u, &geom.mu_hat, &mut momentum);
        let (c1, c2sq) = if sr > 0.0 {
            let c1 = state.c_perp / sr;
            (c1, state.v_perp - c1 * c1)
        } else {
            if state.c_perp != 0.0 {
                return Err(Error::invalid("state", "C_perp must vanish when R_perp = 0"));
            }
            (0.0, state.v_perp)
        };
        if c2sq < -1e-12 * state.v_perp.max(1e-300) {
            return Err(Error::invalid("state", "violates C_perp^2 <= R_perp V_perp"));
        }
        axpy(c1, &geom.w1, &mut momentum);
        axpy(c2sq.max(0.0).sqrt(), &geom.w2, &mut momentum);
        Ok(Self { theta, momentum })
    }

    /// Five-variable projection.
    pub fn state(&self, geom: &LrGeometry, r: f64) -> LrState {
        let tp = dot(&self.theta, &geom.mu_hat);
        let u = dot(&self.momentum, &geom.mu_hat);
        LrState {
            s: tp - r,
            u,
            r_perp: (dot(&self.theta, &self.theta) - tp * tp).max(0.0),
            v_perp: (dot(&self.momentum, &self.momentum) - u * u).max(0.0),
            c_perp: dot(&self.theta, &self.momentum) - tp * u,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(&self.momentum).all(|x| x.is_finite())
    }
}

/// Draws one labelled sample into `x` and returns `σ(⟨θ,x⟩ + b*) − y`
/// together with the label.
fn sample_residual(
    rng: &mut RngStream,
    theta: &[f64],
    geom: &LrGeometry,
    params: &LrParams,
    x: &mut [f64],
) -> (f64, bool) {
    let y = rng.bernoulli(params.p);
    rng.fill_normal(x);
    if y {
        axpy(params.r, &geom.mu_hat, x);
    }
    let z = dot(theta, x) + params.b_star;
    let res = if y { -sigmoid(-z) } else { sigmoid(z) };
    (res, y)
}

/// Minibatch gradient at `theta` into `grad`.
pub fn minibatch_gradient(
    rng: &mut RngStream,
    theta: &[f64],
    geom: &LrGeometry,
    params: &LrParams,
    grad: &mut [f64],
    x: &mut [f64],
) {
    grad.iter_mut().for_each(|g| *g = 0.0);
    for _ in 0..params.b {
        let (res, _) = sample_residual(rng, theta, geom, params, x);
        axpy(res, x, grad);
    }
    let inv = 1.0 / params.b as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
}

/// One momentum step.
pub fn lr_step(
    it: &mut LrIterate,
    rng: &mut RngStream,
    geom: &LrGeometry,
    params: &LrParams,
    grad: &mut [f64],
    x: &mut [f64],
) {
    minibatch_gradient(rng, &it.theta, geom, params, grad, x);
    let beta = 1.0 - params.eps;
    for i in 0..it.theta.len() {
        it.momentum[i] = beta * it.momentum[i] + params.eps * grad[i];
        it.theta[i] -= params.eta * it.momentum[i];
    }
}

/// One seed's recorded states.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSeedRun {
    pub states: Vec<LrState>,
    pub diverged: bool,
}

pub fn run_lr_seed(config: &LrMcConfig, geom: &LrGeometry, seed_index: u64) -> Result<LrSeedRun> {
    let params = config.lr_params;
    let r = params.r;
    let d = params.d as usize;
    let mut rng = RngStream::new(config.master_seed, seed_index);
    let mut it = LrIterate::from_state(&config.initial, geom, r)?;
    let mut grad = vec![0.0; d];
    let mut x = vec![0.0; d];
    let mut states = Vec::with_capacity((config.max_steps / config.record_stride + 2) as usize);
    states.push(it.state(geom, r));
    let mut diverged = false;
    for n in 1..=config.max_steps {
        lr_step(&mut it, &mut rng, geom, &params, &mut grad, &mut x);
        if n % config.record_stride == 0 || n == config.max_steps {
            let st = it.state(geom, r);
            if !it.is_finite() || st.r_perp > DIVERGENCE_R {
                diverged = true;
                break;
            }
            states.push(st);
        }
    }
    Ok(LrSeedRun { states, diverged })
}

/// Per-step ensemble statistics of `(s, u, R⊥, V⊥, C⊥, α)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrMcEnsemble {
    pub steps: Vec<u64>,
    pub mean: Vec<LrState>,
    pub std_error: Vec<LrState>,
    pub mean_alpha: Vec<f64>,
    pub count: Vec<u64>,
    pub diverged: Vec<bool>,
}

/// One row of the ensemble CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrMcCsvRow {
    pub step: u64,
    pub mean_s: f64,
    pub se_s: f64,
    pub mean_u: f64,
    pub se_u: f64,
    #[serde(rename = "mean_R_perp")]
    pub mean_r_perp: f64,
    #[serde(rename = "se_R_perp")]
    pub se_r_perp: f64,
    #[serde(rename = "mean_V_perp")]
    pub mean_v_perp: f64,
    #[serde(rename = "se_V_perp")]
    pub se_v_perp: f64,
    #[serde(rename = "mean_C_perp")]
    pub mean_c_perp: f64,
    #[serde(rename = "se_C_perp")]
    pub se_c_perp: f64,
    pub mean_alpha: f64,
}

impl LrMcEnsemble {
    pub fn rows(&self) -> Vec<LrMcCsvRow> {
        (0..self.steps.len())
            .map(|i| {
                let m = &self.mean[i];
                let e = &self.std_error[i];
                LrMcCsvRow {
                    step: self.steps[i],
                    mean_s: m.s,
                    se_s: e.s,
                    mean_u: m.u,
                    se_u: e.u,
                    mean_r_perp: m.r_perp,
                    se_r_perp: e.r_perp,
                    mean_v_perp: m.v_perp,
                    se_v_perp: e.v_perp,
                    mean_c_perp: m.c_perp,
                    se_c_perp: e.c_perp,
                    mean_alpha: self.mean_alpha[i],
                }
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

    pub fn read_csv_rows<R: Read>(r: R) -> Result<Vec<LrMcCsvRow>> {
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

/// Runs the ensemble in parallel and reduces in seed order.
pub fn simulate_lr(config: &LrMcConfig) -> Result<LrMcEnsemble> {
    config.validate()?;
    let geom = LrGeometry::sample(config.master_seed, config.lr_params.d as usize)?;
    let runs: Vec<Result<LrSeedRun>> = (0..config.n_seeds as u64)
        .into_par_iter()
        .map(|i| run_lr_seed(config, &geom, i))
        .collect();
    let steps = config.recorded_steps();
    let r = config.lr_params.r;
    let mut acc = vec![[Welford::new(); 6]; steps.len()];
    let mut diverged = Vec::with_capacity(runs.len());
    for run in runs {
        let run = run?;
        for (k, st) in run.states.iter().enumerate() {
            let x = st.as_array();
            for j in 0..5 {
                acc[k][j].push(x[j]);
            }
            acc[k][5].push(st.alpha(r));
        }
        diverged.push(run.diverged);
    }
    let pick = |f: fn(&Welford) -> f64| -> Vec<LrState> {
        acc.iter()
            .map(|a| LrState::new(f(&a[0]), f(&a[1]), f(&a[2]), f(&a[3]), f(&a[4])))
            .collect()
    };
    Ok(LrMcEnsemble {
        mean: pick(Welford::mean),
        std_error: pick(Welford::std_error),
        mean_alpha: acc.iter().map(|a| a[5].mean()).collect(),
        count: acc.iter().map(|a| a[0].count()).collect(),
        steps,
        diverged,
    })
}

/// Empirical one-step change of the five-variable state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrOneStep {
    pub mean: LrState,
    pub std_error: LrState,
    pub n_replicates: u64,
}

fn merge_chunks<const N: usize>(parts: Vec<Result<[Welford; N]>>) -> Result<[Welford; N]> {
    let mut total = [Welford::new(); N];
    for p in parts {
        let p = p?;
        for i in 0..N {
            total[i].merge(&p[i]);
        }
    }
    Ok(total)
}

/// Monte Carlo estimate of `E[Δ(s, u, R⊥, V⊥, C⊥)]` over one step from the
/// vectors realizing `state`.
pub fn lr_one_step_increment(
    params: &LrParams,
    state: &LrState,
    n_replicates: u64,
    master_seed: u64,
) -> Result<LrOneStep> {
    params.validate()?;
    let d = params.d as usize;
    let geom = LrGeometry::sample(master_seed, d)?;
    let start = LrIterate::from_state(state, &geom, params.r)?;
    let before = start.state(&geom, params.r).as_array();
    let n_chunks = n_replicates.div_ceil(CHUNK);
    let parts: Vec<Result<[Welford; 5]>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = RngStream::new(master_seed, c);
            let mut acc = [Welford::new(); 5];
            let mut grad = vec![0.0; d];
            let mut x = vec![0.0; d];
            let reps = CHUNK.min(n_replicates - c * CHUNK);
            for _ in 0..reps {
                let mut it = start.clone();
                lr_step(&mut it, &mut rng, &geom, params, &mut grad, &mut x);
                let after = it.state(&geom, params.r).as_array();
                for j in 0..5 {
                    acc[j].push(after[j] - before[j]);
                }
            }
            Ok(acc)
        })
        .collect();
    let t = merge_chunks(parts)?;
    let pick = |f: fn(&Welford) -> f64| LrState::new(f(&t[0]), f(&t[1]), f(&t[2]), f(&t[3]), f(&t[4]));
    Ok(LrOneStep {
        mean: pick(Welford::mean),
        std_error: pick(Welford::std_error),
        n_replicates,
    })
}

/// Per-sample gradient statistics at a fixed parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    /// `⟨g, μ̂⟩`, `⟨g, v⟩` for `v = (w1 + w2)/√2`, `‖g⊥‖²`, and the label.
    pub mean: [f64; 4],
    pub std_error: [f64; 4],
    /// Population values `A θ∥ + ℬ r`, `A ⟨θ, v⟩`, `(d−1) D0 + R⊥ Dθ`, `p`.
    pub expected: [f64; 4],
    pub n_samples: u64,
}

impl GradientCheck {
    /// `|mean − expected| / SE` per component.
    pub fn z_scores(&self) -> [f64; 4] {
        std::array::from_fn(|i| (self.mean[i] - self.expected[i]) / self.std_error[i])
    }
}

/// Single-sample gradient moments at the parameter vector realizing
/// `(s, R⊥)`, against the population formulas from exact quadrature.
pub fn gradient_check(params: &LrParams, s: f64, r_perp: f64, n_samples: u64, master_seed: u64) -> Result<GradientCheck> {
    params.validate()?;
    let d = params.d as usize;
    let geom = LrGeometry::sample(master_seed, d)?;
    let state = LrState::at_rest(s, r_perp);
    let it = LrIterate::from_state(&state, &geom, params.r)?;
    let v: Vec<f64> = geom
        .w1
        .iter()
        .zip(&geom.w2)
        .map(|(a, b)| (a + b) / std::f64::consts::SQRT_2)
        .collect();
    let n_chunks = n_samples.div_ceil(CHUNK);
    let parts: Vec<Result<[Welford; 4]>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = RngStream::new(master_seed, c);
            let mut acc = [Welford::new(); 4];
            let mut x = vec![0.0; d];
            let reps = CHUNK.min(n_samples - c * CHUNK);
            for _ in 0..reps {
                let (res, y) = sample_residual(&mut rng, &it.theta, &geom, params, &mut x);
                let xp = dot(&x, &geom.mu_hat);
                let xx = dot(&x, &x);
                acc[0].push(res * xp);
                acc[1].push(res * dot(&x, &v));
                acc[2].push(res * res * (xx - xp * xp));
                acc[3].push(if y { 1.0 } else { 0.0 });
            }
            Ok(acc)
        })
        .collect();
    let t = merge_chunks(parts)?;
    let c = coefficients_exact(&state, params)?;
    let expected = [
        c.f,
        c.a * dot(&it.theta, &v),
        (params.d as f64 - 1.0) * c.d0 + r_perp * c.d_theta,
        params.p,
    ];
    Ok(GradientCheck {
        mean: std::array::from_fn(|i| t[i].mean()),
        std_error: std::array::from_fn(|i| t[i].std_error()),
        expected,
        n_samples,
    })
}

/// Mean norm of the single-sample gradient at `θ = 0`.
pub fn mean_gradient_norm_at_origin(params: &LrParams, n_samples: u64, master_seed: u64) -> Result<f64> {
    params.validate()?;
    let d = params.d as usize;
    let geom = LrGeometry::sample(master_seed, d)?;
    let theta = vec![0.0; d];
    let mut rng = RngStream::new(master_seed, 0);
    let mut x = vec![0.0; d];
    let mut sum = vec![0.0; d];
    for _ in 0..n_samples {
        let (res, _) = sample_residual(&mut rng, &theta, &geom, params, &mut x);
        axpy(res, &x, &mut sum);
    }
    Ok(dot(&sum, &sum).sqrt() / n_samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iterate_round_trip() {
        let params = LrParams::new(1.0, 0.05, 4, 0.2, 0.1, 12).unwrap();
        let geom = LrGeometry::sample(7, 12).unwrap();
        let st = LrState::new(0.2, -0.1, 0.5, 0.3, 0.25);
        let it = LrIterate::from_state(&st, &geom, params.r).unwrap();
        let back = it.state(&geom, params.r);
        for (a, b) in st.as_array().iter().zip(back.as_array()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn frame_is_orthonormal() {
        let g = LrGeometry::sample(3, 9).unwrap();
        let vs = [&g.mu_hat, &g.w1, &g.w2];
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot(vs[i], vs[j]) - want).abs() < 1e-12);
            }
        }
    }
}
