//! Experiment configuration: a JSON document that fully determines one run.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lr_dynamics::CoeffMode;
use crate::scaling::{ScalingConstants, ScalingExponents};

/// Which model a run concerns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Ls,
    Lr,
}

/// What a run computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Mc,
    MainOde,
    LimitOde,
    Compare,
    Stability,
    Heatmap,
    SpectralConflict,
}

/// A rectangular `(κ, γ)` grid with inclusive end points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub n_kappa: usize,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub n_gamma: usize,
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

impl GridSpec {
    pub fn kappas(&self) -> Vec<f64> {
        axis(self.kappa_min, self.kappa_max, self.n_kappa)
    }

    pub fn gammas(&self) -> Vec<f64> {
        axis(self.gamma_min, self.gamma_max, self.n_gamma)
    }

    fn validate(&self, path: &str) -> Result<()> {
        if self.n_kappa == 0 || self.n_gamma == 0 {
            return Err(config_error(path, "grid sizes must be positive"));
        }
        let ok = [self.kappa_min, self.kappa_max, self.gamma_min, self.gamma_max]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0);
        if !ok || self.kappa_max < self.kappa_min || self.gamma_max < self.gamma_min {
            return Err(config_error(path, "grid bounds must be finite, >= 0 and ordered"));
        }
        Ok(())
    }
}

/// Inputs of the vocabulary spectral-conflict report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralSpec {
    pub vocab_size: u64,
    #[serde(default = "unit")]
    pub zipf_exponent: f64,
    pub d: u64,
    pub batch: f64,
    pub beta: f64,
}

fn unit() -> f64 {
    1.0
}

/// One experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: Model,
    pub mode: Mode,
    #[serde(default)]
    pub points: Vec<ScalingExponents>,
    #[serde(default)]
    pub constants: Option<ScalingConstants>,
    #[serde(default)]
    pub d_list: Vec<u64>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    /// Master seed; required by the stochastic modes.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub n_seeds: Option<usize>,
    pub output_dir: PathBuf,
    /// Logistic signal norm `‖μ‖`.
    #[serde(default)]
    pub r: Option<f64>,
    /// Logistic initial `(s, R⊥)`.
    #[serde(default)]
    pub lr_initial: Option<[f64; 2]>,
    #[serde(default)]
    pub coeff_mode: Option<CoeffMode>,
    /// Number of points on the output time grid.
    #[serde(default)]
    pub n_times: Option<usize>,
    /// End of the time window on the run's own clock.
    #[serde(default)]
    pub t_end: Option<f64>,
    /// Simulator horizon (active updates or steps).
    #[serde(default)]
    pub steps: Option<u64>,
    #[serde(default)]
    pub record_every: Option<u64>,
    /// Nonzero-gradient budget of the risk heatmap, in units of `d`.
    #[serde(default)]
    pub budget_factor: Option<f64>,
    #[serde(default)]
    pub spectral: Option<SpectralSpec>,
}

pub(crate) fn config_error(path: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        reason: reason.into(),
    }
}

impl ExperimentConfig {
    /// Minimal configuration for `model`/`mode` writing into `output_dir`.
    pub fn new(model: Model, mode: Mode, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            model,
            mode,
            points: Vec::new(),
            constants: None,
            d_list: Vec::new(),
            grid: None,
            seed: None,
            n_seeds: None,
            output_dir: output_dir.into(),
            r: None,
            lr_initial: None,
            coeff_mode: None,
            n_times: None,
            t_end: None,
            steps: None,
            record_every: None,
            budget_factor: None,
            spectral: None,
        }
    }

    pub fn constants(&self) -> ScalingConstants {
        self.constants.unwrap_or_default()
    }

    /// Checks cross-field requirements; errors carry the offending path.
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            p.validate()
                .map_err(|e| config_error(&format!("points[{i}]"), e.to_string()))?;
        }
        for (i, &d) in self.d_list.iter().enumerate() {
            if d < 2 {
                return Err(config_error(&format!("d_list[{i}]"), "d must be >= 2"));
            }
        }
        if let Some(g) = &self.grid {
            g.validate("grid")?;
        }
        if let Some(c) = &self.constants {
            for (name, v) in [
                ("p_star", c.p_star),
                ("b_star", c.b_star),
                ("eps_star", c.eps_star),
                ("eta_star", c.eta_star),
            ] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(config_error(&format!("constants.{name}"), "must be positive and finite"));
                }
            }
        }
        if let Some(r) = self.r {
            if !(r > 0.0 && r.is_finite()) {
                return Err(config_error("r", "must be positive"));
            }
        }
        if self.n_times == Some(0) || self.n_times == Some(1) {
            return Err(config_error("n_times", "must be >= 2"));
        }
        if self.record_every == Some(0) {
            return Err(config_error("record_every", "must be >= 1"));
        }
        let needs_points = matches!(
            self.mode,
            Mode::Mc | Mode::MainOde | Mode::LimitOde | Mode::Compare
        ) || (self.mode == Mode::Stability && self.grid.is_none());
        if needs_points && self.points.is_empty() {
            return Err(config_error("points", "at least one scaling point is required"));
        }
        let needs_d = matches!(self.mode, Mode::Mc | Mode::MainOde | Mode::Compare | Mode::Stability)
            || (self.mode == Mode::Heatmap && self.model == Model::Ls);
        if needs_d && self.d_list.is_empty() {
            return Err(config_error("d_list", "at least one dimension is required"));
        }
        if matches!(self.mode, Mode::Heatmap) && self.grid.is_none() {
            return Err(config_error("grid", "heatmaps need a grid"));
        }
        if self.mode == Mode::Heatmap && self.points.len() != 1 {
            return Err(config_error("points", "heatmaps take exactly one point supplying sigma"));
        }
        if self.mode == Mode::Mc {
            if self.seed.is_none() {
                return Err(config_error("seed", "stochastic runs need an explicit seed"));
            }
            if self.steps.is_none() {
                return Err(config_error("steps", "simulation horizon is required"));
            }
        }
        if self.model == Model::Lr && self.mode == Mode::LimitOde && self.lr_initial.is_none() {
            return Err(config_error("lr_initial", "the reduced system needs an initial (s, R_perp)"));
        }
        if self.mode == Mode::SpectralConflict && self.spectral.is_none() {
            return Err(config_error("spectral", "spectral-conflict needs its inputs"));
        }
        if self.model == Model::Lr && matches!(self.mode, Mode::Stability) {
            return Err(config_error("mode", "stability is defined for the least-squares model only"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses and validates a JSON configuration. Parse errors report the
/// path of the offending field.
pub fn parse_config(json: &str) -> Result<ExperimentConfig> {
    if json.trim().is_empty() {
        return Err(config_error("", "empty configuration"));
    }
    let de = &mut serde_json::Deserializer::from_str(json);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        config_error(&path, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}
