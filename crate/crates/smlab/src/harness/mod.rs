//! Experiment runner: turns an [`ExperimentConfig`] into CSV/JSON artifacts
//! and a `manifest.json` in the output directory.
//!
//! Failures inside one point, dimension or grid cell are recorded in the
//! manifest and do not stop the remaining work.

pub mod config;
pub mod io;
pub mod report;
pub mod spectral;
pub mod sweep;

use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lr_dynamics::{
    alpha, classify_lr_region, compare_reduced, evolve_5var, lr_heatmaps, lr_instantiate, reduced_system,
    CoeffMode, LrParams, LrState, ReducedSystem,
};
use crate::lr_mc::{simulate_lr, LrMcConfig};
use crate::ls_limits::{default_tau_grid, evolve_limit, rescaled_main, select_limit};
use crate::ls_mc::{simulate, McConfig};
use crate::ls_moment_ode::{build_main_matrix, default_time_grid, evolve_linear, MomentState};
use crate::scaling::{classify_region, eta_max_exponent, instantiate, ScalingConstants, ScalingExponents};
use crate::stability::{find_eta_max_params, spectrum_report};
use crate::trajectory::{linear_grid, Clock, Trajectory, TrajectoryMeta};

pub use config::{parse_config, ExperimentConfig, GridSpec, Mode, Model, SpectralSpec};
pub use io::{ArtifactWriter, CellStatus, Manifest};

/// Name of the manifest file in every output directory.
pub const MANIFEST_FILE: &str = "manifest.json";
/// Default number of output grid points.
pub const DEFAULT_N_TIMES: usize = 201;
/// Default nonzero-gradient budget of the risk heatmap, in units of `d`.
pub const DEFAULT_BUDGET_FACTOR: f64 = 10.0;
/// Default end of the logistic slow-time window.
pub const DEFAULT_LR_TAU_END: f64 = 40.0;
/// Default ensemble size of the simulators.
pub const DEFAULT_N_SEEDS: usize = 32;
/// Default logistic signal norm.
pub const DEFAULT_R: f64 = 1.0;

/// One row of the least-squares stability table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub kappa: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub d: u64,
    pub region_tag: String,
    pub eta_max: f64,
    pub binding: String,
    pub eta_max_exponent: f64,
    /// `Δ = η B1 / ρ` at half the ceiling.
    pub delta_at_half: f64,
}

/// One row of a reduced logistic trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedRow {
    pub tau: f64,
    pub s: f64,
    #[serde(rename = "R_perp")]
    pub r_perp: f64,
    pub alpha: f64,
}

/// Logistic full-vs-reduced summary of one scaling point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrConvergenceSummary {
    pub region_tag: String,
    pub system: ReducedSystem,
    pub rows: Vec<report::LrConvergenceRow>,
    pub monotone_s: bool,
    pub monotone_r_perp: bool,
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    out: ArtifactWriter,
    cells: Vec<CellStatus>,
    warnings: Vec<String>,
}

impl Run<'_> {
    /// Records the outcome of one unit of work.
    fn record(&mut self, key: String, outcome: Result<()>) -> Result<()> {
        match outcome {
            Ok(()) => self.cells.push(CellStatus { key, ok: true, error: None }),
            // Output failures abort the run; model failures are per cell.
            Err(e @ Error::Io(_)) => return Err(e),
            Err(e) => self.cells.push(CellStatus {
                key,
                ok: false,
                error: Some(e.to_string()),
            }),
        }
        Ok(())
    }

    fn constants(&self) -> ScalingConstants {
        self.cfg.constants()
    }

    fn r(&self) -> f64 {
        self.cfg.r.unwrap_or(DEFAULT_R)
    }

    fn n_times(&self) -> usize {
        self.cfg.n_times.unwrap_or(DEFAULT_N_TIMES)
    }

    fn n_seeds(&self) -> usize {
        self.cfg.n_seeds.unwrap_or(DEFAULT_N_SEEDS)
    }

    fn coeff_mode(&self) -> CoeffMode {
        self.cfg.coeff_mode.unwrap_or(CoeffMode::Exact)
    }

    fn lr_initial(&self) -> [f64; 2] {
        self.cfg.lr_initial.unwrap_or([0.0, 0.0])
    }

    fn sigma_point(&self) -> Result<ScalingExponents> {
        self.cfg
            .points
            .first()
            .copied()
            .ok_or_else(|| config::config_error("points", "a point supplying sigma is required"))
    }

    fn ls_mc(&mut self) -> Result<()> {
        let (seed, steps) = (self.cfg.seed.expect("validated"), self.cfg.steps.expect("validated"));
        for (i, e) in self.cfg.points.clone().iter().enumerate() {
            for &d in &self.cfg.d_list.clone() {
                let outcome = (|| {
                    let inst = instantiate(e, &self.constants(), d)?;
                    self.warnings.extend(inst.warnings.iter().map(|w| format!("point {i}, d = {d}: {w:?}")));
                    let mut mc = McConfig::new(inst.params, self.n_seeds(), steps, seed);
                    mc.record_every = self.cfg.record_every.unwrap_or((steps / 100).max(1));
                    let res = simulate(&mc)?;
                    if res.n_diverged() > 0 {
                        self.warnings.push(format!("point {i}, d = {d}: {} seeds diverged", res.n_diverged()));
                    }
                    self.out.csv(&format!("ls_mc_p{i}_d{d}.csv"), &res.rows())
                })();
                self.record(format!("point {i}, d = {d}"), outcome)?;
            }
        }
        Ok(())
    }

    fn ls_main(&mut self) -> Result<()> {
        for (i, e) in self.cfg.points.clone().iter().enumerate() {
            for &d in &self.cfg.d_list.clone() {
                let outcome = (|| {
                    let params = instantiate(e, &self.constants(), d)?.params;
                    let m = build_main_matrix(&params)?;
                    let times = match self.cfg.t_end {
                        Some(t) => linear_grid(0.0, t, self.n_times()),
                        None => default_time_grid(&m),
                    };
                    let tr = evolve_linear(&m, &MomentState::new(1.0, 0.0, 0.0), &times)?;
                    self.out.csv(&format!("ls_main_p{i}_d{d}.csv"), &io::ls_trajectory_rows(&tr))
                })();
                self.record(format!("point {i}, d = {d}"), outcome)?;
            }
        }
        Ok(())
    }

    fn ls_taus(&self, e: &ScalingExponents) -> Result<(crate::ls_limits::LimitSystem, Vec<f64>)> {
        let system = select_limit(e, &self.constants())?;
        let taus = match self.cfg.t_end {
            Some(t) => linear_grid(0.0, t, self.n_times()),
            None => default_tau_grid(&system, self.n_times()),
        };
        Ok((system, taus))
    }

    fn ls_limit(&mut self) -> Result<()> {
        for (i, e) in self.cfg.points.clone().iter().enumerate() {
            let outcome = (|| {
                let (system, taus) = self.ls_taus(e)?;
                let tr = evolve_limit(&system, &MomentState::new(1.0, 0.0, 0.0), &taus)?;
                self.out.csv(&format!("ls_limit_p{i}.csv"), &io::ls_trajectory_rows(&tr))?;
                self.out.json(&format!("ls_limit_p{i}.json"), &system)
            })();
            self.record(format!("point {i}"), outcome)?;
        }
        Ok(())
    }

    fn ls_compare(&mut self) -> Result<()> {
        for (i, e) in self.cfg.points.clone().iter().enumerate() {
            let outcome = (|| {
                let (system, taus) = self.ls_taus(e)?;
                let limit = evolve_limit(&system, &MomentState::new(1.0, 0.0, 0.0), &taus)?;
                self.out.csv(&format!("ls_limit_p{i}.csv"), &io::ls_trajectory_rows(&limit))?;
                let mut runs = Vec::new();
                let mut with_momentum = false;
                for &d in &self.cfg.d_list.clone() {
                    let rm = rescaled_main(e, &self.constants(), d, &taus, 1.0)?;
                    with_momentum = rm.has_momentum_coordinates;
                    self.out
                        .csv(&format!("ls_rescaled_p{i}_d{d}.csv"), &io::ls_trajectory_rows(&rm.trajectory))?;
                    runs.push((d, rm.trajectory));
                }
                let summary = report::convergence_report(&runs, &limit, with_momentum)?;
                if !summary.monotone_r {
                    self.warnings.push(format!("point {i}: R error is not monotone in d"));
                }
                self.out.json(&format!("ls_convergence_p{i}.json"), &summary)
            })();
            self.record(format!("point {i}"), outcome)?;
        }
        Ok(())
    }

    fn ls_stability(&mut self) -> Result<()> {
        let c = self.constants();
        if let Some(grid) = self.cfg.grid {
            let sigma = self.sigma_point()?.sigma;
            for &d in &self.cfg.d_list.clone() {
                let cells = sweep::phase_map(&grid.kappas(), &grid.gammas(), sigma, &c, d);
                for cell in &cells {
                    let key = format!("d = {d}, kappa = {}, gamma = {}", cell.kappa, cell.gamma);
                    let ok = cell.status == sweep::CELL_OK;
                    self.cells.push(CellStatus {
                        key,
                        ok,
                        error: (!ok).then(|| cell.status.clone()),
                    });
                }
                self.out.csv(&format!("phase_map_d{d}.csv"), &cells)?;
            }
            return Ok(());
        }
        let mut rows = Vec::new();
        for (i, e) in self.cfg.points.clone().iter().enumerate() {
            for &d in &self.cfg.d_list.clone() {
                let outcome = (|| {
                    let params = instantiate(e, &c, d)?.params;
                    let em = find_eta_max_params(&params)?;
                    let m = build_main_matrix(&params.with_eta(0.5 * em.eta_max))?;
                    let region = classify_region(e);
                    rows.push(StabilityRow {
                        kappa: e.kappa,
                        sigma: e.sigma,
                        gamma: e.gamma,
                        d,
                        region_tag: region.tag().to_string(),
                        eta_max: em.eta_max,
                        binding: em.binding.label().to_string(),
                        eta_max_exponent: eta_max_exponent(region, e),
                        delta_at_half: spectrum_report(&m).delta,
                    });
                    Ok(())
                })();
                self.record(format!("point {i}, d = {d}"), outcome)?;
            }
        }
        self.out.csv("stability.csv", &rows)
    }

    fn ls_heatmap(&mut self) -> Result<()> {
        let grid = self.cfg.grid.expect("validated");
        let sigma = self.sigma_point()?.sigma;
        let c = self.constants();
        let budget = self.cfg.budget_factor.unwrap_or(DEFAULT_BUDGET_FACTOR);
        for &d in &self.cfg.d_list.clone() {
            let cells = sweep::ls_risk_heatmap(&grid.kappas(), &grid.gammas(), sigma, &c, d, budget);
            for cell in &cells {
                let ok = cell.status == sweep::CELL_OK;
                self.cells.push(CellStatus {
                    key: format!("d = {d}, kappa = {}, gamma = {}", cell.kappa, cell.gamma),
                    ok,
                    error: (!ok).then(|| cell.status.clone()),
                });
            }
            self.out.csv(&format!("ls_risk_d{d}.csv"), &cells)?;
        }
        Ok(())
    }

    fn lr_params(&self, e: &ScalingExponents, d: u64) -> Result<LrParams> {
        lr_instantiate(e, &self.constants(), self.r(), d)
    }

    fn lr_taus(&self) -> Vec<f64> {
        linear_grid(0.0, self.cfg.t_end.unwrap_or(DEFAULT_LR_TAU_END), self.n_times())
    }

    fn lr_mc(&mut self) -> Result<()> {
        let (seed, steps) = (self.cfg.seed.expect("validated"), self.cfg.steps.expect("validated"));
        let [s0, r0] = self.lr_initial();
        for (i, e) in self.cfg.points.clone().iter().enumerate() {
            for &d in &self.cfg.d_list.clone() {
                let outcome = (|| {
                    let mut mc = LrMcConfig::new(self.lr_params(e, d)?, self.n_seeds(), steps, seed);
                    mc.record_stride = self.cfg.record_every.unwrap_or((steps / 100).max(1));
                    if self.cfg.lr_initial.is_some() {
                        mc.initial = LrState::at_rest(s0, r0);
                    }
                    let res = simulate_lr(&mc)?;
                    if res.n_diverged() > 0 {
                        self.warnings.push(format!("point {i}, d = {d}: {} seeds diverged", res.n_diverged()));
                    }
                    self.out.csv(&format!("lr_mc_p{i}_d{d}.csv"), &res.rows())
                })();
                self.record(format!("point {i}, d = {d}"), outcome)?;
            }
        }
        Ok(())
    }

    fn lr_main(&mut self) -> Result<()> {
        let [s0, r0] = self.lr_initial();
        let mode = self.coeff_mode();
        for (i, e) in self.cfg.points.clone().iter().enumerate() {
            for &d in &self.cfg.d_list.clone() {
                let outcome = (|| {
                    let params = self.lr_params(e, d)?;
                    let region = classify_lr_region(e)?;
                    let power = reduced_system(region, e, &self.constants(), self.r())?.clock_power();
                    let scale = (d as f64).powf(power);
                    let times: Vec<f64> = self.lr_taus().iter().map(|t| t * scale).collect();
                    let tr = evolve_5var(&LrState::at_rest(s0, r0), &params, &times, mode)?;
                    let rows = io::lr_trajectory_rows(&tr, params.r, Some(&params))?;
                    self.out.csv(&format!("lr_main_p{i}_d{d}.csv"), &rows)
                })();
                self.record(format!("point {i}, d = {d}"), outcome)?;
            }
        }
        Ok(())
    }

    fn reduced_rows(system: &ReducedSystem, taus: &[f64], xs: &[Vec<f64>], r: f64) -> Vec<ReducedRow> {
        let r_index = if system.dim() == 2 { 1 } else { 2 };
        taus.iter()
            .zip(xs)
            .map(|(&tau, x)| ReducedRow {
                tau,
                s: x[0],
                r_perp: x[r_index],
                alpha: alpha(x[0], x[r_index].max(0.0), r),
            })
            .collect()
    }

    fn lr_limit(&mut self) -> Result<()> {
        let [s0, r0] = self.lr_initial();
        let r = self.r();
        for (i, e) in self.cfg.points.clone().iter().enumerate() {
            let outcome = (|| {
                let region = classify_lr_region(e)?;
                let system = reduced_system(region, e, &self.constants(), r)?;
                let start = match system.dim() {
                    2 => vec![s0, r0],
                    _ => vec![s0, 0.0, r0, 0.0, 0.0],
                };
                let taus = self.lr_taus();
                let xs = system.evolve(&start, &taus)?;
                self.out.csv(&format!("lr_reduced_p{i}.csv"), &Self::reduced_rows(&system, &taus, &xs, r))?;
                self.out.json(&format!("lr_reduced_p{i}.json"), &system)
            })();
            self.record(format!("point {i}"), outcome)?;
        }
        Ok(())
    }

    fn lr_compare(&mut self) -> Result<()> {
        let [s0, r0] = self.lr_initial();
        let r = self.r();
        let mode = self.coeff_mode();
        for (i, e) in self.cfg.points.clone().iter().enumerate() {
            let outcome = (|| {
                let taus = self.lr_taus();
                let mut rows = Vec::new();
                let mut system = None;
                let mut region_tag = String::new();
                for &d in &self.cfg.d_list.clone() {
                    let cmp = compare_reduced(e, &self.constants(), r, d, s0, r0, &taus, mode)?;
                    let power = cmp.system.clock_power();
                    let full = Trajectory::new(
                        Clock::Slow { power },
                        taus.clone(),
                        cmp.full.clone(),
                        TrajectoryMeta::default(),
                    )?;
                    let full_rows = io::lr_trajectory_rows(&full, r, Some(&cmp.params))?;
                    self.out.csv(&format!("lr_full_p{i}_d{d}.csv"), &full_rows)?;
                    if system.is_none() {
                        let red = Self::reduced_rows(&cmp.system, &taus, &cmp.reduced, r);
                        self.out.csv(&format!("lr_reduced_p{i}.csv"), &red)?;
                    }
                    rows.push(report::LrConvergenceRow {
                        d,
                        sup_err_s: cmp.err_s,
                        sup_err_r_perp: cmp.err_r,
                    });
                    region_tag = cmp.region.tag().to_string();
                    system = Some(cmp.system);
                }
                let Some(system) = system else {
                    return Err(config::config_error("d_list", "no dimensions"));
                };
                let es: Vec<f64> = rows.iter().map(|r| r.sup_err_s).collect();
                let er: Vec<f64> = rows.iter().map(|r| r.sup_err_r_perp).collect();
                let summary = LrConvergenceSummary {
                    region_tag,
                    system,
                    monotone_s: report::is_nonincreasing(&es),
                    monotone_r_perp: report::is_nonincreasing(&er),
                    rows,
                };
                self.out.json(&format!("lr_convergence_p{i}.json"), &summary)
            })();
            self.record(format!("point {i}"), outcome)?;
        }
        Ok(())
    }

    fn lr_heatmap(&mut self) -> Result<()> {
        let grid = self.cfg.grid.expect("validated");
        let sigma = self.sigma_point()?.sigma;
        let cells = lr_heatmaps(&grid.kappas(), &grid.gammas(), sigma, &self.constants(), self.r())?;
        let empty = cells.iter().filter(|c| c.floor_value_or_exponent.is_nan()).count();
        if empty > 0 {
            self.warnings.push(format!("{empty} heatmap cells have no defined floor"));
        }
        self.out.csv("lr_heatmap.csv", &cells)
    }

    fn spectral(&mut self) -> Result<()> {
        let s = self.cfg.spectral.expect("validated");
        let outcome = (|| {
            let rep = spectral::spectral_conflict(s.vocab_size, s.zipf_exponent, s.d, s.batch, s.beta)?;
            self.out.csv("spectral_rows.csv", &rep.rows)?;
            let mut summary = rep.clone();
            summary.rows.clear();
            self.out.json("spectral_summary.json", &summary)
        })();
        self.record("spectral".into(), outcome)
    }
}

/// Executes one experiment and writes its manifest.
pub fn run(cfg: &ExperimentConfig) -> Result<Manifest> {
    cfg.validate()?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let clock = Instant::now();
    let mut run = Run {
        cfg,
        out: ArtifactWriter::new(&cfg.output_dir)?,
        cells: Vec::new(),
        warnings: Vec::new(),
    };
    match (cfg.model, cfg.mode) {
        (_, Mode::SpectralConflict) => run.spectral()?,
        (Model::Ls, Mode::Mc) => run.ls_mc()?,
        (Model::Ls, Mode::MainOde) => run.ls_main()?,
        (Model::Ls, Mode::LimitOde) => run.ls_limit()?,
        (Model::Ls, Mode::Compare) => run.ls_compare()?,
        (Model::Ls, Mode::Stability) => run.ls_stability()?,
        (Model::Ls, Mode::Heatmap) => run.ls_heatmap()?,
        (Model::Lr, Mode::Mc) => run.lr_mc()?,
        (Model::Lr, Mode::MainOde) => run.lr_main()?,
        (Model::Lr, Mode::LimitOde) => run.lr_limit()?,
        (Model::Lr, Mode::Compare) => run.lr_compare()?,
        (Model::Lr, Mode::Heatmap) => run.lr_heatmap()?,
        (Model::Lr, Mode::Stability) => {
            return Err(config::config_error("mode", "stability is defined for the least-squares model only"))
        }
    }
    let mut artifacts = run.out.written.clone();
    artifacts.push(MANIFEST_FILE.to_string());
    let manifest = Manifest {
        spec_version: io::SPEC_VERSION,
        tool: env!("CARGO_PKG_NAME").to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        model: serde_json::to_value(cfg.model)?.as_str().unwrap_or_default().to_string(),
        mode: serde_json::to_value(cfg.mode)?.as_str().unwrap_or_default().to_string(),
        started_unix_s: started,
        wall_time_s: clock.elapsed().as_secs_f64(),
        artifacts,
        warnings: run.warnings,
        cells: run.cells,
    };
    io::write_json(&cfg.output_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
