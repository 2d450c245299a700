//! Command-line front end. Each subcommand builds an experiment
//! configuration from its flags (or loads one with `--config`) and runs it.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use smlab::harness::{parse_config, run, ExperimentConfig, GridSpec, Mode, Model, SpectralSpec};
use smlab::lr_dynamics::CoeffMode;
use smlab::scaling::{instantiate, ScalingConstants, ScalingExponents};
use smlab::stability::{find_eta_max_params, verdict_for};

#[derive(Parser, Debug)]
#[command(name = "smlab", version, about = "Second-moment dynamics of sparse momentum SGD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Least-squares moment ODE at finite d.
    LsOde(Common),
    /// Least-squares Monte Carlo ensemble.
    LsMc(Common),
    /// Least-squares high-dimensional limit.
    LsLimit(Common),
    /// Least-squares main ODE against its limit over d.
    LsCompare(Common),
    /// Stability ceiling at one point; prints JSON.
    Stability {
        #[command(flatten)]
        common: Common,
        /// Learning rate whose Routh–Hurwitz verdict is also reported.
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Region tags and stability ceilings over a (kappa, gamma) grid.
    PhaseMap {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Least-squares risk heatmap under a nonzero-gradient budget.
    LsHeatmap {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        budget_factor: Option<f64>,
    },
    /// Logistic five-variable moment ODE.
    LrOde(Common),
    /// Logistic Monte Carlo ensemble.
    LrMc(Common),
    /// Logistic full ODE against its reduced system over d.
    LrCompare(Common),
    /// Logistic floor and convergence-time maps.
    LrHeatmap {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Per-token sparsity regions of a Zipfian vocabulary.
    SpectralConflict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        vocab_size: u64,
        #[arg(long, default_value_t = 1.0)]
        zipf_exponent: f64,
        #[arg(long)]
        batch: f64,
        #[arg(long)]
        beta: f64,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON configuration; when given it replaces every other flag.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Dimensions, comma separated.
    #[arg(long, value_delimiter = ',')]
    d: Vec<u64>,
    #[arg(long)]
    p_star: Option<f64>,
    #[arg(long)]
    b_star: Option<f64>,
    #[arg(long)]
    eps_star: Option<f64>,
    #[arg(long)]
    eta_star: Option<f64>,
    #[arg(long)]
    n_seeds: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    record_every: Option<u64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    n_times: Option<usize>,
    /// Logistic signal norm.
    #[arg(long)]
    r: Option<f64>,
    /// Logistic initial signal error.
    #[arg(long)]
    s0: Option<f64>,
    /// Logistic initial orthogonal second moment.
    #[arg(long)]
    r0: Option<f64>,
    #[arg(long, value_parser = parse_coeff_mode)]
    coeff_mode: Option<CoeffMode>,
}

#[derive(Args, Debug, Clone, Copy)]
struct GridArgs {
    #[arg(long, default_value_t = 0.0)]
    kappa_min: f64,
    #[arg(long, default_value_t = 3.0)]
    kappa_max: f64,
    #[arg(long, default_value_t = 40)]
    n_kappa: usize,
    #[arg(long, default_value_t = 0.0)]
    gamma_min: f64,
    #[arg(long, default_value_t = 2.0)]
    gamma_max: f64,
    #[arg(long, default_value_t = 40)]
    n_gamma: usize,
}

fn parse_coeff_mode(s: &str) -> Result<CoeffMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("`{s}` is not exact or tame"))
}

impl Common {
    fn point(&self) -> Option<ScalingExponents> {
        match (self.kappa, self.sigma, self.gamma) {
            (Some(k), Some(s), Some(g)) => Some(ScalingExponents::new(k, s, g)),
            (None, Some(s), _) => Some(ScalingExponents::new(0.0, s, self.gamma.unwrap_or(0.0))),
            _ => None,
        }
    }

    fn constants(&self) -> Option<ScalingConstants> {
        if [self.p_star, self.b_star, self.eps_star, self.eta_star].iter().all(Option::is_none) {
            return None;
        }
        let base = ScalingConstants::default();
        Some(ScalingConstants {
            p_star: self.p_star.unwrap_or(base.p_star),
            b_star: self.b_star.unwrap_or(base.b_star),
            eps_star: self.eps_star.unwrap_or(base.eps_star),
            eta_star: self.eta_star.unwrap_or(base.eta_star),
        })
    }

    fn config(&self, model: Model, mode: Mode) -> smlab::Result<ExperimentConfig> {
        if let Some(path) = &self.config {
            return parse_config(&std::fs::read_to_string(path)?);
        }
        let mut cfg = ExperimentConfig::new(model, mode, self.out.clone());
        cfg.points = self.point().into_iter().collect();
        cfg.constants = self.constants();
        cfg.d_list = self.d.clone();
        cfg.seed = self.seed;
        cfg.n_seeds = self.n_seeds;
        cfg.r = self.r;
        cfg.lr_initial = match (self.s0, self.r0) {
            (None, None) => None,
            (s, r) => Some([s.unwrap_or(0.0), r.unwrap_or(0.0)]),
        };
        cfg.coeff_mode = self.coeff_mode;
        cfg.n_times = self.n_times;
        cfg.t_end = self.t_end;
        cfg.steps = self.steps;
        cfg.record_every = self.record_every;
        Ok(cfg)
    }
}

impl From<GridArgs> for GridSpec {
    fn from(g: GridArgs) -> Self {
        GridSpec {
            kappa_min: g.kappa_min,
            kappa_max: g.kappa_max,
            n_kappa: g.n_kappa,
            gamma_min: g.gamma_min,
            gamma_max: g.gamma_max,
            n_gamma: g.n_gamma,
        }
    }
}

fn build(cmd: &Command) -> smlab::Result<ExperimentConfig> {
    let with_grid = |common: &Common, model, mode, grid: &GridArgs| -> smlab::Result<ExperimentConfig> {
        let mut cfg = common.config(model, mode)?;
        if common.config.is_none() {
            cfg.grid = Some((*grid).into());
        }
        Ok(cfg)
    };
    match cmd {
        Command::LsOde(c) => c.config(Model::Ls, Mode::MainOde),
        Command::LsMc(c) => c.config(Model::Ls, Mode::Mc),
        Command::LsLimit(c) => c.config(Model::Ls, Mode::LimitOde),
        Command::LsCompare(c) => c.config(Model::Ls, Mode::Compare),
        Command::Stability { common, .. } => common.config(Model::Ls, Mode::Stability),
        Command::PhaseMap { common, grid } => with_grid(common, Model::Ls, Mode::Stability, grid),
        Command::LsHeatmap {
            common,
            grid,
            budget_factor,
        } => {
            let mut cfg = with_grid(common, Model::Ls, Mode::Heatmap, grid)?;
            if common.config.is_none() {
                cfg.budget_factor = *budget_factor;
            }
            Ok(cfg)
        }
        Command::LrOde(c) => c.config(Model::Lr, Mode::MainOde),
        Command::LrMc(c) => c.config(Model::Lr, Mode::Mc),
        Command::LrCompare(c) => c.config(Model::Lr, Mode::Compare),
        Command::LrHeatmap { common, grid } => with_grid(common, Model::Lr, Mode::Heatmap, grid),
        Command::SpectralConflict {
            common,
            vocab_size,
            zipf_exponent,
            batch,
            beta,
        } => {
            let mut cfg = common.config(Model::Lr, Mode::SpectralConflict)?;
            if common.config.is_none() {
                let d = *common.d.first().unwrap_or(&4096);
                cfg.spectral = Some(SpectralSpec {
                    vocab_size: *vocab_size,
                    zipf_exponent: *zipf_exponent,
                    d,
                    batch: *batch,
                    beta: *beta,
                });
                cfg.d_list.clear();
            }
            Ok(cfg)
        }
    }
}

/// JSON verdict of the `stability` subcommand for a single point and `d`.
fn stability_json(common: &Common, eta: Option<f64>) -> smlab::Result<Option<serde_json::Value>> {
    if common.config.is_some() || common.d.len() != 1 {
        return Ok(None);
    }
    let Some(e) = common.point() else { return Ok(None) };
    let inst = instantiate(&e, &common.constants().unwrap_or_default(), common.d[0])?;
    let em = find_eta_max_params(&inst.params)?;
    let mut out = serde_json::json!({ "params": inst.params, "eta_max": em });
    if let Some(eta) = eta {
        out["eta"] = eta.into();
        out["verdict"] = serde_json::to_value(verdict_for(&inst.params.with_eta(eta))?)?;
    }
    Ok(Some(out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| -> smlab::Result<bool> {
        if let Command::Stability { common, eta } = &cli.command {
            if let Some(v) = stability_json(common, *eta)? {
                println!("{}", serde_json::to_string_pretty(&v)?);
            }
        }
        let cfg = build(&cli.command)?;
        let manifest = run(&cfg)?;
        for w in &manifest.warnings {
            eprintln!("warning: {w}");
        }
        let failed: Vec<_> = manifest.cells.iter().filter(|c| !c.ok).collect();
        for c in &failed {
            eprintln!("failed: {}: {}", c.key, c.error.as_deref().unwrap_or(""));
        }
        eprintln!(
            "wrote {} artifacts to {} ({} of {} cells ok)",
            manifest.artifacts.len(),
            cfg.output_dir.display(),
            manifest.cells.len() - failed.len(),
            manifest.cells.len()
        );
        Ok(failed.is_empty())
    })();
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
