//! CSV tables and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lr_dynamics::{kl_pop, LrParams, LrState};
use crate::ls_moment_ode::MomentState;
use crate::trajectory::{Clock, Trajectory};

/// Version of the manifest schema.
pub const SPEC_VERSION: u32 = 1;

/// Writes `rows` as a headed CSV file.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut wr = csv::Writer::from_path(path)?;
    for row in rows {
        wr.serialize(row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads a headed CSV file into rows.
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rd.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Least-squares trajectory row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsTrajectoryRow {
    pub clock: String,
    pub time: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "V")]
    pub v: f64,
    #[serde(rename = "C")]
    pub c: f64,
}

pub fn ls_trajectory_rows(traj: &Trajectory<MomentState>) -> Vec<LsTrajectoryRow> {
    traj.times
        .iter()
        .zip(&traj.states)
        .map(|(&time, s)| LsTrajectoryRow {
            clock: traj.clock.name().to_string(),
            time,
            r: s.r,
            v: s.v,
            c: s.c,
        })
        .collect()
}

/// Rebuilds a trajectory from rows; slow clocks need their power.
pub fn ls_trajectory_from_rows(rows: &[LsTrajectoryRow], slow_power: Option<f64>) -> Result<Trajectory<MomentState>> {
    let first = rows
        .first()
        .ok_or_else(|| Error::ShapeMismatch("empty trajectory table".into()))?;
    let clock = clock_from_name(&first.clock, slow_power)?;
    Trajectory::new(
        clock,
        rows.iter().map(|r| r.time).collect(),
        rows.iter().map(|r| MomentState::new(r.r, r.v, r.c)).collect(),
        Default::default(),
    )
}

fn clock_from_name(name: &str, slow_power: Option<f64>) -> Result<Clock> {
    match name {
        "t" => Ok(Clock::ActiveUpdate),
        "k" => Ok(Clock::Minibatch),
        "tau" => slow_power
            .map(|power| Clock::Slow { power })
            .ok_or_else(|| Error::invalid("clock", "slow clock needs its power")),
        other => Err(Error::invalid("clock", format!("unknown clock `{other}`"))),
    }
}

/// Logistic trajectory row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrTrajectoryRow {
    pub clock: String,
    pub time: f64,
    pub s: f64,
    pub u: f64,
    #[serde(rename = "R_perp")]
    pub r_perp: f64,
    #[serde(rename = "V_perp")]
    pub v_perp: f64,
    #[serde(rename = "C_perp")]
    pub c_perp: f64,
    pub alpha: f64,
    /// Population KL; NaN when not evaluated.
    pub kl: f64,
}

/// Rows of a logistic trajectory with `α` and, when `params` is given, the
/// population KL at each state.
pub fn lr_trajectory_rows(traj: &Trajectory<LrState>, r: f64, params: Option<&LrParams>) -> Result<Vec<LrTrajectoryRow>> {
    traj.times
        .iter()
        .zip(&traj.states)
        .map(|(&time, st)| {
            let kl = match params {
                Some(p) => kl_pop(st.s, st.r_perp.max(0.0), p)?,
                None => f64::NAN,
            };
            Ok(LrTrajectoryRow {
                clock: traj.clock.name().to_string(),
                time,
                s: st.s,
                u: st.u,
                r_perp: st.r_perp,
                v_perp: st.v_perp,
                c_perp: st.c_perp,
                alpha: st.alpha(r),
                kl,
            })
        })
        .collect()
}

/// Status of one sweep cell or sub-run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStatus {
    pub key: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Provenance record written next to every run's artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub config_hash: String,
    pub model: String,
    pub mode: String,
    pub started_unix_s: f64,
    pub wall_time_s: f64,
    pub artifacts: Vec<String>,
    pub warnings: Vec<String>,
    pub cells: Vec<CellStatus>,
}

impl Manifest {
    /// The manifest with its timing fields cleared, for comparisons.
    pub fn without_timestamps(&self) -> Self {
        Self {
            started_unix_s: 0.0,
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Collects artifact paths relative to the output directory.
#[derive(Debug)]
pub struct ArtifactWriter {
    pub dir: PathBuf,
    pub written: Vec<String>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        write_csv(&self.dir.join(name), rows)?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        write_json(&self.dir.join(name), value)?;
        self.written.push(name.to_string());
        Ok(())
    }
}
