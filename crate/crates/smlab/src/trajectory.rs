//! Time-indexed state sequences shared by the ODE solvers and simulators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scaling::InstanceParams;

/// The time axis a trajectory is expressed on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Clock {
    /// Active-update index `t` (minibatches with at least one live sample).
    ActiveUpdate,
    /// Minibatch index `k`, counting empty minibatches too.
    Minibatch,
    /// Slow time `τ = t / d^power`.
    Slow { power: f64 },
}

impl Clock {
    /// Short name used in CSV `clock` columns.
    pub fn name(&self) -> &'static str {
        match self {
            Clock::ActiveUpdate => "t",
            Clock::Minibatch => "k",
            Clock::Slow { .. } => "tau",
        }
    }

    /// Factor `f` such that `time_on_this_clock = f · t`.
    fn from_active_factor(&self, p_batch: f64, d: f64) -> f64 {
        match *self {
            Clock::ActiveUpdate => 1.0,
            Clock::Minibatch => 1.0 / p_batch,
            Clock::Slow { power } => d.powf(-power),
        }
    }
}

/// Provenance attached to a trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<InstanceParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<String>,
}

/// A time grid with one state per grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<S> {
    pub clock: Clock,
    pub times: Vec<f64>,
    pub states: Vec<S>,
    pub meta: TrajectoryMeta,
}

impl<S> Trajectory<S> {
    pub fn new(clock: Clock, times: Vec<f64>, states: Vec<S>, meta: TrajectoryMeta) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} times but {} states",
                times.len(),
                states.len()
            )));
        }
        check_increasing(&times)?;
        Ok(Self {
            clock,
            times,
            states,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

impl<S: Clone> Trajectory<S> {
    /// Re-expresses the time axis on `target`.
    ///
    /// Active updates and minibatches differ by the mean inter-arrival time
    /// `1/P_batch`; slow clocks divide active updates by `d^power`.
    pub fn convert_clock(&self, target: Clock, p_batch: f64, d: f64) -> Result<Self> {
        if !(p_batch > 0.0 && p_batch <= 1.0) {
            return Err(Error::invalid("p_batch", format!("{p_batch} is outside (0, 1]")));
        }
        if !(d > 0.0) {
            return Err(Error::invalid("d", "must be positive"));
        }
        let to_active = 1.0 / self.clock.from_active_factor(p_batch, d);
        let from_active = target.from_active_factor(p_batch, d);
        let times = self
            .times
            .iter()
            .map(|&x| x * to_active * from_active)
            .collect();
        Ok(Self {
            clock: target,
            times,
            states: self.states.clone(),
            meta: self.meta.clone(),
        })
    }
}

pub(crate) fn check_increasing(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("times", "non-finite time value"));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("times", "must be strictly increasing"));
    }
    Ok(())
}

/// `n` points spaced logarithmically on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2, "log_grid needs 0 < lo < hi and n >= 2");
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// `n` points spaced evenly on `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(hi > lo && n >= 2, "linear_grid needs lo < hi and n >= 2");
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}
