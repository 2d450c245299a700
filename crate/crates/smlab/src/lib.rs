//! Second-moment dynamics of SGD with heavy-ball momentum under sparse,
//! Bernoulli-gated updates.
//!
//! The crate covers two models. For least squares it builds the exact 3×3
//! moment ODE, its stability ceiling, the per-region high-dimensional limits
//! and a Monte Carlo simulator. For rare-class logistic regression it provides
//! the five-variable moment ODE, its reduced systems and equilibria, and a
//! matching simulator. A CLI in `src/bin` drives sweeps and writes CSV/JSON.

pub mod error;
pub mod harness;
pub mod lr_dynamics;
pub mod lr_mc;
pub mod ls_limits;
pub mod ls_mc;
pub mod ls_moment_ode;
pub mod numerics;
pub mod scaling;
pub mod stability;
pub mod trajectory;

pub use error::{Error, Result};
