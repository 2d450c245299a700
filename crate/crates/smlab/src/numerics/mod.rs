//! Shared numerical kernels: random streams and samplers, Gauss–Hermite
//! quadrature, exact 3×3 linear flows, adaptive ODE integration, scalar root
//! finding and streaming statistics.

pub mod linalg;
pub mod ode;
pub mod quadrature;
pub mod rng;
pub mod roots;
pub mod stats;

pub use linalg::{char_coeffs, eig3, expm3, Eigen3, FlowMethod, LinearFlow, EIG_COND_LIMIT};
pub use ode::{implicit_trapezoid, integrate, rk_adaptive, OdeMethod, OdeStats, RkOptions};
pub use quadrature::{gauss_hermite, QuadratureRule};
pub use rng::RngStream;
pub use roots::{bisect_1d, cubic_roots, newton_1d};
pub use stats::{linear_fit, loglog_slope, two_sample_z, Welford};
