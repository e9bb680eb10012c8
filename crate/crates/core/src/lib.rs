//! Steady-state Kalman estimation accuracy of sensor networks, the effect of
//! adding redundant sensors, and optimization-based design of redundant
//! sensor output matrices.
//!
//! Modules:
//! - [`model`]: plant, sensors, and the standing-assumption checks.
//! - [`riccati`]: DARE solvers (fixed point and symplectic subspace).
//! - [`analysis`]: covariance ordering, trace gap and the spectral test for
//!   strict improvement.
//! - [`extended`]: double-double kernels for resolving covariance differences.
//! - [`sdp`]: a small dense LMI modeling layer with an interior-point solver.
//! - [`design`]: the iterative convexified design of redundant sensors.
//! - [`simulate`]: Monte-Carlo Kalman filtering.

pub mod analysis;
pub mod design;
pub mod error;
pub mod extended;
pub mod linalg;
pub mod model;
pub mod riccati;
pub mod sdp;
pub mod simulate;
pub mod testkit;

pub use error::{Error, Result};
pub use model::{LinearSystem, Sensor, SensorBank};
pub use riccati::{DareMethod, DareSolution};
