//! Structured Gaussian-process identification of velocity-dependent damping
//! for Euler-Lagrange systems.
//!
//! The damping torque `tau = D(qd) qd` is modelled with matrix-vector
//! structured kernels (full or diagonal damping matrix). Because the
//! structured kernels carry no cross-output covariance, training splits into
//! one independent GP per output. Hypervariance constraints computed in
//! [`passivity`] make the estimated damping matrix positive semidefinite for
//! every velocity, so the identified model is passive.
//!
//! Modules:
//! - [`gp_core`]: Gram assembly, jittered Cholesky, posterior, and a dense
//!   stacked multi-output oracle used for testing.
//! - [`kernels`]: SE-ARD base kernel and the two structured torque kernels.
//! - [`models`]: ARD-GP baseline, Diag-D-GP and Full-D-GP estimators.
//! - [`passivity`]: bound factor, feasibility checks, enforcement, sweeps.
//! - [`bench`]: synthetic passive systems, sampling, noise, metrics.
//! - [`dataset`]: dataset type, domain boxes and the CSV format.

pub mod bench;
pub mod dataset;
pub mod error;
pub mod gp_core;
pub mod kernels;
pub mod linalg;
pub mod model_file;
pub mod models;
pub mod passivity;

pub use dataset::{BoxDomain, Dataset};
pub use error::{Error, Result};
pub use kernels::{DiagTorqueKernel, FullTorqueKernel, ScalarKernel, SeArdKernel};
pub use models::{FittedModel, ModelKernel, ModelKind, PriorMean};
pub use passivity::{Hypervariances, PassivityBound};
