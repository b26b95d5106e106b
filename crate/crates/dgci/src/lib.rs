//! Change-point inference for time-varying Gaussian graphical models.
//!
//! Given timestamped multivariate observations, this crate tests whether
//! the precision matrix (inverse covariance) jumps anywhere along the time
//! course. Left- and right-sided kernel-smoothed covariances feed sparse
//! precision estimates, whose de-biased entrywise differences form a
//! normalized sup-max statistic; a Gaussian multiplier bootstrap calibrates
//! its rejection threshold and yields per-time rejected edge sets.
//!
//! The pipeline, in order:
//! 1. [`kernel`] — Epanechnikov kernel, one-sided windows, smoothed
//!    covariance and mean estimators.
//! 2. [`precision`] — constrained l1 precision columns, de-biased
//!    side-specific estimates, and per-edge variance normalizers.
//! 3. [`inference`] — the sup-max statistic, multiplier bootstrap,
//!    quantile threshold, rejected edge sets, and change-point
//!    localization.
//! 4. [`simgen`] / [`harness`] — synthetic scenarios and the Monte Carlo
//!    experiment driver.
//! 5. [`io`] / [`cli`] — CSV/JSON formats and the command-line front end.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod inference;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod precision;
pub mod simgen;
pub mod util;

#[cfg(feature = "testkit")]
pub mod testkit;

pub use dataset::TimeSeriesDataset;
pub use error::{DgciError, ErrorClass, Result};
pub use inference::{run_test, BootstrapConfig, EdgeSet, GridSpec, TestResult};
pub use kernel::{KernelSpec, Side};
pub use precision::TuningConfig;
