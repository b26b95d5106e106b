//! Independent oracles for the test suites (enabled via the `testkit`
//! feature, which the dev-dependency on this crate turns on).
//!
//! Nothing here shares code with the production estimators: the LP oracle
//! is a dense two-phase simplex, and the direct-sum oracles are literal
//! double-loop transcriptions of the estimator definitions.

pub mod naive;
pub mod quadrature;
pub mod simplex;

use crate::dataset::TimeSeriesDataset;
use ndarray::{Array1, Array2};
use rand::{Rng, RngExt};

/// Random symmetric positive definite matrix with eigenvalues bounded away
/// from zero.
pub fn random_spd(p: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut a = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        for j in 0..p {
            a[[i, j]] = rng.random_range(-1.0..1.0);
        }
    }
    let mut spd = a.t().dot(&a) / p as f64;
    for i in 0..p {
        spd[[i, i]] += 0.3;
    }
    spd
}

/// Random dataset with times away from the boundary.
pub fn random_dataset(n: usize, p: usize, rng: &mut impl Rng) -> TimeSeriesDataset {
    let times = Array1::from_iter((0..n).map(|_| rng.random_range(0.05..0.95)));
    let mut obs = Array2::<f64>::zeros((n, p));
    for i in 0..n {
        for j in 0..p {
            obs[[i, j]] = rng.random_range(-2.0..2.0);
        }
    }
    TimeSeriesDataset::new(times, obs).expect("generated data is valid")
}
