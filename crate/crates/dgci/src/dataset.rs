//! Timestamped multivariate observations on the open unit interval.

use crate::error::{DgciError, Result};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// `n` observations of a `p`-dimensional process, each tagged with a time
/// in (0, 1). Rows may arrive in any order and times may repeat; every
/// estimator in this crate is invariant to row permutation.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    times: Array1<f64>,
    observations: Array2<f64>,
}

impl TimeSeriesDataset {
    /// Validates `n >= 2`, `p >= 2`, all times strictly inside (0, 1), and
    /// all values finite.
    pub fn new(times: Array1<f64>, observations: Array2<f64>) -> Result<Self> {
        let n = observations.nrows();
        let p = observations.ncols();
        if times.len() != n {
            return Err(DgciError::Config(format!(
                "times length {} does not match observation rows {}",
                times.len(),
                n
            )));
        }
        if n < 2 {
            return Err(DgciError::TooFewRows { min: 2, found: n });
        }
        if p < 2 {
            return Err(DgciError::TooFewColumns { min: 2, found: p });
        }
        for (i, &t) in times.iter().enumerate() {
            if !t.is_finite() || t <= 0.0 || t >= 1.0 {
                return Err(DgciError::OutOfRangeTime {
                    line: i + 2, // header is line 1 in the CSV layout
                    value: t,
                });
            }
        }
        for ((r, c), &x) in observations.indexed_iter() {
            if !x.is_finite() {
                return Err(DgciError::NonFinite { row: r, column: c });
            }
        }
        Ok(Self {
            times,
            observations,
        })
    }

    pub fn n(&self) -> usize {
        self.observations.nrows()
    }

    pub fn p(&self) -> usize {
        self.observations.ncols()
    }

    pub fn times(&self) -> ArrayView1<'_, f64> {
        self.times.view()
    }

    pub fn observations(&self) -> ArrayView2<'_, f64> {
        self.observations.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.observations.row(i)
    }

    /// Dataset with rows reordered by `perm` (a permutation of `0..n`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        if perm.len() != n {
            return Err(DgciError::Config(format!(
                "permutation length {} does not match n = {}",
                perm.len(),
                n
            )));
        }
        let mut seen = vec![false; n];
        for &i in perm {
            if i >= n || seen[i] {
                return Err(DgciError::Config("invalid permutation".into()));
            }
            seen[i] = true;
        }
        let times = Array1::from_iter(perm.iter().map(|&i| self.times[i]));
        let mut obs = Array2::<f64>::zeros((n, self.p()));
        for (dst, &src) in perm.iter().enumerate() {
            obs.row_mut(dst).assign(&self.observations.row(src));
        }
        Ok(Self {
            times,
            observations: obs,
        })
    }
}
