//! Epanechnikov kernel, one-sided variants, and kernel-smoothed second
//! moment / mean estimators.
//!
//! The two-sided kernel weight at bandwidth `h` is `K(u/h)/h` with
//! `K(u) = 0.75 (1 - u^2)` on `|u| <= 1`. The one-sided weights double the
//! two-sided weight and keep only observations strictly right (`u > 0`) or
//! strictly left (`u < 0`) of the evaluation point, so each side still
//! integrates to one. An observation exactly at the evaluation point
//! contributes to neither side.

use crate::dataset::TimeSeriesDataset;
use crate::error::{DgciError, Result};
use crate::util::{pairwise_reduce, pairwise_sum_with};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// Which observations a kernel window admits relative to the evaluation
/// point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    TwoSided,
    Left,
    Right,
}

/// Epanechnikov kernel `0.75 (1 - u^2)` on `|u| <= 1`, zero outside.
pub fn epanechnikov(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

/// Bandwidth plus side selector. `h` must lie in (0, 0.5] so that interior
/// evaluation points have both one-sided windows inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    h: f64,
    side: Side,
}

impl KernelSpec {
    pub fn new(h: f64, side: Side) -> Result<Self> {
        if !h.is_finite() || h <= 0.0 || h > 0.5 {
            return Err(DgciError::Config(format!(
                "bandwidth must lie in (0, 0.5], got {h}"
            )));
        }
        Ok(Self { h, side })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn with_side(&self, side: Side) -> Self {
        Self { h: self.h, side }
    }

    /// Kernel weight at offset `u = t_i - t`. Infallible because `h` was
    /// validated at construction.
    pub fn weight(&self, u: f64) -> f64 {
        match self.side {
            Side::TwoSided => epanechnikov(u / self.h) / self.h,
            Side::Right => {
                if u > 0.0 {
                    2.0 * epanechnikov(u / self.h) / self.h
                } else {
                    0.0
                }
            }
            Side::Left => {
                if u < 0.0 {
                    2.0 * epanechnikov(u / self.h) / self.h
                } else {
                    0.0
                }
            }
        }
    }
}

/// Checked free-function form of the sided kernel weight; rejects
/// non-positive bandwidths.
pub fn sided_kernel_weight(u: f64, h: f64, side: Side) -> Result<f64> {
    if !h.is_finite() || h <= 0.0 {
        return Err(DgciError::Config(format!(
            "bandwidth must be positive, got {h}"
        )));
    }
    Ok(KernelSpec { h, side }.weight(u))
}

/// Kernel-smoothed covariance (second moment) at one evaluation point.
#[derive(Debug, Clone)]
pub struct SidedCovariance {
    pub at_time: f64,
    pub side: Side,
    /// Exactly symmetric p x p matrix.
    pub matrix: Array2<f64>,
    /// Sum of kernel weights over all observations (the denominator).
    pub effective_weight: f64,
}

/// Observation indices with positive weight, in original row order, plus
/// their weights.
fn window(data: &TimeSeriesDataset, t: f64, spec: &KernelSpec) -> (Vec<usize>, Vec<f64>) {
    let mut idx = Vec::new();
    let mut w = Vec::new();
    for (i, &ti) in data.times().iter().enumerate() {
        let wi = spec.weight(ti - t);
        if wi > 0.0 {
            idx.push(i);
            w.push(wi);
        }
    }
    (idx, w)
}

const OUTER_BLOCK: usize = 16;

/// Weighted second-moment estimate `sum_i w_i x_i x_i^T / sum_i w_i` with
/// `w_i` the sided kernel weight at `t_i - t`.
///
/// Accumulation runs over observations in original row order with a
/// pairwise combination tree, so the result does not depend on the caller's
/// thread count and permuting rows moves the result by at most summation
/// round-off.
pub fn smoothed_covariance(
    data: &TimeSeriesDataset,
    t: f64,
    spec: &KernelSpec,
) -> Result<SidedCovariance> {
    let (idx, w) = window(data, t, spec);
    if idx.is_empty() {
        return Err(DgciError::EmptyWindow {
            t,
            side: spec.side(),
            h: spec.h(),
        });
    }
    let p = data.p();
    let n_blocks = idx.len().div_ceil(OUTER_BLOCK);
    // Lower triangle of sum_i w_i x_i x_i^T, combined pairwise over blocks.
    let lower = pairwise_reduce(
        n_blocks,
        |b| {
            let lo = b * OUTER_BLOCK;
            let hi = (lo + OUTER_BLOCK).min(idx.len());
            let mut acc = Array2::<f64>::zeros((p, p));
            for k in lo..hi {
                let x = data.row(idx[k]);
                let wk = w[k];
                for r in 0..p {
                    let wx = wk * x[r];
                    for c in 0..=r {
                        acc[[r, c]] += wx * x[c];
                    }
                }
            }
            acc
        },
        |a, b| *a += &b,
    )
    .expect("window checked non-empty");
    let weight_sum = pairwise_sum_with(w.len(), |k| w[k]);
    let mut matrix = lower;
    for r in 0..p {
        for c in 0..r {
            matrix[[r, c]] /= weight_sum;
            matrix[[c, r]] = matrix[[r, c]];
        }
        matrix[[r, r]] /= weight_sum;
    }
    Ok(SidedCovariance {
        at_time: t,
        side: spec.side(),
        matrix,
        effective_weight: weight_sum,
    })
}

/// Weighted mean `sum_i w_i x_i / sum_i w_i`, same windowing rules as
/// [`smoothed_covariance`].
pub fn smoothed_mean(data: &TimeSeriesDataset, t: f64, spec: &KernelSpec) -> Result<Array1<f64>> {
    let (idx, w) = window(data, t, spec);
    if idx.is_empty() {
        return Err(DgciError::EmptyWindow {
            t,
            side: spec.side(),
            h: spec.h(),
        });
    }
    let p = data.p();
    let n_blocks = idx.len().div_ceil(OUTER_BLOCK);
    let sum = pairwise_reduce(
        n_blocks,
        |b| {
            let lo = b * OUTER_BLOCK;
            let hi = (lo + OUTER_BLOCK).min(idx.len());
            let mut acc = Array1::<f64>::zeros(p);
            for k in lo..hi {
                let x = data.row(idx[k]);
                let wk = w[k];
                for r in 0..p {
                    acc[r] += wk * x[r];
                }
            }
            acc
        },
        |a, b| *a += &b,
    )
    .expect("window checked non-empty");
    let weight_sum = pairwise_sum_with(w.len(), |k| w[k]);
    Ok(sum / weight_sum)
}
