//! Literal double-loop transcriptions of the estimator formulas.

use crate::dataset::TimeSeriesDataset;
use crate::kernel::{sided_kernel_weight, Side};
use ndarray::{Array1, Array2, ArrayView2};

/// Naive `sum_i w_i x_i x_i' / sum_i w_i`; `None` when every weight is 0.
pub fn smoothed_covariance(
    data: &TimeSeriesDataset,
    t: f64,
    h: f64,
    side: Side,
) -> Option<(Array2<f64>, f64)> {
    let p = data.p();
    let mut num = Array2::<f64>::zeros((p, p));
    let mut den = 0.0;
    for i in 0..data.n() {
        let w = sided_kernel_weight(data.times()[i] - t, h, side).unwrap();
        den += w;
        let x = data.row(i);
        for r in 0..p {
            for c in 0..p {
                num[[r, c]] += w * x[r] * x[c];
            }
        }
    }
    if den > 0.0 {
        Some((num / den, den))
    } else {
        None
    }
}

/// Naive weighted mean.
pub fn smoothed_mean(data: &TimeSeriesDataset, t: f64, h: f64, side: Side) -> Option<Array1<f64>> {
    let p = data.p();
    let mut num = Array1::<f64>::zeros(p);
    let mut den = 0.0;
    for i in 0..data.n() {
        let w = sided_kernel_weight(data.times()[i] - t, h, side).unwrap();
        den += w;
        for r in 0..p {
            num[r] += w * data.row(i)[r];
        }
    }
    if den > 0.0 {
        Some(num / den)
    } else {
        None
    }
}

/// The influence term `theta_j' [x x' theta_k - e_k]` evaluated literally.
fn influence(x: &ndarray::ArrayView1<f64>, columns: &ArrayView2<f64>, j: usize, k: usize) -> f64 {
    let p = columns.nrows();
    // y = x x' theta_k - e_k
    let mut xtk = 0.0;
    for r in 0..p {
        xtk += x[r] * columns[[r, k]];
    }
    let mut out = 0.0;
    for r in 0..p {
        let y = x[r] * xtk - if r == k { 1.0 } else { 0.0 };
        out += columns[[r, j]] * y;
    }
    out
}

/// Naive kernel-weighted average of squared influence terms.
pub fn variance_approx(
    data: &TimeSeriesDataset,
    t: f64,
    h: f64,
    side: Side,
    columns: &ArrayView2<f64>,
) -> Option<Array2<f64>> {
    let p = data.p();
    let mut num = Array2::<f64>::zeros((p, p));
    let mut den = 0.0;
    for i in 0..data.n() {
        let w = sided_kernel_weight(data.times()[i] - t, h, side).unwrap();
        den += w;
        if w == 0.0 {
            continue;
        }
        let x = data.row(i);
        for j in 0..p {
            for k in 0..p {
                let f = influence(&x, columns, j, k);
                num[[j, k]] += w * f * f;
            }
        }
    }
    if den > 0.0 {
        Some(num / den)
    } else {
        None
    }
}

/// Naive dense `n x |E|` bootstrap components plus the weight sum.
pub fn bootstrap_components(
    data: &TimeSeriesDataset,
    t: f64,
    h: f64,
    side: Side,
    columns: &ArrayView2<f64>,
    pairs: &[(usize, usize)],
) -> Option<(Array2<f64>, f64)> {
    let n = data.n();
    let mut out = Array2::<f64>::zeros((n, pairs.len()));
    let mut den = 0.0;
    for i in 0..n {
        let w = sided_kernel_weight(data.times()[i] - t, h, side).unwrap();
        den += w;
        if w == 0.0 {
            continue;
        }
        let x = data.row(i);
        for (e, &(j, k)) in pairs.iter().enumerate() {
            out[[i, e]] = w * influence(&x, columns, j, k);
        }
    }
    if den > 0.0 {
        Some((out, den))
    } else {
        None
    }
}
