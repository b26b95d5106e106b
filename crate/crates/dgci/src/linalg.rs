//! Small dense symmetric linear algebra used by the estimators and the
//! scenario generators.
//!
//! Everything here is single-threaded with a fixed operation order, which
//! keeps results bit-identical across thread counts. Matrices in this crate
//! are small (p up to a few hundred), so cyclic Jacobi and unblocked
//! Cholesky are both fast enough and easy to audit.

use crate::error::{DgciError, Result};
use ndarray::{Array1, Array2, ArrayView2};

/// Eigendecomposition of a symmetric matrix. `values` are ascending;
/// `vectors` holds the matching eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

/// Cyclic Jacobi eigendecomposition for a symmetric matrix.
///
/// Sweeps over the strict upper triangle until the off-diagonal Frobenius
/// norm falls below `1e-14` relative to the matrix scale (at most 60
/// sweeps, far more than p <= 500 ever needs).
pub fn sym_eigen(a: &ArrayView2<f64>) -> SymEigen {
    let p = a.nrows();
    assert_eq!(p, a.ncols(), "sym_eigen needs a square matrix");
    let mut m = a.to_owned();
    let mut v = Array2::<f64>::eye(p);

    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    for _sweep in 0..60 {
        let mut off = 0.0;
        for i in 0..p {
            for j in (i + 1)..p {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for i in 0..p - 1 {
            for j in (i + 1)..p {
                let apq = m[[i, j]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[[i, i]];
                let aqq = m[[j, j]];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (tau - (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Row rotation then column rotation keeps m symmetric.
                for k in 0..p {
                    let mik = m[[i, k]];
                    let mjk = m[[j, k]];
                    m[[i, k]] = c * mik - s * mjk;
                    m[[j, k]] = s * mik + c * mjk;
                }
                for k in 0..p {
                    let mki = m[[k, i]];
                    let mkj = m[[k, j]];
                    m[[k, i]] = c * mki - s * mkj;
                    m[[k, j]] = s * mki + c * mkj;
                }
                for k in 0..p {
                    let vki = v[[k, i]];
                    let vkj = v[[k, j]];
                    v[[k, i]] = c * vki - s * vkj;
                    v[[k, j]] = s * vki + c * vkj;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&x, &y| m[[x, x]].partial_cmp(&m[[y, y]]).unwrap().then(x.cmp(&y)));
    let values = Array1::from_iter(order.iter().map(|&k| m[[k, k]]));
    let mut vectors = Array2::<f64>::zeros((p, p));
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..p {
            vectors[[r, dst]] = v[[r, src]];
        }
    }
    SymEigen { values, vectors }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &ArrayView2<f64>) -> f64 {
    sym_eigen(a).values[0]
}

/// Unblocked lower Cholesky factor of an SPD matrix.
///
/// Fails with [`DgciError::NotSpd`] when a pivot is non-positive or
/// non-finite.
pub fn cholesky(a: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let p = a.nrows();
    if p != a.ncols() {
        return Err(DgciError::NotSpd);
    }
    let mut l = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(DgciError::NotSpd);
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solve `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &ArrayView2<f64>, b: &[f64]) -> Vec<f64> {
    let p = b.len();
    let mut x = vec![0.0; p];
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solve `L^T x = b` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &ArrayView2<f64>, b: &[f64]) -> Vec<f64> {
    let p = b.len();
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = b[i];
        for k in (i + 1)..p {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Inverse of an SPD matrix via Cholesky, symmetrized before returning.
pub fn spd_inverse(a: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let p = a.nrows();
    let l = cholesky(a)?;
    let lv = l.view();
    let mut inv = Array2::<f64>::zeros((p, p));
    let mut e = vec![0.0; p];
    for j in 0..p {
        e[j] = 1.0;
        let y = solve_lower(&lv, &e);
        let x = solve_lower_transpose(&lv, &y);
        for i in 0..p {
            inv[[i, j]] = x[i];
        }
        e[j] = 0.0;
    }
    for i in 0..p {
        for j in 0..i {
            let m = 0.5 * (inv[[i, j]] + inv[[j, i]]);
            inv[[i, j]] = m;
            inv[[j, i]] = m;
        }
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn eigen_of_diagonal_is_sorted_diagonal() {
        let a = array![[3.0, 0.0], [0.0, -1.0]];
        let e = sym_eigen(&a.view());
        assert_abs_diff_eq!(e.values[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn eigen_reconstructs_matrix() {
        let a = array![
            [4.0, 1.0, 0.5],
            [1.0, 3.0, -0.2],
            [0.5, -0.2, 2.0],
        ];
        let e = sym_eigen(&a.view());
        let lam = Array2::from_diag(&e.values);
        let rec = e.vectors.dot(&lam).dot(&e.vectors.t());
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(rec[[i, j]], a[[i, j]], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn eigen_known_2x2() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let e = sym_eigen(&a.view());
        assert_abs_diff_eq!(e.values[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(cholesky(&a.view()), Err(DgciError::NotSpd)));
    }

    #[test]
    fn cholesky_and_inverse_agree() {
        let a = array![
            [2.5, 0.4, 0.1],
            [0.4, 1.8, -0.3],
            [0.1, -0.3, 1.2],
        ];
        let inv = spd_inverse(&a.view()).unwrap();
        let prod = a.dot(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(prod[[i, j]], expect, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn triangular_solves_invert_factor() {
        let a = array![[4.0, 2.0], [2.0, 3.0]];
        let l = cholesky(&a.view()).unwrap();
        let b = vec![1.0, -1.0];
        let y = solve_lower(&l.view(), &b);
        let x = solve_lower_transpose(&l.view(), &y);
        // a * x should equal b
        let r0 = a[[0, 0]] * x[0] + a[[0, 1]] * x[1];
        let r1 = a[[1, 0]] * x[0] + a[[1, 1]] * x[1];
        assert_abs_diff_eq!(r0, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r1, -1.0, epsilon = 1e-12);
    }
}
