//! Sparse precision estimation and the de-biased entrywise estimators.
//!
//! Each precision column solves
//!
//! ```text
//!   minimize ||theta||_1   subject to   ||Sigma theta - e_j||_inf <= lambda
//! ```
//!
//! via a diagonally preconditioned primal-dual (Chambolle-Pock) iteration:
//! both proximal steps are soft thresholds and each iteration costs two
//! matrix-vector products. The dual of the column problem is
//!
//! ```text
//!   maximize -e_j' y - lambda ||y||_1   subject to   ||Sigma y||_inf <= 1,
//! ```
//!
//! so scaling any dual iterate into the feasible set yields a lower bound
//! on the optimum and a computable duality gap. The solver stops when the
//! constraint violation and the gap both clear their tolerances.

use crate::error::{DgciError, Result};
use crate::kernel::{KernelSpec, Side, SidedCovariance};
use crate::util::{pairwise_reduce, pairwise_sum_with};
use crate::TimeSeriesDataset;
use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;

/// De-bias denominators with magnitude below this floor mark the column as
/// degenerate at that time point.
pub const DENOMINATOR_FLOOR: f64 = 1e-10;

/// Normalizer entries below this floor mark the edge non-testable at that
/// time point.
pub const NORMALIZER_FLOOR: f64 = 1e-10;

/// Bandwidth rule `h = C1 * n^{-0.4}`, clamped into (0, 0.5].
///
/// A clamp is logged: it means the sample is too small for the requested
/// constant and the caller should treat results with care.
pub fn bandwidth_rule(n: usize, c1: f64) -> Result<f64> {
    if n < 2 {
        return Err(DgciError::Config(format!(
            "bandwidth rule needs n >= 2, got {n}"
        )));
    }
    if !c1.is_finite() || c1 <= 0.0 {
        return Err(DgciError::Config(format!(
            "bandwidth constant must be positive, got {c1}"
        )));
    }
    let raw = c1 * (n as f64).powf(-0.4);
    if raw > 0.5 {
        log::warn!("bandwidth {raw:.4} exceeds 0.5, clamping; consider a smaller C1");
        Ok(0.5)
    } else {
        Ok(raw)
    }
}

/// Penalty rule `lambda = C2 * (h + sqrt(log(n p / sqrt(h)) / (n h)))`.
pub fn penalty_rule(n: usize, p: usize, h: f64, c2: f64) -> Result<f64> {
    if n == 0 || p == 0 || !(h > 0.0) || !c2.is_finite() || c2 < 0.0 {
        return Err(DgciError::Config(format!(
            "penalty rule needs positive n, p, h and c2 >= 0 (n={n}, p={p}, h={h}, c2={c2})"
        )));
    }
    let arg = (n as f64) * (p as f64) / h.sqrt();
    if arg <= 1.0 {
        return Err(DgciError::NonPositiveLogArg { value: arg });
    }
    Ok(c2 * (h + (arg.ln() / (n as f64 * h)).sqrt()))
}

/// Bandwidth and penalty derived from the two tuning constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuningConfig {
    c1: f64,
    c2: f64,
    h: f64,
    lambda: f64,
}

impl TuningConfig {
    pub fn new(n: usize, p: usize, c1: f64, c2: f64) -> Result<Self> {
        let h = bandwidth_rule(n, c1)?;
        let lambda = penalty_rule(n, p, h, c2)?;
        Ok(Self { c1, c2, h, lambda })
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Stopping and safety knobs for the column solver.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Hard iteration cap per column.
    pub max_iter: usize,
    /// Relative duality-gap tolerance.
    pub gap_tol: f64,
    /// Allowed overshoot of the infinity-norm constraint.
    pub feas_tol: f64,
    /// Convergence is tested every this many iterations.
    pub check_every: usize,
    /// A dual lower bound beyond this declares the column infeasible.
    pub infeasible_cap: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 200_000,
            gap_tol: 1e-7,
            feas_tol: 1e-8,
            check_every: 25,
            infeasible_cap: 1e8,
        }
    }
}

fn soft(v: f64, k: f64) -> f64 {
    if v > k {
        v - k
    } else if v < -k {
        v + k
    } else {
        0.0
    }
}

/// Primal-dual iterate pair carried across warm starts.
#[derive(Debug, Clone)]
pub struct ColumnState {
    pub theta: Array1<f64>,
    pub y: Array1<f64>,
}

/// One CLIME column: minimum l1-norm vector with `||Sigma theta - e_j||_inf
/// <= lambda`.
pub fn clime_column(
    sigma: &ArrayView2<f64>,
    j: usize,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<Array1<f64>> {
    clime_column_warm(sigma, j, lambda, opts, None).map(|s| s.theta)
}

/// As [`clime_column`], optionally starting from the iterates of a nearby
/// problem (the grid sweep feeds each column the solution at the previous
/// grid time, which usually cuts the iteration count by an order of
/// magnitude).
///
/// Internally the matrix is normalized to unit diagonal scale; with
/// `theta' = s theta` and `Sigma' = Sigma / s` the constraint set is
/// unchanged and the minimizer rescales exactly, so this only improves
/// conditioning. Iterates are over-relaxed (factor 1.8), which stays
/// within the convergent range of the primal-dual scheme.
pub fn clime_column_warm(
    sigma: &ArrayView2<f64>,
    j: usize,
    lambda: f64,
    opts: &SolverOptions,
    warm: Option<&ColumnState>,
) -> Result<ColumnState> {
    let p = sigma.nrows();
    if sigma.ncols() != p {
        return Err(DgciError::Config("covariance must be square".into()));
    }
    if j >= p {
        return Err(DgciError::Config(format!("column {j} out of range 0..{p}")));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(DgciError::Config(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    // theta = 0 satisfies ||-e_j||_inf = 1 <= lambda and is l1-minimal.
    if lambda >= 1.0 {
        return Ok(ColumnState {
            theta: Array1::zeros(p),
            y: Array1::zeros(p),
        });
    }

    // Unit diagonal scale: solve with Sigma/s for theta' = s theta.
    let diag_max = (0..p).fold(0.0f64, |m, i| m.max(sigma[[i, i]].abs()));
    let s = if diag_max > 1e-300 { diag_max } else { 1.0 };
    let sigma = sigma.map(|v| v / s);

    // Diagonal preconditioner: tau_i = sigma_i = 1 / sum_k |Sigma_ik|.
    let mut step = Array1::<f64>::zeros(p);
    for i in 0..p {
        let rs: f64 = (0..p).map(|k| sigma[[i, k]].abs()).sum();
        step[i] = if rs > 1e-12 { 1.0 / rs } else { 1.0 };
    }

    // States cross grid times in original units; the dual rescales with s.
    let (mut theta, mut y) = match warm {
        Some(state) if state.theta.len() == p => {
            (state.theta.map(|v| v * s), state.y.map(|v| v * s))
        }
        _ => {
            let mut theta = Array1::<f64>::zeros(p);
            if sigma[[j, j]] > 0.0 {
                // Exact solution when Sigma is diagonal; a useful scale
                // otherwise.
                theta[j] = ((1.0 - lambda) / sigma[[j, j]]).max(0.0);
            }
            (theta, Array1::<f64>::zeros(p))
        }
    };
    let mut best_dual = f64::NEG_INFINITY;
    const RELAX: f64 = 1.8;

    let mut iter = 0usize;
    while iter < opts.max_iter {
        iter += 1;
        // Primal prox, then dual prox at the extrapolated primal point,
        // then over-relaxation of both.
        let sy = sigma.dot(&y);
        let mut theta_hat = Array1::<f64>::zeros(p);
        let mut extrap = Array1::<f64>::zeros(p);
        for i in 0..p {
            let next = soft(theta[i] - step[i] * sy[i], step[i]);
            theta_hat[i] = next;
            extrap[i] = 2.0 * next - theta[i];
        }
        let st = sigma.dot(&extrap);
        for i in 0..p {
            let e = if i == j { 1.0 } else { 0.0 };
            let w = y[i] + step[i] * (st[i] - e);
            let y_hat = soft(w, step[i] * lambda);
            y[i] += RELAX * (y_hat - y[i]);
            theta[i] += RELAX * (theta_hat[i] - theta[i]);
        }

        if iter % opts.check_every != 0 {
            continue;
        }
        let resid = sigma.dot(&theta);
        let mut viol = 0.0f64;
        for i in 0..p {
            let e = if i == j { 1.0 } else { 0.0 };
            viol = viol.max((resid[i] - e).abs());
        }
        let viol = (viol - lambda).max(0.0);
        let primal: f64 = theta.iter().map(|v| v.abs()).sum();
        // Scale the dual iterate into { y : ||Sigma y||_inf <= 1 }; the
        // scaled value is a lower bound on the primal optimum.
        let sy_now = sigma.dot(&y);
        let sy_inf = sy_now.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = sy_inf.max(1.0);
        let y_l1: f64 = y.iter().map(|v| v.abs()).sum();
        let dual = (-y[j] - lambda * y_l1) / scale;
        best_dual = best_dual.max(dual);

        if viol <= opts.feas_tol && primal - best_dual <= opts.gap_tol * primal.max(1.0) {
            return Ok(ColumnState {
                theta: theta.map(|v| v / s),
                y: y.map(|v| v / s),
            });
        }
        // Infeasibility certificate: along the ray r = y / ||y||_1 the
        // scaled dual value tends to g / s_r with g = -e_j'r - lambda and
        // s_r = ||Sigma r||_inf, and any scaling of r stays a valid lower
        // bound. A positive gain on a (numerical) kernel ray therefore
        // certifies a lower bound beyond any plausible optimum.
        if y_l1 > 1e-8 {
            let gain = (-y[j] - lambda * y_l1) / y_l1;
            let kernel_resid = sy_inf / y_l1;
            if gain > 1e-10 && gain > opts.infeasible_cap * kernel_resid {
                return Err(DgciError::Infeasible { column: j, lambda });
            }
        }
        if best_dual > opts.infeasible_cap {
            return Err(DgciError::Infeasible { column: j, lambda });
        }
    }
    Err(DgciError::NonConvergence {
        column: j,
        iterations: opts.max_iter,
    })
}

/// Column solutions plus the symmetrized matrix.
#[derive(Debug, Clone)]
pub struct PrecisionEstimate {
    pub at_time: f64,
    pub side: Side,
    /// Raw column solutions: column `j` of this matrix is `theta_j`.
    pub columns: Array2<f64>,
    /// Symmetrized matrix: for each pair the entry of smaller magnitude
    /// between `theta_jk` and `theta_kj` wins.
    pub matrix: Array2<f64>,
    pub lambda_used: f64,
}

/// Smaller-magnitude symmetrization of a raw column matrix: for each pair
/// the entry of smaller magnitude between `theta_jk` and `theta_kj` wins.
pub(crate) fn symmetrize_columns(columns: &Array2<f64>) -> Array2<f64> {
    let p = columns.nrows();
    let mut matrix = Array2::<f64>::zeros((p, p));
    for j in 0..p {
        matrix[[j, j]] = columns[[j, j]];
        for k in (j + 1)..p {
            let a = columns[[j, k]]; // theta_jk: entry j of column k
            let b = columns[[k, j]]; // theta_kj: entry k of column j
            let keep = if b.abs() < a.abs() { b } else { a };
            matrix[[j, k]] = keep;
            matrix[[k, j]] = keep;
        }
    }
    matrix
}

/// Solves every column against one smoothed covariance and symmetrizes.
///
/// Columns are independent problems and run in parallel; each column is
/// deterministic on its own, so the result does not depend on thread count.
pub fn clime_estimate(
    sigma: &SidedCovariance,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<PrecisionEstimate> {
    let p = sigma.matrix.nrows();
    let view = sigma.matrix.view();
    let cols: Vec<Result<Array1<f64>>> = (0..p)
        .into_par_iter()
        .map(|j| clime_column(&view, j, lambda, opts))
        .collect();
    let mut columns = Array2::<f64>::zeros((p, p));
    for (j, col) in cols.into_iter().enumerate() {
        let col = col?;
        for i in 0..p {
            columns[[i, j]] = col[i];
        }
    }
    let matrix = symmetrize_columns(&columns);
    Ok(PrecisionEstimate {
        at_time: sigma.at_time,
        side: sigma.side,
        columns,
        matrix,
        lambda_used: lambda,
    })
}

/// Entrywise de-biased estimate, built from the raw CLIME columns.
#[derive(Debug, Clone)]
pub struct DebiasedEstimate {
    pub at_time: f64,
    pub side: Side,
    /// `matrix[[j, k]]` holds the de-biased estimate of entry (j, k).
    pub matrix: Array2<f64>,
    /// `denominators[j]` is `theta_j' Sigma_j`, the value dividing every
    /// entry in row j.
    pub denominators: Array1<f64>,
    /// Rows whose denominator fell below [`DENOMINATOR_FLOOR`]; their
    /// entries keep the uncorrected value and must be masked downstream.
    pub degenerate: Vec<bool>,
}

fn debias_impl(theta: &PrecisionEstimate, sigma: &SidedCovariance) -> DebiasedEstimate {
    let p = theta.columns.nrows();
    // B = Sigma * columns; residual R = B - I; numerators N = columns' * R.
    let b = sigma.matrix.dot(&theta.columns);
    let mut r = b.clone();
    for i in 0..p {
        r[[i, i]] -= 1.0;
    }
    let n = theta.columns.t().dot(&r);
    let mut matrix = theta.columns.clone();
    let mut denominators = Array1::<f64>::zeros(p);
    let mut degenerate = vec![false; p];
    for j in 0..p {
        // theta_j' Sigma_j = (Sigma theta_j)_j by symmetry of Sigma.
        let d = b[[j, j]];
        denominators[j] = d;
        if d.abs() < DENOMINATOR_FLOOR {
            degenerate[j] = true;
            continue;
        }
        for k in 0..p {
            matrix[[j, k]] -= n[[j, k]] / d;
        }
    }
    DebiasedEstimate {
        at_time: theta.at_time,
        side: theta.side,
        matrix,
        denominators,
        degenerate,
    }
}

/// De-biased estimator; fails on the first degenerate denominator.
pub fn debias(theta: &PrecisionEstimate, sigma: &SidedCovariance) -> Result<DebiasedEstimate> {
    let out = debias_impl(theta, sigma);
    if let Some(j) = out.degenerate.iter().position(|&d| d) {
        return Err(DgciError::DegenerateDenominator {
            column: j,
            value: out.denominators[j],
            floor: DENOMINATOR_FLOOR,
        });
    }
    Ok(out)
}

/// De-biased estimator that records degenerate rows instead of failing;
/// the inference pipeline masks those pairs out of the sup-max.
pub fn debias_masked(theta: &PrecisionEstimate, sigma: &SidedCovariance) -> DebiasedEstimate {
    let out = debias_impl(theta, sigma);
    for (j, &deg) in out.degenerate.iter().enumerate() {
        if deg {
            log::warn!(
                "de-bias denominator for column {j} at t = {} ({:?}) is {:e}; masking row",
                out.at_time,
                out.side,
                out.denominators[j]
            );
        }
    }
    out
}

/// Kernel-weighted average of the squared influence terms:
/// entry (j, k) is `sum_i w_i (theta_j' [x_i x_i' theta_k - e_k])^2 / sum_i w_i`.
pub fn variance_approx(
    data: &TimeSeriesDataset,
    t: f64,
    side: Side,
    theta: &PrecisionEstimate,
    spec: &KernelSpec,
) -> Result<Array2<f64>> {
    let spec = spec.with_side(side);
    let p = data.p();
    let mut idx = Vec::new();
    let mut w = Vec::new();
    for (i, &ti) in data.times().iter().enumerate() {
        let wi = spec.weight(ti - t);
        if wi > 0.0 {
            idx.push(i);
            w.push(wi);
        }
    }
    if idx.is_empty() {
        return Err(DgciError::EmptyWindow {
            t,
            side,
            h: spec.h(),
        });
    }
    let weight_sum = pairwise_sum_with(w.len(), |k| w[k]);
    const BLOCK: usize = 16;
    let n_blocks = idx.len().div_ceil(BLOCK);
    let acc = pairwise_reduce(
        n_blocks,
        |bi| {
            let lo = bi * BLOCK;
            let hi = (lo + BLOCK).min(idx.len());
            let mut acc = Array2::<f64>::zeros((p, p));
            let mut v = vec![0.0; p];
            for m in lo..hi {
                let x = data.row(idx[m]);
                // v[j] = theta_j' x
                for j in 0..p {
                    let mut s = 0.0;
                    for i in 0..p {
                        s += theta.columns[[i, j]] * x[i];
                    }
                    v[j] = s;
                }
                let wm = w[m];
                for j in 0..p {
                    for k in 0..p {
                        let inner = v[j] * v[k] - theta.columns[[k, j]];
                        acc[[j, k]] += wm * inner * inner;
                    }
                }
            }
            acc
        },
        |a, b| *a += &b,
    )
    .expect("window checked non-empty");
    Ok(acc / weight_sum)
}

/// Per-edge normalizers `sqrt(sigma2_plus + sigma2_minus)` with the
/// non-testable mask for entries under [`NORMALIZER_FLOOR`].
#[derive(Debug, Clone)]
pub struct VarianceField {
    pub at_time: f64,
    pub sigma_plus_sq: Array2<f64>,
    pub sigma_minus_sq: Array2<f64>,
    pub normalizer: Array2<f64>,
    pub non_testable: Array2<bool>,
}

impl VarianceField {
    pub fn new(at_time: f64, sigma_plus_sq: Array2<f64>, sigma_minus_sq: Array2<f64>) -> Self {
        let (normalizer, non_testable) = normalizer(&sigma_plus_sq, &sigma_minus_sq);
        Self {
            at_time,
            sigma_plus_sq,
            sigma_minus_sq,
            normalizer,
            non_testable,
        }
    }
}

/// Entrywise `sqrt(plus + minus)` plus a flag matrix marking entries below
/// [`NORMALIZER_FLOOR`].
pub fn normalizer(plus_sq: &Array2<f64>, minus_sq: &Array2<f64>) -> (Array2<f64>, Array2<bool>) {
    let p = plus_sq.nrows();
    let mut norm = Array2::<f64>::zeros((p, p));
    let mut flags = Array2::from_elem((p, p), false);
    for j in 0..p {
        for k in 0..p {
            let s = (plus_sq[[j, k]] + minus_sq[[j, k]]).max(0.0).sqrt();
            norm[[j, k]] = s;
            if s < NORMALIZER_FLOOR {
                flags[[j, k]] = true;
            }
        }
    }
    (norm, flags)
}
