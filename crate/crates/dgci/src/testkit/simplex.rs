//! Dense two-phase simplex oracle for the constrained l1 column problem.
//!
//! Solves `min ||theta||_1 s.t. ||Sigma theta - e_j||_inf <= lambda` as a
//! standard-form LP with split variables `theta = u - v` and one slack per
//! inequality, using Bland's rule throughout. Small and slow by design;
//! it exists to validate the production first-order solver, not to be it.

use ndarray::{Array1, Array2, ArrayView2};

const TOL: f64 = 1e-9;

/// Outcome of the LP oracle.
#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal { theta: Array1<f64>, objective: f64 },
    Infeasible,
}

struct Tableau {
    /// m x (n + 1); the last column is the right-hand side.
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n_cols: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.n_cols]
    }

    fn pivot(&mut self, leave: usize, enter: usize) {
        let piv = self.rows[leave][enter];
        for v in self.rows[leave].iter_mut() {
            *v /= piv;
        }
        for i in 0..self.rows.len() {
            if i == leave {
                continue;
            }
            let factor = self.rows[i][enter];
            if factor == 0.0 {
                continue;
            }
            for c in 0..=self.n_cols {
                let delta = factor * self.rows[leave][c];
                self.rows[i][c] -= delta;
            }
        }
        self.basis[leave] = enter;
    }

    /// Minimizes `costs . x` with Bland's rule; `allowed` filters entering
    /// columns. Returns the objective value at optimality.
    fn solve(&mut self, costs: &[f64], allowed: impl Fn(usize) -> bool) -> f64 {
        loop {
            // Reduced costs via the basis cost vector.
            let mut enter = None;
            for e in 0..self.n_cols {
                if !allowed(e) || self.basis.contains(&e) {
                    continue;
                }
                let mut rc = costs[e];
                for (i, &bi) in self.basis.iter().enumerate() {
                    if costs[bi] != 0.0 {
                        rc -= costs[bi] * self.rows[i][e];
                    }
                }
                if rc < -TOL {
                    enter = Some(e); // Bland: first improving index
                    break;
                }
            }
            let Some(enter) = enter else {
                let mut obj = 0.0;
                for (i, &bi) in self.basis.iter().enumerate() {
                    obj += costs[bi] * self.rhs(i);
                }
                return obj;
            };
            // Ratio test; ties go to the smallest basic variable index.
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][enter];
                if a > TOL {
                    let ratio = self.rhs(i) / a;
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - TOL
                                || ((ratio - lr).abs() <= TOL && self.basis[i] < self.basis[li])
                            {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let (leave, _) = leave.expect("bounded by construction: costs are non-negative");
            self.pivot(leave, enter);
        }
    }
}

/// LP oracle for one precision column.
pub fn solve_clime_lp(sigma: &ArrayView2<f64>, j: usize, lambda: f64) -> LpOutcome {
    let p = sigma.nrows();
    let m = 2 * p;
    // Columns: u (p), v (p), slack (2p), artificial (2p), then rhs.
    let n_struct = 4 * p;
    let n_cols = n_struct + m;
    let mut rows = vec![vec![0.0; n_cols + 1]; m];
    for r in 0..p {
        // Row r:      Sigma u - Sigma v + s_r           = lambda + e_r
        // Row p + r: -Sigma u + Sigma v        + s_{p+r} = lambda - e_r
        let e = if r == j { 1.0 } else { 0.0 };
        for c in 0..p {
            rows[r][c] = sigma[[r, c]];
            rows[r][p + c] = -sigma[[r, c]];
            rows[p + r][c] = -sigma[[r, c]];
            rows[p + r][p + c] = sigma[[r, c]];
        }
        rows[r][2 * p + r] = 1.0;
        rows[p + r][3 * p + r] = 1.0;
        rows[r][n_cols] = lambda + e;
        rows[p + r][n_cols] = lambda - e;
    }
    // Non-negative right-hand sides for the artificial basis.
    for row in rows.iter_mut() {
        if row[n_cols] < 0.0 {
            for v in row.iter_mut() {
                *v = -*v;
            }
        }
    }
    for (i, row) in rows.iter_mut().enumerate() {
        row[n_struct + i] = 1.0;
    }
    let mut tab = Tableau {
        rows,
        basis: (n_struct..n_struct + m).collect(),
        n_cols,
    };

    // Phase 1: drive the artificials to zero.
    let mut phase1 = vec![0.0; n_cols];
    for c in n_struct..n_cols {
        phase1[c] = 1.0;
    }
    let infeas = tab.solve(&phase1, |_| true);
    if infeas > 1e-7 {
        return LpOutcome::Infeasible;
    }
    // Pivot leftover artificials (basic at zero) out on any structural or
    // slack column, so phase 2 cannot move them off zero. A row with no
    // such column is identically zero and harmless.
    for i in 0..m {
        if tab.basis[i] >= n_struct {
            if let Some(c) = (0..n_struct).find(|&c| tab.rows[i][c].abs() > TOL) {
                tab.pivot(i, c);
            }
        }
    }

    // Phase 2: the real objective; artificials may stay basic at zero but
    // can never re-enter.
    let mut phase2 = vec![0.0; n_cols];
    for c in 0..2 * p {
        phase2[c] = 1.0;
    }
    let objective = tab.solve(&phase2, |e| e < n_struct);

    let mut theta = Array1::<f64>::zeros(p);
    for (i, &bi) in tab.basis.iter().enumerate() {
        if bi < p {
            theta[bi] += tab.rhs(i);
        } else if bi < 2 * p {
            theta[bi - p] -= tab.rhs(i);
        }
    }
    LpOutcome::Optimal { theta, objective }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn identity_lambda_zero_gives_basis_vector() {
        let sigma = Array2::<f64>::eye(3);
        match solve_clime_lp(&sigma.view(), 1, 0.0) {
            LpOutcome::Optimal { theta, objective } => {
                assert_abs_diff_eq!(objective, 1.0, epsilon = 1e-10);
                assert_abs_diff_eq!(theta[1], 1.0, epsilon = 1e-10);
                assert_abs_diff_eq!(theta[0], 0.0, epsilon = 1e-10);
            }
            LpOutcome::Infeasible => panic!("identity is feasible"),
        }
    }

    #[test]
    fn diagonal_analytic_objective() {
        let sigma = Array2::<f64>::eye(2) * 2.0;
        match solve_clime_lp(&sigma.view(), 0, 0.1) {
            LpOutcome::Optimal { objective, .. } => {
                assert_abs_diff_eq!(objective, 0.45, epsilon = 1e-10);
            }
            LpOutcome::Infeasible => panic!("feasible"),
        }
    }

    #[test]
    fn lambda_above_one_gives_zero() {
        let sigma = array![[1.0, 0.2], [0.2, 1.0]];
        match solve_clime_lp(&sigma.view(), 0, 1.5) {
            LpOutcome::Optimal { objective, .. } => {
                assert_abs_diff_eq!(objective, 0.0, epsilon = 1e-10);
            }
            LpOutcome::Infeasible => panic!("feasible"),
        }
    }

    #[test]
    fn singular_small_lambda_is_infeasible() {
        let sigma = array![[1.0, 0.0], [0.0, 0.0]];
        assert!(matches!(
            solve_clime_lp(&sigma.view(), 1, 0.5),
            LpOutcome::Infeasible
        ));
        // Column 0 is still feasible.
        assert!(matches!(
            solve_clime_lp(&sigma.view(), 0, 0.5),
            LpOutcome::Optimal { .. }
        ));
    }

    use ndarray::Array2;
}
