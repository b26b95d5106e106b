//! Synthetic scenarios with known time-varying precision paths.
//!
//! Two generators: a smooth-null path (the precision drifts linearly
//! between two endpoints, no jump anywhere) and a break path (three linear
//! segments with jumps at t = 1/3 and 2/3 whose changed entries are
//! recorded as ground truth). Both are deterministic functions of their
//! seed.

use crate::dataset::TimeSeriesDataset;
use crate::error::{DgciError, Result};
use crate::linalg::{cholesky, min_eigenvalue, solve_lower_transpose};
use crate::util::derive_seed;
use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Retry budget for positive-definiteness repair and degenerate draws.
const MAX_ATTEMPTS: usize = 10;

/// Points per segment on the positive-definiteness check grid.
const PD_CHECK_POINTS: usize = 21;

/// Smoothly drifting precision with no sudden break.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothNullScenario {
    pub p: usize,
    pub n_t: usize,
    /// Number of sparse integer direction vectors.
    pub n_components: usize,
    /// Multinomial trial count per direction vector.
    pub trials: usize,
    pub seed: u64,
}

impl SmoothNullScenario {
    pub fn new(p: usize, n_t: usize, seed: u64) -> Self {
        Self {
            p,
            n_t,
            n_components: 100,
            trials: 3,
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Piecewise-linear precision with jumps at t = 1/3 and t = 2/3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreakScenario {
    pub p: usize,
    /// Number of off-diagonal support entries (unordered pairs).
    pub m_entries: usize,
    /// Off-diagonal effect size, in (0, 1).
    pub effect: f64,
    pub n_t: usize,
    pub seed: u64,
}

impl BreakScenario {
    pub fn new(p: usize, m_entries: usize, effect: f64, n_t: usize, seed: u64) -> Self {
        Self {
            p,
            m_entries,
            effect,
            n_t,
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// A precision path that is linear within each segment. Evaluation is
/// right-continuous at the segment boundaries.
#[derive(Debug, Clone)]
pub struct PrecisionPath {
    segments: Vec<PathSegment>,
}

#[derive(Debug, Clone)]
struct PathSegment {
    start: f64,
    end: f64,
    theta_start: Array2<f64>,
    theta_end: Array2<f64>,
}

impl PrecisionPath {
    fn new(segments: Vec<PathSegment>) -> Self {
        Self { segments }
    }

    pub fn precision_at(&self, t: f64) -> Array2<f64> {
        let seg = self
            .segments
            .iter()
            .find(|s| t >= s.start && t < s.end)
            .unwrap_or_else(|| self.segments.last().expect("path has segments"));
        let w = (t - seg.start) / (seg.end - seg.start);
        &seg.theta_start * (1.0 - w) + &seg.theta_end * w
    }

    /// Right limit at `t` (equals `precision_at` by right continuity).
    pub fn right_limit(&self, t: f64) -> Array2<f64> {
        self.precision_at(t)
    }

    /// Left limit at `t`.
    pub fn left_limit(&self, t: f64) -> Array2<f64> {
        for s in &self.segments {
            if t > s.start && t <= s.end {
                let w = (t - s.start) / (s.end - s.start);
                return &s.theta_start * (1.0 - w) + &s.theta_end * w;
            }
        }
        self.precision_at(t)
    }

    /// Segment boundaries interior to (0, 1).
    pub fn interior_knots(&self) -> Vec<f64> {
        self.segments
            .iter()
            .skip(1)
            .map(|s| s.start)
            .collect()
    }

    /// Smallest eigenvalue over a dense check grid.
    pub fn min_eigenvalue_on_grid(&self) -> f64 {
        let mut min = f64::INFINITY;
        for seg in &self.segments {
            for i in 0..PD_CHECK_POINTS {
                let w = i as f64 / (PD_CHECK_POINTS - 1) as f64;
                let t = seg.start + (seg.end - seg.start) * w;
                // Clamp into the open interval for evaluation.
                let t = t.clamp(seg.start, seg.end - 1e-12).max(1e-12);
                let theta = self.precision_at(t.min(1.0 - 1e-12));
                min = min.min(min_eigenvalue(&theta.view()));
            }
        }
        min
    }
}

/// Per-break ground truth for the break scenario.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GroundTruth {
    pub break_times: Vec<f64>,
    /// Changed off-diagonal pairs (j < k) per break, same order as
    /// `break_times`.
    pub changed_edges: Vec<Vec<(usize, usize)>>,
}

/// Diagonal shift `theta_jj += -min(eig_min, 0) + 0.05`, which moves the
/// smallest eigenvalue to at least 0.05.
fn shift_to_pd(theta: &mut Array2<f64>) {
    let lam_min = min_eigenvalue(&theta.view());
    let shift = -lam_min.min(0.0) + 0.05;
    let p = theta.nrows();
    for j in 0..p {
        theta[[j, j]] += shift;
    }
}

/// One smooth-null endpoint: sum of beta-weighted outer products of sparse
/// multinomial count vectors, off-diagonal signs flipped by fair coins,
/// then shifted to positive definiteness.
fn smooth_null_endpoint(scn: &SmoothNullScenario, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let p = scn.p;
    let mut theta = Array2::<f64>::zeros((p, p));
    let mut u = vec![0.0f64; p];
    for _ in 0..scn.n_components {
        u.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..scn.trials {
            let cell = rng.random_range(0..p);
            u[cell] += 1.0;
        }
        let beta: f64 = rng.random::<f64>();
        for j in 0..p {
            if u[j] == 0.0 {
                continue;
            }
            for k in 0..p {
                if u[k] != 0.0 {
                    theta[[j, k]] += beta * u[j] * u[k];
                }
            }
        }
    }
    // Fair-coin sign flips on off-diagonal pairs, mirrored to keep the
    // matrix symmetric.
    for j in 0..p {
        for k in (j + 1)..p {
            if rng.random_bool(0.5) {
                theta[[j, k]] = -theta[[j, k]];
                theta[[k, j]] = theta[[j, k]];
            }
        }
    }
    shift_to_pd(&mut theta);
    theta
}

/// Draws times and observations from `N(0, Theta(t)^{-1})` given the path.
fn sample_dataset(
    path: &PrecisionPath,
    n_t: usize,
    p: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TimeSeriesDataset> {
    let mut times = Vec::with_capacity(n_t);
    for _ in 0..n_t {
        let mut t: f64 = rng.random();
        while t == 0.0 {
            t = rng.random();
        }
        times.push(t);
    }
    let mut obs = Array2::<f64>::zeros((n_t, p));
    let mut z = vec![0.0f64; p];
    for (i, &t) in times.iter().enumerate() {
        let theta = path.precision_at(t);
        let l = cholesky(&theta.view())?;
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(rng);
        }
        // x = L^{-T} z has covariance (L L')^{-1} = Theta^{-1}.
        let x = solve_lower_transpose(&l.view(), &z);
        for j in 0..p {
            obs[[i, j]] = x[j];
        }
    }
    TimeSeriesDataset::new(Array1::from_vec(times), obs)
}

/// Smooth-null generator: precision drifts linearly between two
/// independently drawn endpoints; no sudden change exists anywhere.
pub fn gen_smooth_null(scn: &SmoothNullScenario) -> Result<(PrecisionPath, TimeSeriesDataset)> {
    if scn.p < 2 || scn.n_t < 2 || scn.n_components == 0 || scn.trials == 0 {
        return Err(DgciError::Config(format!(
            "smooth-null scenario needs p >= 2, n_t >= 2, components and trials >= 1, got {scn:?}"
        )));
    }
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scn.seed, attempt as u64));
        let theta1 = smooth_null_endpoint(scn, &mut rng);
        let theta2 = smooth_null_endpoint(scn, &mut rng);
        let path = PrecisionPath::new(vec![PathSegment {
            start: 0.0,
            end: 1.0,
            theta_start: theta1,
            theta_end: theta2,
        }]);
        if path.min_eigenvalue_on_grid() <= 0.0 {
            log::warn!("smooth-null path not positive definite on attempt {attempt}, retrying");
            continue;
        }
        let data = sample_dataset(&path, scn.n_t, scn.p, &mut rng)?;
        return Ok((path, data));
    }
    Err(DgciError::RetryExhausted {
        attempts: MAX_ATTEMPTS,
        reason: "smooth-null path never positive definite".into(),
    })
}

/// One break-scenario endpoint: diagonal from `g`, support entries
/// `sign * a * g_j * g_k` with fresh signs, then the diagonal shift.
fn break_endpoint(
    g: &[f64],
    support: &[(usize, usize)],
    effect: f64,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let p = g.len();
    let mut theta = Array2::<f64>::zeros((p, p));
    for j in 0..p {
        theta[[j, j]] = g[j];
    }
    for &(j, k) in support {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let v = sign * effect * g[j] * g[k];
        theta[[j, k]] = v;
        theta[[k, j]] = v;
    }
    shift_to_pd(&mut theta);
    theta
}

fn changed_pairs(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Vec<(usize, usize)> {
    let p = a.nrows();
    let mut out = Vec::new();
    for j in 0..p {
        for k in (j + 1)..p {
            if a[[j, k]] != b[[j, k]] {
                out.push((j, k));
            }
        }
    }
    out
}

/// Break generator: three linear segments whose endpoints share one
/// support pattern but draw fresh signs, giving jumps at 1/3 and 2/3.
/// Returns the path, the dataset, and the exact changed-edge ground truth.
pub fn gen_break(
    scn: &BreakScenario,
) -> Result<(PrecisionPath, TimeSeriesDataset, GroundTruth)> {
    let max_pairs = scn.p * (scn.p.saturating_sub(1)) / 2;
    if scn.p < 2 || scn.n_t < 2 {
        return Err(DgciError::Config(format!(
            "break scenario needs p >= 2 and n_t >= 2, got {scn:?}"
        )));
    }
    if scn.m_entries == 0 || scn.m_entries > max_pairs {
        return Err(DgciError::Config(format!(
            "break scenario needs 1 <= m_entries <= {max_pairs}, got {}",
            scn.m_entries
        )));
    }
    if !(scn.effect > 0.0 && scn.effect < 1.0) {
        return Err(DgciError::Config(format!(
            "break effect size must lie in (0, 1), got {}",
            scn.effect
        )));
    }
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scn.seed, attempt as u64));
        // Diagonal entries 1 or 9, value 9 with probability 0.1.
        let g: Vec<f64> = (0..scn.p)
            .map(|_| if rng.random_bool(0.1) { 9.0 } else { 1.0 })
            .collect();
        // Support: m distinct unordered pairs via partial Fisher-Yates.
        let mut all_pairs = EdgePairs::all(scn.p);
        let support = all_pairs.take_random(scn.m_entries, &mut rng);

        let endpoints: Vec<(Array2<f64>, Array2<f64>)> = (0..3)
            .map(|_| {
                let a = break_endpoint(&g, &support, scn.effect, &mut rng);
                let b = break_endpoint(&g, &support, scn.effect, &mut rng);
                (a, b)
            })
            .collect();

        let breaks = vec![1.0 / 3.0, 2.0 / 3.0];
        let changed: Vec<Vec<(usize, usize)>> = (0..2)
            .map(|b| changed_pairs(&endpoints[b].1.view(), &endpoints[b + 1].0.view()))
            .collect();
        if changed.iter().any(|c| c.is_empty()) {
            log::warn!("break scenario drew identical signs at a break on attempt {attempt}");
            continue;
        }

        let segments: Vec<PathSegment> = endpoints
            .iter()
            .enumerate()
            .map(|(s, (a, b))| PathSegment {
                start: s as f64 / 3.0,
                end: (s as f64 + 1.0) / 3.0,
                theta_start: a.clone(),
                theta_end: b.clone(),
            })
            .collect();
        let path = PrecisionPath::new(segments);
        if path.min_eigenvalue_on_grid() <= 0.0 {
            log::warn!("break path not positive definite on attempt {attempt}, retrying");
            continue;
        }
        let data = sample_dataset(&path, scn.n_t, scn.p, &mut rng)?;
        let truth = GroundTruth {
            break_times: breaks,
            changed_edges: changed,
        };
        return Ok((path, data, truth));
    }
    Err(DgciError::RetryExhausted {
        attempts: MAX_ATTEMPTS,
        reason: "break scenario generation kept failing".into(),
    })
}

struct EdgePairs {
    pairs: Vec<(usize, usize)>,
}

impl EdgePairs {
    fn all(p: usize) -> Self {
        let mut pairs = Vec::with_capacity(p * (p - 1) / 2);
        for j in 0..p {
            for k in (j + 1)..p {
                pairs.push((j, k));
            }
        }
        Self { pairs }
    }

    /// Partial Fisher-Yates: the first `m` slots end up a uniform sample
    /// without replacement.
    fn take_random(&mut self, m: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
        let n = self.pairs.len();
        for i in 0..m {
            let j = rng.random_range(i..n);
            self.pairs.swap(i, j);
        }
        self.pairs[..m].to_vec()
    }
}

/// Draws `count` rows from `N(0, Theta^{-1})` by solving against the
/// Cholesky factor of `Theta`.
pub fn sample_gaussian(
    theta: &ArrayView2<f64>,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Array2<f64>> {
    let p = theta.nrows();
    let l = cholesky(theta)?;
    let lv = l.view();
    let mut out = Array2::<f64>::zeros((count, p));
    let mut z = vec![0.0f64; p];
    for i in 0..count {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(rng);
        }
        let x = solve_lower_transpose(&lv, &z);
        for j in 0..p {
            out[[i, j]] = x[j];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spd_inverse;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn smooth_null_path_is_continuous_and_pd() {
        let scn = SmoothNullScenario::new(6, 40, 11);
        let (path, data) = gen_smooth_null(&scn).unwrap();
        assert_eq!(data.p(), 6);
        assert_eq!(data.n(), 40);
        // Left and right limits agree at interior points: continuity.
        for &t in &[0.2, 0.5, 1.0 / 3.0, 0.77] {
            let l = path.left_limit(t);
            let r = path.right_limit(t);
            for j in 0..6 {
                for k in 0..6 {
                    assert_abs_diff_eq!(l[[j, k]], r[[j, k]], epsilon = 1e-12);
                }
            }
        }
        assert!(path.min_eigenvalue_on_grid() > 0.0);
        assert!(path.interior_knots().is_empty());
    }

    #[test]
    fn smooth_null_is_deterministic_in_seed() {
        let scn = SmoothNullScenario::new(5, 30, 99);
        let (p1, d1) = gen_smooth_null(&scn).unwrap();
        let (p2, d2) = gen_smooth_null(&scn).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(p1.precision_at(0.4), p2.precision_at(0.4));
        let (_, d3) = gen_smooth_null(&scn.with_seed(100)).unwrap();
        assert_ne!(d1, d3);
    }

    #[test]
    fn break_scenario_jumps_at_knots() {
        let scn = BreakScenario::new(8, 10, 0.4, 60, 3);
        let (path, data, truth) = gen_break(&scn).unwrap();
        assert_eq!(data.n(), 60);
        assert_eq!(truth.break_times, vec![1.0 / 3.0, 2.0 / 3.0]);
        for (b, &tb) in truth.break_times.iter().enumerate() {
            let left = path.left_limit(tb);
            let right = path.right_limit(tb);
            assert!(!truth.changed_edges[b].is_empty());
            for &(j, k) in &truth.changed_edges[b] {
                assert_ne!(left[[j, k]], right[[j, k]]);
            }
            // Unchanged pairs really are unchanged.
            let changed: std::collections::HashSet<_> =
                truth.changed_edges[b].iter().copied().collect();
            for j in 0..8 {
                for k in (j + 1)..8 {
                    if !changed.contains(&(j, k)) {
                        assert_eq!(left[[j, k]], right[[j, k]]);
                    }
                }
            }
        }
    }

    #[test]
    fn break_paths_keep_min_eigenvalue_above_shift_floor() {
        for seed in 0..5 {
            let scn = BreakScenario::new(6, 6, 0.3, 30, seed);
            let (path, _, _) = gen_break(&scn).unwrap();
            // Each endpoint has min eigenvalue >= 0.05 and interpolation
            // preserves the floor.
            assert!(path.min_eigenvalue_on_grid() >= 0.05 - 1e-9);
        }
    }

    #[test]
    fn sample_gaussian_identity_has_unit_variance() {
        let theta = Array2::<f64>::eye(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = sample_gaussian(&theta.view(), 20_000, &mut rng).unwrap();
        for j in 0..3 {
            let col = draws.column(j);
            let mean: f64 = col.sum() / 20_000.0;
            let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 20_000.0;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 0.05);
            assert_abs_diff_eq!(var, 1.0, epsilon = 0.05);
        }
    }

    #[test]
    fn sample_gaussian_scalar_inverse_variance() {
        let theta = Array2::<f64>::eye(2) * 4.0;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let draws = sample_gaussian(&theta.view(), 20_000, &mut rng).unwrap();
        let col = draws.column(0);
        let var: f64 = col.iter().map(|v| v * v).sum::<f64>() / 20_000.0;
        assert_abs_diff_eq!(var, 0.25, epsilon = 0.02);
    }

    #[test]
    fn sample_gaussian_matches_inverse_covariance() {
        let theta = array![
            [2.0, 0.5, 0.0],
            [0.5, 1.5, -0.3],
            [0.0, -0.3, 1.0],
        ];
        let sigma = spd_inverse(&theta.view()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let draws = sample_gaussian(&theta.view(), n, &mut rng).unwrap();
        for j in 0..3 {
            for k in 0..3 {
                let mut s = 0.0;
                for i in 0..n {
                    s += draws[[i, j]] * draws[[i, k]];
                }
                let emp = s / n as f64;
                assert_abs_diff_eq!(emp, sigma[[j, k]], epsilon = 0.02);
            }
        }
    }

    #[test]
    fn sample_gaussian_rejects_indefinite() {
        let theta = array![[1.0, 2.0], [2.0, 1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert!(matches!(
            sample_gaussian(&theta.view(), 3, &mut rng),
            Err(DgciError::NotSpd)
        ));
    }
}
