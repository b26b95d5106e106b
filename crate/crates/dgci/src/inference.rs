//! Sup-max test statistic, Gaussian multiplier bootstrap, and the
//! hypothesis test for sudden precision-matrix changes.
//!
//! At each grid time `t` both one-sided pipelines run: smoothed covariance,
//! precision columns, de-biased entries, and the per-edge variance
//! normalizer. The statistic for edge `(j, k)` is
//! `sqrt(n h) |debiased_plus - debiased_minus| / normalizer`, the global
//! statistic is its sup over the grid and max over the edge set, and the
//! bootstrap replicates re-weight the cached influence terms with one
//! shared standard-normal multiplier vector per replicate.

use crate::dataset::TimeSeriesDataset;
use crate::error::{DgciError, Result};
use crate::kernel::{smoothed_covariance, KernelSpec, Side, SidedCovariance};
use crate::precision::{
    clime_column_warm, clime_estimate, debias_masked, symmetrize_columns, variance_approx,
    ColumnState, DebiasedEstimate, PrecisionEstimate, SolverOptions, TuningConfig, VarianceField,
};
use crate::util::{derive_seed, pairwise_sum_with};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Test times inside the interior window `[a, b] = [h, 1 - h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    times: Vec<f64>,
    a: f64,
    b: f64,
}

impl GridSpec {
    /// `count` evenly spaced times on `[h, 1 - h]` plus optional
    /// user-supplied extra times (which must fall in the same interval).
    /// Duplicates are merged; the result is sorted.
    pub fn regular(h: f64, count: usize, extra: &[f64]) -> Result<Self> {
        if !(h > 0.0) || h > 0.5 {
            return Err(DgciError::Config(format!(
                "grid needs a bandwidth in (0, 0.5], got {h}"
            )));
        }
        if count == 0 {
            return Err(DgciError::Config("grid needs at least one time".into()));
        }
        let a = h;
        let b = 1.0 - h;
        let mut times: Vec<f64> = if count == 1 {
            vec![0.5 * (a + b)]
        } else {
            (0..count)
                .map(|i| a + (b - a) * i as f64 / (count - 1) as f64)
                .collect()
        };
        for &t in extra {
            if !t.is_finite() || t < a || t > b {
                return Err(DgciError::Config(format!(
                    "extra grid time {t} lies outside [{a}, {b}]"
                )));
            }
            times.push(t);
        }
        times.sort_by(|x, y| x.partial_cmp(y).unwrap());
        times.dedup();
        Ok(Self { times, a, b })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.a, self.b)
    }
}

/// Unordered edge pairs `(j, k)` with `j < k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSet {
    pairs: Vec<(usize, usize)>,
    p: usize,
}

impl EdgeSet {
    /// All `p (p - 1) / 2` off-diagonal pairs in lexicographic order.
    pub fn complete(p: usize) -> Self {
        let mut pairs = Vec::with_capacity(p * (p - 1) / 2);
        for j in 0..p {
            for k in (j + 1)..p {
                pairs.push((j, k));
            }
        }
        Self { pairs, p }
    }

    /// Validated subset: indices in range, `j < k`, no duplicates.
    pub fn new(pairs: Vec<(usize, usize)>, p: usize) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for &(j, k) in &pairs {
            if j >= k {
                return Err(DgciError::Config(format!(
                    "edge ({j}, {k}) must satisfy j < k"
                )));
            }
            if k >= p {
                return Err(DgciError::Config(format!(
                    "edge ({j}, {k}) out of range for p = {p}"
                )));
            }
            if !seen.insert((j, k)) {
                return Err(DgciError::Config(format!("duplicate edge ({j}, {k})")));
            }
        }
        Ok(Self { pairs, p })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Replicate count, level, and the seed of the multiplier stream.
///
/// Replicate `b` draws its multipliers from an independent substream
/// derived from `(seed, b)`, so results are reproducible for any thread
/// count and replicates can run in any order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl BootstrapConfig {
    pub fn new(replicates: usize, alpha: f64, seed: u64) -> Result<Self> {
        if replicates == 0 {
            return Err(DgciError::Config("bootstrap needs at least 1 replicate".into()));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(DgciError::Config(format!(
                "alpha must lie in (0, 1), got {alpha}"
            )));
        }
        Ok(Self {
            replicates,
            alpha,
            seed,
        })
    }
}

/// Both one-sided estimation pipelines evaluated at one grid time.
pub fn side_statistics(
    data: &TimeSeriesDataset,
    t: f64,
    tuning: &TuningConfig,
    opts: &SolverOptions,
) -> Result<(DebiasedEstimate, DebiasedEstimate, VarianceField)> {
    let spec = KernelSpec::new(tuning.h(), Side::TwoSided)?;
    let attach = |e: DgciError| e.at_time(t);
    let cov_plus = smoothed_covariance(data, t, &spec.with_side(Side::Right)).map_err(attach)?;
    let cov_minus = smoothed_covariance(data, t, &spec.with_side(Side::Left)).map_err(attach)?;
    let theta_plus = clime_estimate(&cov_plus, tuning.lambda(), opts).map_err(attach)?;
    let theta_minus = clime_estimate(&cov_minus, tuning.lambda(), opts).map_err(attach)?;
    let deb_plus = debias_masked(&theta_plus, &cov_plus);
    let deb_minus = debias_masked(&theta_minus, &cov_minus);
    let var_plus = variance_approx(data, t, Side::Right, &theta_plus, &spec).map_err(attach)?;
    let var_minus = variance_approx(data, t, Side::Left, &theta_minus, &spec).map_err(attach)?;
    let field = VarianceField::new(t, var_plus, var_minus);
    Ok((deb_plus, deb_minus, field))
}

/// Normalized difference statistic `sqrt(n h) |plus - minus| / sigma`,
/// entrywise. Masked entries (flagged normalizer or a degenerate de-bias
/// row on either side) are set to zero; the mask lives in `norm` and the
/// estimates' `degenerate` flags.
pub fn delta_statistic(
    plus: &DebiasedEstimate,
    minus: &DebiasedEstimate,
    norm: &VarianceField,
    n: usize,
    h: f64,
) -> Array2<f64> {
    let p = plus.matrix.nrows();
    let scale = (n as f64 * h).sqrt();
    let mut out = Array2::<f64>::zeros((p, p));
    for j in 0..p {
        for k in 0..p {
            if norm.non_testable[[j, k]] || plus.degenerate[j] || minus.degenerate[j] {
                continue;
            }
            out[[j, k]] =
                scale * (plus.matrix[[j, k]] - minus.matrix[[j, k]]).abs() / norm.normalizer[[j, k]];
        }
    }
    out
}

/// Cached multiplier-bootstrap influence terms for one `(t, side)` pair.
///
/// Conceptually an `n x |E|` array whose row `i` is
/// `w_i (theta_j' [x_i x_i' theta_k - e_k])` per edge; rows outside the
/// kernel window are zero and only window rows are stored.
#[derive(Debug, Clone)]
pub struct BootstrapComponents {
    pub at_time: f64,
    pub side: Side,
    /// Original observation indices with positive kernel weight.
    pub window: Vec<usize>,
    /// `window.len() x |E|` matrix of non-zero component rows.
    pub matrix: Array2<f64>,
    /// Kernel weight sum (the estimator denominator).
    pub weight_sum: f64,
    /// Total observation count `n` (for dense expansion).
    pub n_obs: usize,
}

impl BootstrapComponents {
    /// Component value for observation `i` and edge index `e`.
    pub fn value(&self, i: usize, e: usize) -> f64 {
        match self.window.binary_search(&i) {
            Ok(row) => self.matrix[[row, e]],
            Err(_) => 0.0,
        }
    }

    /// Dense `n x |E|` expansion (tests and small problems only).
    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros((self.n_obs, self.matrix.ncols()));
        for (row, &i) in self.window.iter().enumerate() {
            for e in 0..self.matrix.ncols() {
                out[[i, e]] = self.matrix[[row, e]];
            }
        }
        out
    }
}

/// Influence terms `M_{ijk} = K_{h,side}(t_i - t) (theta_j' [x_i x_i'
/// theta_k - e_k])` for every observation and edge, cached for reuse across
/// all replicates.
pub fn bootstrap_component(
    data: &TimeSeriesDataset,
    t: f64,
    side: Side,
    theta: &PrecisionEstimate,
    spec: &KernelSpec,
    edges: &EdgeSet,
) -> Result<BootstrapComponents> {
    let spec = spec.with_side(side);
    let p = data.p();
    let mut window = Vec::new();
    let mut weights = Vec::new();
    for (i, &ti) in data.times().iter().enumerate() {
        let wi = spec.weight(ti - t);
        if wi > 0.0 {
            window.push(i);
            weights.push(wi);
        }
    }
    if window.is_empty() {
        return Err(DgciError::EmptyWindow {
            t,
            side,
            h: spec.h(),
        });
    }
    let weight_sum = pairwise_sum_with(weights.len(), |k| weights[k]);
    let n_pairs = edges.len();
    let mut matrix = Array2::<f64>::zeros((window.len(), n_pairs));
    let mut v = vec![0.0; p];
    for (row, &i) in window.iter().enumerate() {
        let x = data.row(i);
        for j in 0..p {
            let mut s = 0.0;
            for r in 0..p {
                s += theta.columns[[r, j]] * x[r];
            }
            v[j] = s;
        }
        let w = weights[row];
        for (e, &(j, k)) in edges.pairs().iter().enumerate() {
            let inner = v[j] * v[k] - theta.columns[[k, j]];
            matrix[[row, e]] = w * inner;
        }
    }
    Ok(BootstrapComponents {
        at_time: t,
        side,
        window,
        matrix,
        weight_sum,
        n_obs: data.n(),
    })
}

/// Everything one grid time contributes to the bootstrap: both sides'
/// components plus the per-edge normalizers and masks.
#[derive(Debug, Clone)]
pub struct TimeBootstrapData {
    pub at_time: f64,
    /// `sqrt(n h)`.
    pub scale: f64,
    pub plus: BootstrapComponents,
    pub minus: BootstrapComponents,
    /// Per-edge normalizer, aligned with the edge set.
    pub normalizer: Vec<f64>,
    /// Per-edge exclusion mask, aligned with the edge set.
    pub masked: Vec<bool>,
}

/// Per-edge bootstrap averages `sum_i M_ie xi_i / sum_i w_i` for one side.
/// `xi` is indexed by original observation order.
fn side_replicate_sums(comp: &BootstrapComponents, xi: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for (row, &i) in comp.window.iter().enumerate() {
        let x = xi[i];
        let mrow = comp.matrix.row(row);
        for (e, m) in mrow.iter().enumerate() {
            out[e] += m * x;
        }
    }
    for v in out.iter_mut() {
        *v /= comp.weight_sum;
    }
}

/// Replicate value contributed by one grid time: max over unmasked edges of
/// `scale |u_plus - u_minus| / normalizer`.
pub fn replicate_value_at(tb: &TimeBootstrapData, xi: &[f64]) -> f64 {
    let n_pairs = tb.normalizer.len();
    let mut up = vec![0.0; n_pairs];
    let mut um = vec![0.0; n_pairs];
    side_replicate_sums(&tb.plus, xi, &mut up);
    side_replicate_sums(&tb.minus, xi, &mut um);
    let mut best = 0.0f64;
    for e in 0..n_pairs {
        if tb.masked[e] {
            continue;
        }
        let v = tb.scale * (up[e] - um[e]).abs() / tb.normalizer[e];
        best = best.max(v);
    }
    best
}

/// One bootstrap replicate: the same multiplier vector `xi` is shared
/// across every grid time and edge, and the replicate value is the sup
/// over grid times of the per-time max.
pub fn bootstrap_replicate(times: &[TimeBootstrapData], xi: &[f64]) -> f64 {
    times
        .iter()
        .map(|tb| replicate_value_at(tb, xi))
        .fold(0.0f64, f64::max)
}

/// Empirical `(1 - alpha)` quantile: the `ceil((1 - alpha) B)`-th order
/// statistic of the replicate values. `alpha = 0` returns the maximum.
pub fn bootstrap_quantile(samples: &[f64], alpha: f64) -> f64 {
    assert!(!samples.is_empty(), "quantile needs at least one sample");
    assert!((0.0..1.0).contains(&alpha), "alpha must lie in [0, 1)");
    let b = samples.len();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    // Tiny epsilon absorbs float error in (1 - alpha) * B (e.g. 95.000...02).
    let k = ((1.0 - alpha) * b as f64 - 1e-9).ceil() as usize;
    sorted[k.clamp(1, b) - 1]
}

/// Per-grid-time normalized statistics and the global sup-max.
#[derive(Debug, Clone)]
pub struct ChangeStatistics {
    pub grid_times: Vec<f64>,
    /// `sqrt(n h) |delta|` per time, entrywise (zero where masked).
    pub stats: Vec<Array2<f64>>,
    /// Per-time non-testable masks (normalizer floor or degenerate rows).
    pub non_testable: Vec<Array2<bool>>,
    /// Sup over times, max over the edge set, of unmasked entries.
    pub u_e: f64,
}

/// Outcome of one grid time inside [`run_test`].
struct TimeFit {
    /// Per-edge statistic aligned with the edge set.
    stat: Vec<f64>,
    masked: Vec<bool>,
    per_time_max: f64,
    boot: TimeBootstrapData,
}

/// Both one-sided precision estimates at one kept grid time.
struct TimeEstimates {
    t: f64,
    cov_plus: SidedCovariance,
    cov_minus: SidedCovariance,
    theta_plus: PrecisionEstimate,
    theta_minus: PrecisionEstimate,
}

/// Estimates every grid time: covariances in parallel over times, then one
/// warm-started solver stream per (side, column) running down the grid.
/// Times whose covariance or any column fails are dropped with a reason.
fn estimate_grid(
    data: &TimeSeriesDataset,
    grid: &GridSpec,
    tuning: &TuningConfig,
    opts: &SolverOptions,
) -> Result<(Vec<TimeEstimates>, Vec<DroppedTime>)> {
    let p = data.p();
    let spec = KernelSpec::new(tuning.h(), Side::TwoSided)?;
    let covs: Vec<std::result::Result<(SidedCovariance, SidedCovariance), String>> = grid
        .times()
        .par_iter()
        .map(|&t| {
            let plus = smoothed_covariance(data, t, &spec.with_side(Side::Right))
                .map_err(|e| e.at_time(t).to_string())?;
            let minus = smoothed_covariance(data, t, &spec.with_side(Side::Left))
                .map_err(|e| e.at_time(t).to_string())?;
            Ok((plus, minus))
        })
        .collect();

    let mut dropped: Vec<DroppedTime> = Vec::new();
    let mut avail: Vec<usize> = Vec::new();
    for (i, c) in covs.iter().enumerate() {
        match c {
            Ok(_) => avail.push(i),
            Err(reason) => dropped.push(DroppedTime {
                t: grid.times()[i],
                reason: reason.clone(),
            }),
        }
    }

    // Stream s solves column s % p on the plus (s < p) or minus side,
    // walking the available times in order and warm-starting each solve
    // from the previous one.
    let lambda = tuning.lambda();
    let streams: Vec<Vec<std::result::Result<Array1<f64>, String>>> = (0..2 * p)
        .into_par_iter()
        .map(|s| {
            let j = s % p;
            let plus_side = s < p;
            let mut warm: Option<ColumnState> = None;
            let mut out = Vec::with_capacity(avail.len());
            for &ti in &avail {
                let (cp, cm) = covs[ti].as_ref().expect("avail holds Ok entries");
                let sigma = if plus_side { &cp.matrix } else { &cm.matrix };
                match clime_column_warm(&sigma.view(), j, lambda, opts, warm.as_ref()) {
                    Ok(state) => {
                        out.push(Ok(state.theta.clone()));
                        warm = Some(state);
                    }
                    Err(e) => {
                        out.push(Err(e.at_time(grid.times()[ti]).to_string()));
                        // Keep the last good iterates for the next time.
                    }
                }
            }
            out
        })
        .collect();

    let mut kept = Vec::with_capacity(avail.len());
    for (pos, &ti) in avail.iter().enumerate() {
        let t = grid.times()[ti];
        let mut failure: Option<String> = None;
        for stream in streams.iter() {
            if let Err(reason) = &stream[pos] {
                failure = Some(reason.clone());
                break;
            }
        }
        if let Some(reason) = failure {
            dropped.push(DroppedTime { t, reason });
            continue;
        }
        let (cov_plus, cov_minus) = covs[ti].as_ref().expect("avail holds Ok entries").clone();
        let mut cols_plus = Array2::<f64>::zeros((p, p));
        let mut cols_minus = Array2::<f64>::zeros((p, p));
        for j in 0..p {
            let plus = streams[j][pos].as_ref().expect("checked above");
            let minus = streams[p + j][pos].as_ref().expect("checked above");
            for i in 0..p {
                cols_plus[[i, j]] = plus[i];
                cols_minus[[i, j]] = minus[i];
            }
        }
        let theta_plus = PrecisionEstimate {
            at_time: t,
            side: Side::Right,
            matrix: symmetrize_columns(&cols_plus),
            columns: cols_plus,
            lambda_used: lambda,
        };
        let theta_minus = PrecisionEstimate {
            at_time: t,
            side: Side::Left,
            matrix: symmetrize_columns(&cols_minus),
            columns: cols_minus,
            lambda_used: lambda,
        };
        kept.push(TimeEstimates {
            t,
            cov_plus,
            cov_minus,
            theta_plus,
            theta_minus,
        });
    }
    dropped.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
    Ok((kept, dropped))
}

fn fit_time(
    data: &TimeSeriesDataset,
    est: &TimeEstimates,
    tuning: &TuningConfig,
    edges: &EdgeSet,
) -> Result<TimeFit> {
    let t = est.t;
    let spec = KernelSpec::new(tuning.h(), Side::TwoSided)?;
    let attach = |e: DgciError| e.at_time(t);
    let deb_plus = debias_masked(&est.theta_plus, &est.cov_plus);
    let deb_minus = debias_masked(&est.theta_minus, &est.cov_minus);
    let var_plus =
        variance_approx(data, t, Side::Right, &est.theta_plus, &spec).map_err(attach)?;
    let var_minus =
        variance_approx(data, t, Side::Left, &est.theta_minus, &spec).map_err(attach)?;
    let field = VarianceField::new(t, var_plus, var_minus);

    let n = data.n();
    let h = tuning.h();
    let scale = (n as f64 * h).sqrt();
    let mut stat = Vec::with_capacity(edges.len());
    let mut masked = Vec::with_capacity(edges.len());
    let mut normalizer = Vec::with_capacity(edges.len());
    let mut per_time_max = 0.0f64;
    for &(j, k) in edges.pairs() {
        let is_masked = field.non_testable[[j, k]]
            || deb_plus.degenerate[j]
            || deb_minus.degenerate[j];
        let sigma = field.normalizer[[j, k]];
        let s = if is_masked {
            0.0
        } else {
            scale * (deb_plus.matrix[[j, k]] - deb_minus.matrix[[j, k]]).abs() / sigma
        };
        if !is_masked {
            per_time_max = per_time_max.max(s);
        }
        stat.push(s);
        masked.push(is_masked);
        normalizer.push(sigma);
    }

    let comp_plus =
        bootstrap_component(data, t, Side::Right, &est.theta_plus, &spec, edges).map_err(attach)?;
    let comp_minus =
        bootstrap_component(data, t, Side::Left, &est.theta_minus, &spec, edges).map_err(attach)?;
    Ok(TimeFit {
        stat,
        masked: masked.clone(),
        per_time_max,
        boot: TimeBootstrapData {
            at_time: t,
            scale,
            plus: comp_plus,
            minus: comp_minus,
            normalizer,
            masked,
        },
    })
}

/// A grid time excluded from the test, with the failure that caused it.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DroppedTime {
    pub t: f64,
    pub reason: String,
}

/// Edges rejected at one grid time.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RejectedAt {
    pub t: f64,
    pub edges: Vec<(usize, usize)>,
}

/// Full outcome of the hypothesis test.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TestResult {
    pub n: usize,
    pub p: usize,
    pub h: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub replicates: usize,
    pub seed: u64,
    /// Sup-max statistic over kept grid times and the edge set.
    pub u_e: f64,
    /// Bootstrap `(1 - alpha)` quantile.
    pub threshold: f64,
    pub reject_null: bool,
    /// Grid times that produced estimates, ascending.
    pub grid_times: Vec<f64>,
    /// Grid times dropped for estimation failures (excluded symmetrically
    /// from the statistic and every replicate).
    pub dropped_times: Vec<DroppedTime>,
    /// Max statistic per kept grid time, aligned with `grid_times`.
    pub per_time_max_stat: Vec<f64>,
    /// Rejected edge set per kept grid time, aligned with `grid_times`.
    pub rejected: Vec<RejectedAt>,
    /// Localized change points (one per run of rejected grid times).
    pub change_points: Vec<f64>,
    pub bootstrap_samples: Vec<f64>,
}

/// Hypothesis test for a sudden precision change anywhere on the grid.
///
/// Runs both one-sided pipelines at every grid time, computes the sup-max
/// statistic, calibrates the threshold with `boot.replicates` multiplier
/// bootstrap replicates, and collects per-time rejected edge sets. Grid
/// times whose estimation fails are dropped from the statistic and from
/// every replicate. Deterministic given the dataset and seeds, for any
/// thread count.
pub fn run_test(
    data: &TimeSeriesDataset,
    grid: &GridSpec,
    tuning: &TuningConfig,
    boot: &BootstrapConfig,
    edges: &EdgeSet,
) -> Result<TestResult> {
    run_test_with_options(data, grid, tuning, boot, edges, &SolverOptions::default())
}

pub fn run_test_with_options(
    data: &TimeSeriesDataset,
    grid: &GridSpec,
    tuning: &TuningConfig,
    boot: &BootstrapConfig,
    edges: &EdgeSet,
    opts: &SolverOptions,
) -> Result<TestResult> {
    if edges.p() != data.p() {
        return Err(DgciError::Config(format!(
            "edge set is for p = {} but data has p = {}",
            edges.p(),
            data.p()
        )));
    }
    if edges.is_empty() {
        return Err(DgciError::Config("edge set is empty".into()));
    }
    let n = data.n();
    let b = boot.replicates;

    // Multipliers: replicate b reads row b, indexed by original row order.
    let mut xi = Array2::<f64>::zeros((b, n));
    for rep in 0..b {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(boot.seed, rep as u64));
        for i in 0..n {
            xi[[rep, i]] = StandardNormal.sample(&mut rng);
        }
    }

    // Estimate every grid time (warm-started column streams), then fuse
    // the per-time statistic with its replicate contributions so the
    // component caches can be dropped immediately.
    let (estimates, mut dropped) = estimate_grid(data, grid, tuning, opts)?;
    struct TimeOutcome {
        t: f64,
        fit: std::result::Result<(Vec<f64>, Vec<bool>, f64, Vec<f64>), String>,
    }
    let outcomes: Vec<TimeOutcome> = estimates
        .par_iter()
        .map(|est| {
            match fit_time(data, est, tuning, edges) {
                Ok(fit) => {
                    let mut rep_values = vec![0.0f64; b];
                    let mut up = vec![0.0; edges.len()];
                    let mut um = vec![0.0; edges.len()];
                    for rep in 0..b {
                        let xr = xi.row(rep);
                        let xr = xr.as_slice().expect("xi rows are contiguous");
                        side_replicate_sums(&fit.boot.plus, xr, &mut up);
                        side_replicate_sums(&fit.boot.minus, xr, &mut um);
                        let mut best = 0.0f64;
                        for e in 0..edges.len() {
                            if fit.boot.masked[e] {
                                continue;
                            }
                            let v = fit.boot.scale * (up[e] - um[e]).abs() / fit.boot.normalizer[e];
                            best = best.max(v);
                        }
                        rep_values[rep] = best;
                    }
                    TimeOutcome {
                        t: est.t,
                        fit: Ok((fit.stat, fit.masked, fit.per_time_max, rep_values)),
                    }
                }
                Err(e) => TimeOutcome {
                    t: est.t,
                    fit: Err(e.to_string()),
                },
            }
        })
        .collect();

    let mut kept_times = Vec::new();
    let mut per_time_max = Vec::new();
    let mut stats = Vec::new();
    let mut masks = Vec::new();
    let mut rep_values = vec![0.0f64; b];
    let mut u_e = 0.0f64;
    for out in outcomes {
        match out.fit {
            Ok((stat, masked, tmax, reps)) => {
                kept_times.push(out.t);
                per_time_max.push(tmax);
                u_e = u_e.max(tmax);
                for (acc, v) in rep_values.iter_mut().zip(&reps) {
                    *acc = acc.max(*v);
                }
                stats.push(stat);
                masks.push(masked);
            }
            Err(reason) => {
                log::warn!("dropping grid time {}: {reason}", out.t);
                dropped.push(DroppedTime { t: out.t, reason });
            }
        }
    }
    dropped.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
    if kept_times.is_empty() {
        let first = dropped
            .first()
            .map(|d| d.reason.clone())
            .unwrap_or_else(|| "empty grid".into());
        return Err(DgciError::Config(format!(
            "estimation failed at every grid time; first failure: {first}"
        )));
    }

    let threshold = bootstrap_quantile(&rep_values, boot.alpha);
    let mut rejected = Vec::with_capacity(kept_times.len());
    let mut any = false;
    for (ti, t) in kept_times.iter().enumerate() {
        let mut edges_at = Vec::new();
        for (e, &(j, k)) in edges.pairs().iter().enumerate() {
            if !masks[ti][e] && stats[ti][e] > threshold {
                edges_at.push((j, k));
            }
        }
        if !edges_at.is_empty() {
            any = true;
        }
        rejected.push(RejectedAt {
            t: *t,
            edges: edges_at,
        });
    }

    let mut result = TestResult {
        n,
        p: data.p(),
        h: tuning.h(),
        lambda: tuning.lambda(),
        alpha: boot.alpha,
        replicates: b,
        seed: boot.seed,
        u_e,
        threshold,
        reject_null: any,
        grid_times: kept_times,
        dropped_times: dropped,
        per_time_max_stat: per_time_max,
        rejected,
        change_points: Vec::new(),
        bootstrap_samples: rep_values,
    };
    result.change_points = localize_change_points(&result, tuning.h());
    Ok(result)
}

/// Estimation-only pass producing the full per-time statistic matrices.
pub fn change_statistics(
    data: &TimeSeriesDataset,
    grid: &GridSpec,
    tuning: &TuningConfig,
    edges: &EdgeSet,
    opts: &SolverOptions,
) -> Result<ChangeStatistics> {
    let results: Vec<Result<(f64, Array2<f64>, Array2<bool>)>> = grid
        .times()
        .par_iter()
        .map(|&t| {
            let (plus, minus, field) = side_statistics(data, t, tuning, opts)?;
            let stat = delta_statistic(&plus, &minus, &field, data.n(), tuning.h());
            let p = data.p();
            let mut mask = Array2::from_elem((p, p), false);
            for j in 0..p {
                for k in 0..p {
                    mask[[j, k]] = field.non_testable[[j, k]]
                        || plus.degenerate[j]
                        || minus.degenerate[j];
                }
            }
            Ok((t, stat, mask))
        })
        .collect();
    let mut grid_times = Vec::new();
    let mut stats = Vec::new();
    let mut non_testable = Vec::new();
    let mut u_e = 0.0f64;
    for r in results {
        let (t, stat, mask) = r?;
        for &(j, k) in edges.pairs() {
            if !mask[[j, k]] {
                u_e = u_e.max(stat[[j, k]]);
            }
        }
        grid_times.push(t);
        stats.push(stat);
        non_testable.push(mask);
    }
    Ok(ChangeStatistics {
        grid_times,
        stats,
        non_testable,
        u_e,
    })
}

/// Groups rejected grid times into runs separated by gaps larger than `h`
/// and reports, per run, the grid time with the largest per-time max
/// statistic. Empty when nothing was rejected.
pub fn localize_change_points(result: &TestResult, h: f64) -> Vec<f64> {
    let mut rejected_times: Vec<(f64, f64)> = Vec::new();
    for (i, r) in result.rejected.iter().enumerate() {
        if !r.edges.is_empty() {
            rejected_times.push((r.t, result.per_time_max_stat[i]));
        }
    }
    if rejected_times.is_empty() {
        return Vec::new();
    }
    let mut points = Vec::new();
    let mut run_best_t = rejected_times[0].0;
    let mut run_best_stat = rejected_times[0].1;
    let mut prev_t = rejected_times[0].0;
    for &(t, stat) in &rejected_times[1..] {
        if t - prev_t > h {
            points.push(run_best_t);
            run_best_t = t;
            run_best_stat = stat;
        } else if stat > run_best_stat {
            run_best_t = t;
            run_best_stat = stat;
        }
        prev_t = t;
    }
    points.push(run_best_t);
    points
}

/// Multiplier matrix used by `run_test`, exposed for test instrumentation:
/// row `b` is the xi vector of replicate `b`, indexed by original row.
pub fn multiplier_matrix(boot: &BootstrapConfig, n: usize) -> Array2<f64> {
    let mut xi = Array2::<f64>::zeros((boot.replicates, n));
    for rep in 0..boot.replicates {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(boot.seed, rep as u64));
        for i in 0..n {
            xi[[rep, i]] = StandardNormal.sample(&mut rng);
        }
    }
    xi
}

/// Convenience: per-replicate multiplier vector as an `Array1`.
pub fn multiplier_vector(seed: u64, replicate: usize, n: usize) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, replicate as u64));
    Array1::from_iter((0..n).map(|_| StandardNormal.sample(&mut rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn grid_is_sorted_dedup_and_bounded() {
        let g = GridSpec::regular(0.1, 5, &[0.5, 0.3]).unwrap();
        assert_eq!(g.bounds(), (0.1, 0.9));
        let times = g.times();
        assert!(times.windows(2).all(|w| w[0] < w[1]));
        assert!(times.contains(&0.3));
        // 0.5 is already a regular point; dedup keeps one copy.
        assert_eq!(times.iter().filter(|&&t| t == 0.5).count(), 1);
        assert!(GridSpec::regular(0.1, 5, &[0.05]).is_err());
        assert!(GridSpec::regular(0.1, 0, &[]).is_err());
    }

    #[test]
    fn complete_edge_set_counts() {
        let e = EdgeSet::complete(4);
        assert_eq!(e.len(), 6);
        assert_eq!(e.pairs()[0], (0, 1));
        assert_eq!(e.pairs()[5], (2, 3));
    }

    #[test]
    fn edge_set_validation() {
        assert!(EdgeSet::new(vec![(0, 1), (1, 0)], 3).is_err());
        assert!(EdgeSet::new(vec![(0, 3)], 3).is_err());
        assert!(EdgeSet::new(vec![(0, 1), (0, 1)], 3).is_err());
        assert!(EdgeSet::new(vec![(0, 1), (1, 2)], 3).is_ok());
    }

    #[test]
    fn quantile_order_statistics() {
        let samples: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(bootstrap_quantile(&samples, 0.05), 95.0);
        assert_eq!(bootstrap_quantile(&samples, 0.0), 100.0);
        let constant = vec![3.25; 17];
        assert_eq!(bootstrap_quantile(&constant, 0.3), 3.25);
        // Single sample: every level returns it.
        assert_eq!(bootstrap_quantile(&[1.5], 0.5), 1.5);
    }

    #[test]
    fn quantile_monotone_in_level() {
        let samples = vec![0.3, 1.2, 0.7, 2.0, 0.1, 1.6];
        let q10 = bootstrap_quantile(&samples, 0.10);
        let q05 = bootstrap_quantile(&samples, 0.05);
        assert!(q05 >= q10);
    }

    #[test]
    fn delta_statistic_zero_when_sides_agree() {
        let m = array![[0.5, 0.2], [0.2, 0.5]];
        let plus = DebiasedEstimate {
            at_time: 0.5,
            side: Side::Right,
            matrix: m.clone(),
            denominators: array![1.0, 1.0],
            degenerate: vec![false, false],
        };
        let minus = DebiasedEstimate {
            at_time: 0.5,
            side: Side::Left,
            matrix: m,
            denominators: array![1.0, 1.0],
            degenerate: vec![false, false],
        };
        let field = VarianceField::new(0.5, array![[1.0, 1.0], [1.0, 1.0]], array![[1.0, 1.0], [1.0, 1.0]]);
        let d = delta_statistic(&plus, &minus, &field, 100, 0.1);
        assert_eq!(d, Array2::<f64>::zeros((2, 2)));
    }

    #[test]
    fn delta_statistic_homogeneous_in_normalizer() {
        let plus = DebiasedEstimate {
            at_time: 0.5,
            side: Side::Right,
            matrix: array![[0.5, 0.4], [0.1, 0.5]],
            denominators: array![1.0, 1.0],
            degenerate: vec![false, false],
        };
        let minus = DebiasedEstimate {
            at_time: 0.5,
            side: Side::Left,
            matrix: array![[0.5, 0.1], [0.0, 0.5]],
            denominators: array![1.0, 1.0],
            degenerate: vec![false, false],
        };
        let f1 = VarianceField::new(0.5, array![[1.0, 2.0], [2.0, 1.0]], array![[1.0, 2.0], [2.0, 1.0]]);
        let f4 = VarianceField::new(0.5, array![[4.0, 8.0], [8.0, 4.0]], array![[4.0, 8.0], [8.0, 4.0]]);
        let d1 = delta_statistic(&plus, &minus, &f1, 50, 0.2);
        let d4 = delta_statistic(&plus, &minus, &f4, 50, 0.2);
        // Scaling sigma^2 by 4 scales sigma by 2 and halves every entry.
        for j in 0..2 {
            for k in 0..2 {
                assert_abs_diff_eq!(d4[[j, k]], d1[[j, k]] / 2.0, epsilon = 1e-12);
            }
        }
        // Hand case: entry (0,1) = sqrt(50*0.2)*|0.4-0.1|/sqrt(2+2)
        let expect = (50.0f64 * 0.2).sqrt() * 0.3 / 2.0;
        assert_abs_diff_eq!(d1[[0, 1]], expect, epsilon = 1e-12);
    }

    #[test]
    fn replicate_zero_xi_gives_zero_and_sign_symmetry() {
        // Tiny synthetic components.
        let comp = |vals: Array2<f64>, window: Vec<usize>| BootstrapComponents {
            at_time: 0.5,
            side: Side::Right,
            window,
            matrix: vals,
            weight_sum: 2.0,
            n_obs: 4,
        };
        let tb = TimeBootstrapData {
            at_time: 0.5,
            scale: 3.0,
            plus: comp(array![[1.0, -0.5], [0.25, 2.0]], vec![0, 2]),
            minus: comp(array![[0.5, 1.0], [1.5, -1.0]], vec![1, 3]),
            normalizer: vec![1.0, 2.0],
            masked: vec![false, false],
        };
        let zero = vec![0.0; 4];
        assert_eq!(bootstrap_replicate(&[tb.clone()], &zero), 0.0);
        let xi = vec![0.3, -1.2, 0.7, 0.4];
        let neg: Vec<f64> = xi.iter().map(|v| -v).collect();
        let a = bootstrap_replicate(&[tb.clone()], &xi);
        let b = bootstrap_replicate(&[tb], &neg);
        assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        assert!(a > 0.0);
    }

    #[test]
    fn replicate_hand_case_single_edge() {
        // One grid time, one edge, n = 3 observations, all in the plus
        // window; minus side contributes zero.
        let plus = BootstrapComponents {
            at_time: 0.5,
            side: Side::Right,
            window: vec![0, 1, 2],
            matrix: array![[2.0], [-1.0], [0.5]],
            weight_sum: 4.0,
            n_obs: 3,
        };
        let minus = BootstrapComponents {
            at_time: 0.5,
            side: Side::Left,
            window: vec![0],
            matrix: array![[0.0]],
            weight_sum: 1.0,
            n_obs: 3,
        };
        let tb = TimeBootstrapData {
            at_time: 0.5,
            scale: 2.0,
            plus,
            minus,
            normalizer: vec![0.5],
            masked: vec![false],
        };
        let xi = vec![1.0, 2.0, -2.0];
        // u_plus = (2*1 + (-1)*2 + 0.5*(-2)) / 4 = -0.25; u_minus = 0
        // value = 2 * |-0.25| / 0.5 = 1.0
        assert_abs_diff_eq!(replicate_value_at(&tb, &xi), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn component_dense_rows_are_zero_outside_window() {
        let comp = BootstrapComponents {
            at_time: 0.5,
            side: Side::Right,
            window: vec![1, 3],
            matrix: array![[5.0], [7.0]],
            weight_sum: 1.0,
            n_obs: 5,
        };
        let dense = comp.to_dense();
        assert_eq!(dense[[0, 0]], 0.0);
        assert_eq!(dense[[1, 0]], 5.0);
        assert_eq!(dense[[2, 0]], 0.0);
        assert_eq!(dense[[3, 0]], 7.0);
        assert_eq!(comp.value(3, 0), 7.0);
        assert_eq!(comp.value(2, 0), 0.0);
    }

    #[test]
    fn localization_groups_runs() {
        let mk = |times: Vec<f64>, rejected_mask: Vec<bool>, stats: Vec<f64>| TestResult {
            n: 100,
            p: 3,
            h: 0.1,
            lambda: 0.1,
            alpha: 0.05,
            replicates: 10,
            seed: 0,
            u_e: 1.0,
            threshold: 0.5,
            reject_null: rejected_mask.iter().any(|&r| r),
            grid_times: times.clone(),
            dropped_times: vec![],
            per_time_max_stat: stats,
            rejected: times
                .iter()
                .zip(&rejected_mask)
                .map(|(&t, &r)| RejectedAt {
                    t,
                    edges: if r { vec![(0, 1)] } else { vec![] },
                })
                .collect(),
            change_points: vec![],
            bootstrap_samples: vec![0.0; 10],
        };
        // No rejections -> empty.
        let r = mk(vec![0.2, 0.5, 0.8], vec![false, false, false], vec![0.1, 0.2, 0.3]);
        assert!(localize_change_points(&r, 0.1).is_empty());
        // Single rejected time -> that time.
        let r = mk(vec![0.2, 0.5, 0.8], vec![false, true, false], vec![0.1, 0.9, 0.3]);
        assert_eq!(localize_change_points(&r, 0.1), vec![0.5]);
        // Two runs separated by a gap > h; argmax within each run.
        let r = mk(
            vec![0.30, 0.33, 0.36, 0.66, 0.69],
            vec![true, true, false, true, true],
            vec![0.8, 1.4, 0.2, 2.0, 1.1],
        );
        let pts = localize_change_points(&r, 0.1);
        assert_eq!(pts, vec![0.33, 0.66]);
    }

    #[test]
    fn multiplier_streams_are_deterministic_and_distinct() {
        let a = multiplier_vector(7, 0, 16);
        let b = multiplier_vector(7, 0, 16);
        let c = multiplier_vector(7, 1, 16);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
