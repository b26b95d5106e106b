use dgci::inference::*;
use dgci::kernel::{smoothed_covariance, KernelSpec, Side};
use dgci::linalg::spd_inverse;
use dgci::precision::{debias_masked, variance_approx, PrecisionEstimate, VarianceField};
use dgci::simgen::sample_gaussian;
use dgci::testkit::random_spd;
use dgci::TimeSeriesDataset;
use ndarray::{Array1, Array2};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Stationary model; plug in the TRUE precision columns everywhere, so the
// only randomness is in the smoothed covariances. Per-edge z-scores of the
// statistic should then match the bootstrap z-scale.
#[test]
fn probe_true_theta_variance_ratio() {
    let p = 10;
    let n = 600;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut theta_true = random_spd(p, &mut rng);
    for i in 0..p { theta_true[[i,i]] += 1.0; }
    let _sigma_true = spd_inverse(&theta_true.view()).unwrap();
    let h = 1.0 * (n as f64).powf(-0.4);
    let t0 = 0.5;
    let spec = KernelSpec::new(h, Side::TwoSided).unwrap();
    let edges = EdgeSet::complete(p);
    let scale = (n as f64 * h).sqrt();

    let reps = 300;
    let b = 200;
    let mut stat_samples: Vec<f64> = Vec::new(); // signed z for edge (0,1)
    let mut boot_sds: Vec<f64> = Vec::new();
    for r in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + r);
        let times = Array1::from_iter((0..n).map(|_| rng.random_range(0.001..0.999)));
        let obs = sample_gaussian(&theta_true.view(), n, &mut rng).unwrap();
        let data = TimeSeriesDataset::new(times, obs).unwrap();

        let est = |side: Side| PrecisionEstimate {
            at_time: t0, side,
            columns: theta_true.clone(),
            matrix: theta_true.clone(),
            lambda_used: 0.0,
        };
        let cp = smoothed_covariance(&data, t0, &spec.with_side(Side::Right)).unwrap();
        let cm = smoothed_covariance(&data, t0, &spec.with_side(Side::Left)).unwrap();
        let tp = est(Side::Right);
        let tm = est(Side::Left);
        let dp = debias_masked(&tp, &cp);
        let dm = debias_masked(&tm, &cm);
        let vp = variance_approx(&data, t0, Side::Right, &tp, &spec).unwrap();
        let vm = variance_approx(&data, t0, Side::Left, &tm, &spec).unwrap();
        let field = VarianceField::new(t0, vp, vm);
        let z = scale * (dp.matrix[[0,1]] - dm.matrix[[0,1]]) / field.normalizer[[0,1]];
        stat_samples.push(z);

        // bootstrap z for the same edge with shared xi
        let compp = bootstrap_component(&data, t0, Side::Right, &tp, &spec, &edges).unwrap();
        let compm = bootstrap_component(&data, t0, Side::Left, &tm, &spec, &edges).unwrap();
        let mut vals = Vec::with_capacity(b);
        for rep in 0..b as u64 {
            let xi = multiplier_vector(999, rep as usize, n);
            let xs = xi.as_slice().unwrap();
            let mut up_ = vec![0.0; edges.len()];
            let mut um_ = vec![0.0; edges.len()];
            // recompute sums for edge 0 = pair (0,1)
            for (row, &i) in compp.window.iter().enumerate() {
                up_[0] += compp.matrix[[row, 0]] * xs[i];
            }
            for (row, &i) in compm.window.iter().enumerate() {
                um_[0] += compm.matrix[[row, 0]] * xs[i];
            }
            let v = scale * (up_[0] / compp.weight_sum - um_[0] / compm.weight_sum)
                / field.normalizer[[0,1]];
            vals.push(v);
        }
        let mean: f64 = vals.iter().sum::<f64>() / b as f64;
        let var: f64 = vals.iter().map(|v| (v-mean)*(v-mean)).sum::<f64>() / (b-1) as f64;
        boot_sds.push(var.sqrt());
        if r == 0 {
            println!("first rep: z = {z:.3}, boot sd = {:.3}", var.sqrt());
        }
    }
    let m: f64 = stat_samples.iter().sum::<f64>() / reps as f64;
    let v: f64 = stat_samples.iter().map(|x| (x-m)*(x-m)).sum::<f64>() / (reps-1) as f64;
    let mean_boot: f64 = boot_sds.iter().sum::<f64>() / reps as f64;
    println!("TRUE-THETA: empirical sd(z) = {:.4} (mean {m:.4}), mean bootstrap sd = {mean_boot:.4}, ratio = {:.3}",
        v.sqrt(), v.sqrt() / mean_boot);
}
