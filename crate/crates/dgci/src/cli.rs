//! Command-line front end: `simulate`, `test`, `experiment`, `report`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numerical failure. The thread count comes from `--threads` or the
//! `DGCI_THREADS` environment variable; outputs are bit-identical for any
//! thread count.

use crate::error::{DgciError, Result};
use crate::harness::{run_plan, ExperimentMode, ExperimentPlan, ExperimentReport, Scenario};
use crate::inference::{run_test, BootstrapConfig, EdgeSet, GridSpec};
use crate::io;
use crate::precision::TuningConfig;
use crate::simgen::{gen_break, gen_smooth_null, BreakScenario, GroundTruth, SmoothNullScenario};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fs;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "dgci",
    about = "Detects sudden changes in the time-varying precision matrix of a multivariate Gaussian process",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Worker thread count (default: DGCI_THREADS env var, else all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset plus its ground truth sidecar.
    Simulate(SimulateArgs),
    /// Run the change test on a dataset CSV.
    Test(TestArgs),
    /// Drive a Monte Carlo experiment plan.
    Experiment(ExperimentArgs),
    /// Render the summary table of a stored experiment report.
    Report(ReportArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ScenarioKind {
    SmoothNull,
    Break,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub scenario: ScenarioKind,
    /// Dimension of each observation.
    #[arg(long, default_value_t = 20)]
    pub p: usize,
    /// Number of observations.
    #[arg(long = "n-t", default_value_t = 1000)]
    pub n_t: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Break scenario: number of off-diagonal support pairs.
    #[arg(long = "m-entries", default_value_t = 20)]
    pub m_entries: usize,
    /// Break scenario: off-diagonal effect size in (0, 1).
    #[arg(long, default_value_t = 0.2)]
    pub effect: f64,
    /// Smooth-null scenario: number of sparse direction vectors.
    #[arg(long = "n-components", default_value_t = 100)]
    pub n_components: usize,
    /// Smooth-null scenario: multinomial trials per direction vector.
    #[arg(long, default_value_t = 3)]
    pub trials: usize,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TestArgs {
    /// Dataset CSV (header `t,...`, times in (0, 1)).
    #[arg(long)]
    pub input: PathBuf,
    /// Bandwidth constant: h = c1 * n^{-0.4}.
    #[arg(long, default_value_t = 1.0)]
    pub c1: f64,
    /// Penalty constant: lambda = c2 * (h + sqrt(log(n p / sqrt(h)) / (n h))).
    #[arg(long, default_value_t = 0.4)]
    pub c2: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Bootstrap replicate count.
    #[arg(long, default_value_t = 500)]
    pub bootstrap: usize,
    /// Evenly spaced grid size on [h, 1-h].
    #[arg(long, default_value_t = 50)]
    pub grid: usize,
    /// Additional test times (repeatable); must lie in [h, 1-h].
    #[arg(long = "extra-time")]
    pub extra_times: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Subtract the two-sided kernel-smoothed mean before testing.
    #[arg(long)]
    pub center: bool,
    /// Restrict testing to the edges listed in this file (`j,k` per line).
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Treat the time column as frame indices and map row i (1-based) to
    /// (i - 0.5) / n.
    #[arg(long = "normalize-time")]
    pub normalize_time: bool,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    /// Experiment plan JSON.
    #[arg(long)]
    pub plan: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// A report.json produced by `experiment`.
    #[arg(long)]
    pub input: PathBuf,
}

fn effective_threads(flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| {
        std::env::var("DGCI_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = effective_threads(cli.threads);
    match threads {
        Some(n) if n > 0 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| DgciError::Config(format!("cannot build thread pool: {e}")))?;
            pool.install(|| dispatch(&cli.command))
        }
        _ => dispatch(&cli.command),
    }
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Simulate(args) => simulate(args),
        Command::Test(args) => test(args),
        Command::Experiment(args) => experiment(args),
        Command::Report(args) => {
            let report = io::read_report(&args.input)?;
            print!("{}", render_report(&report));
            Ok(())
        }
    }
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    fs::create_dir_all(&args.out)?;
    let dataset_path = args.out.join("dataset.csv");
    let truth_path = args.out.join("truth.json");
    match args.scenario {
        ScenarioKind::SmoothNull => {
            let mut scn = SmoothNullScenario::new(args.p, args.n_t, args.seed);
            scn.n_components = args.n_components;
            scn.trials = args.trials;
            let (_, data) = gen_smooth_null(&scn)?;
            io::write_dataset(&dataset_path, &data)?;
            io::write_ground_truth(
                &truth_path,
                &GroundTruth {
                    break_times: vec![],
                    changed_edges: vec![],
                },
            )?;
        }
        ScenarioKind::Break => {
            let scn = BreakScenario::new(args.p, args.m_entries, args.effect, args.n_t, args.seed);
            let (_, data, truth) = gen_break(&scn)?;
            io::write_dataset(&dataset_path, &data)?;
            io::write_ground_truth(&truth_path, &truth)?;
        }
    }
    println!("wrote {}", dataset_path.display());
    println!("wrote {}", truth_path.display());
    Ok(())
}

fn test(args: &TestArgs) -> Result<()> {
    // Reject bad numeric configuration before touching the data.
    if !(args.c1 > 0.0) {
        return Err(DgciError::Config(format!("--c1 must be positive, got {}", args.c1)));
    }
    if !(args.c2 >= 0.0) {
        return Err(DgciError::Config(format!(
            "--c2 must be non-negative, got {}",
            args.c2
        )));
    }
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(DgciError::Config(format!(
            "--alpha must lie in (0, 1), got {}",
            args.alpha
        )));
    }
    if args.bootstrap == 0 {
        return Err(DgciError::Config("--bootstrap must be at least 1".into()));
    }
    if args.grid == 0 {
        return Err(DgciError::Config("--grid must be at least 1".into()));
    }

    let mut data = io::load_dataset_with_mode(&args.input, args.normalize_time)?;
    let tuning = TuningConfig::new(data.n(), data.p(), args.c1, args.c2)?;
    if args.center {
        data = io::center_dataset(&data, tuning.h())?;
    }
    let grid = GridSpec::regular(tuning.h(), args.grid, &args.extra_times)?;
    let boot = BootstrapConfig::new(args.bootstrap, args.alpha, args.seed)?;
    let edges = match &args.edges {
        Some(path) => io::load_edge_set(path, data.p())?,
        None => EdgeSet::complete(data.p()),
    };

    let result = run_test(&data, &grid, &tuning, &boot, &edges)?;

    fs::create_dir_all(&args.out)?;
    let result_path = args.out.join("result.json");
    let stats_path = args.out.join("statistics.csv");
    io::write_test_result(&result_path, &result)?;
    io::write_statistics_csv(&stats_path, &result)?;

    println!(
        "n = {}, p = {}, h = {:.6}, lambda = {:.6}",
        result.n, result.p, result.h, result.lambda
    );
    println!(
        "U_E = {:.6}, threshold = {:.6} (alpha = {}, B = {})",
        result.u_e, result.threshold, result.alpha, result.replicates
    );
    println!("reject_null = {}", result.reject_null);
    if !result.change_points.is_empty() {
        let pts = result
            .change_points
            .iter()
            .map(|t| format!("{t:.4}"))
            .collect::<Vec<_>>()
            .join(", ");
        println!("change points: {pts}");
    }
    if !result.dropped_times.is_empty() {
        println!("dropped grid times: {}", result.dropped_times.len());
    }
    println!("wrote {}", result_path.display());
    println!("wrote {}", stats_path.display());
    Ok(())
}

fn experiment(args: &ExperimentArgs) -> Result<()> {
    let text = fs::read_to_string(&args.plan)?;
    let plan: ExperimentPlan =
        serde_json::from_str(&text).map_err(|e| DgciError::Config(format!("bad plan: {e}")))?;
    plan.validate()?;
    let report = run_plan(&plan)?;
    fs::create_dir_all(&args.out)?;
    let report_path = args.out.join("report.json");
    let reps_path = args.out.join("reps.csv");
    io::write_report(&report_path, &report)?;
    io::write_reps_csv(&reps_path, &report.records)?;
    print!("{}", render_report(&report));
    println!("wrote {}", report_path.display());
    println!("wrote {}", reps_path.display());
    Ok(())
}

/// Renders the table for a report. Rates are recomputed from the raw
/// records so the rendered numbers are exact counts over counts.
pub fn render_report(report: &ExperimentReport) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let ok: Vec<_> = report
        .records
        .iter()
        .filter(|r| r.error.is_none())
        .collect();
    let n_ok = ok.len();
    let scenario = match &report.plan.scenario {
        Scenario::SmoothNull(s) => format!("smooth_null p={} n_t={}", s.p, s.n_t),
        Scenario::Break(s) => format!(
            "break p={} m={} effect={} n_t={}",
            s.p, s.m_entries, s.effect, s.n_t
        ),
    };
    let _ = writeln!(out, "experiment: {:?}", report.mode);
    let _ = writeln!(out, "scenario:   {scenario}");
    let _ = writeln!(
        out,
        "reps:       {} completed, {} failed",
        report.completed, report.failures
    );
    match report.mode {
        ExperimentMode::Type1 => {
            let rejects = ok.iter().filter(|r| r.reject).count();
            if n_ok > 0 {
                let _ = writeln!(
                    out,
                    "type I rejection rate: {}/{} = {}",
                    rejects,
                    n_ok,
                    rejects as f64 / n_ok as f64
                );
            }
        }
        ExperimentMode::Power => {
            let both = ok
                .iter()
                .filter(|r| !r.break_hits.is_empty() && r.break_hits.iter().all(|&h| h))
                .count();
            if n_ok > 0 {
                let _ = writeln!(
                    out,
                    "power (all breaks within h/2): {}/{} = {}",
                    both,
                    n_ok,
                    both as f64 / n_ok as f64
                );
                for (b, rate) in report.per_break_hit_rate.iter().enumerate() {
                    let _ = writeln!(out, "  break {} hit rate: {rate}", b + 1);
                }
            }
        }
        ExperimentMode::EdgeRecovery => {
            if let Some(s) = report.sensitivity {
                let _ = writeln!(out, "mean sensitivity: {s}");
            }
            if let Some(f) = report.false_positive_rate {
                let _ = writeln!(
                    out,
                    "mean false positive rate: {f} (defined in {}/{} reps)",
                    report.fpr_defined_reps, n_ok
                );
            }
        }
    }
    out
}
