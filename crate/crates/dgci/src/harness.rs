//! Monte Carlo experiment driver: repeated scenario draws, per-repetition
//! tests, and the accuracy accounting behind the summary tables.

use crate::error::{DgciError, Result};
use crate::inference::{run_test, BootstrapConfig, EdgeSet, GridSpec, TestResult};
use crate::precision::TuningConfig;
use crate::simgen::{gen_break, gen_smooth_null, BreakScenario, GroundTruth, SmoothNullScenario};
use crate::util::derive_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentMode {
    /// Rejection rate under the smooth-null scenario.
    Type1,
    /// Fraction of repetitions localizing both breaks within h/2.
    Power,
    /// Changed-edge sensitivity and false positive rate.
    EdgeRecovery,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    SmoothNull(SmoothNullScenario),
    Break(BreakScenario),
}

impl Scenario {
    fn with_seed(&self, seed: u64) -> Scenario {
        match self {
            Scenario::SmoothNull(s) => Scenario::SmoothNull(s.with_seed(seed)),
            Scenario::Break(s) => Scenario::Break(s.with_seed(seed)),
        }
    }

    pub fn n_t(&self) -> usize {
        match self {
            Scenario::SmoothNull(s) => s.n_t,
            Scenario::Break(s) => s.n_t,
        }
    }

    pub fn p(&self) -> usize {
        match self {
            Scenario::SmoothNull(s) => s.p,
            Scenario::Break(s) => s.p,
        }
    }
}

/// Everything one table cell needs: the scenario template, repetition
/// count, tuning constants, and the bootstrap settings. `seed` drives
/// every per-repetition stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub mode: ExperimentMode,
    pub scenario: Scenario,
    pub repetitions: usize,
    pub c1: f64,
    pub c2: f64,
    pub alpha: f64,
    pub bootstrap_replicates: usize,
    pub grid_size: usize,
    pub seed: u64,
    /// Advisory per-repetition budget; repetitions over budget are logged.
    /// Hard bounds come from the solver iteration caps.
    #[serde(default)]
    pub rep_budget_seconds: Option<f64>,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(DgciError::Config("plan needs repetitions >= 1".into()));
        }
        if self.grid_size == 0 {
            return Err(DgciError::Config("plan needs grid_size >= 1".into()));
        }
        BootstrapConfig::new(self.bootstrap_replicates, self.alpha, self.seed)?;
        match self.mode {
            ExperimentMode::Type1 => {
                if !matches!(self.scenario, Scenario::SmoothNull(_)) {
                    return Err(DgciError::Config(
                        "type1 experiments need a smooth_null scenario".into(),
                    ));
                }
            }
            ExperimentMode::Power | ExperimentMode::EdgeRecovery => {
                if !matches!(self.scenario, Scenario::Break(_)) {
                    return Err(DgciError::Config(
                        "power and edge_recovery experiments need a break scenario".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Outcome of one repetition. Wall-clock fields stay in memory only so
/// that serialized reports are bit-identical across machines and runs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub error: Option<String>,
    pub reject: bool,
    pub change_points: Vec<f64>,
    /// Distinct edges appearing in any rejected set.
    pub detected_edges: usize,
    /// Per true break: was some reported change point within h/2?
    pub break_hits: Vec<bool>,
    pub true_positives: usize,
    pub false_positives: usize,
    /// Size of the union of the ground-truth changed-edge sets.
    pub truth_edges: usize,
    #[serde(skip)]
    pub elapsed: Option<std::time::Duration>,
}

impl RepRecord {
    fn failed(rep: usize, seed: u64, err: &DgciError) -> Self {
        Self {
            rep,
            seed,
            error: Some(err.to_string()),
            reject: false,
            change_points: Vec::new(),
            detected_edges: 0,
            break_hits: Vec::new(),
            true_positives: 0,
            false_positives: 0,
            truth_edges: 0,
            elapsed: None,
        }
    }
}

/// Aggregated table cell plus the raw per-repetition records.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentReport {
    pub mode: ExperimentMode,
    pub repetitions: usize,
    pub completed: usize,
    pub failures: usize,
    /// Fraction of completed repetitions that rejected the null.
    pub rejection_rate: Option<f64>,
    /// Fraction of completed repetitions localizing every break within h/2.
    pub power_both_breaks: Option<f64>,
    pub per_break_hit_rate: Vec<f64>,
    /// Mean over completed repetitions of |detected ∩ truth| / |truth|.
    pub sensitivity: Option<f64>,
    /// Mean over repetitions with detections of |false| / |detected|.
    pub false_positive_rate: Option<f64>,
    /// Repetitions where the false positive rate was defined.
    pub fpr_defined_reps: usize,
    pub records: Vec<RepRecord>,
    pub plan: ExperimentPlan,
}

fn edge_accounting(
    result: &TestResult,
    truth: &GroundTruth,
    h: f64,
) -> (usize, usize, usize, usize) {
    let mut detected: HashSet<(usize, usize)> = HashSet::new();
    for r in &result.rejected {
        for &e in &r.edges {
            detected.insert(e);
        }
    }
    // An edge is a true positive when it appears in a rejected set at some
    // grid time within h/2 of a break whose ground-truth set contains it.
    let mut true_pos: HashSet<(usize, usize)> = HashSet::new();
    for (b, &tb) in truth.break_times.iter().enumerate() {
        let truth_set: HashSet<(usize, usize)> =
            truth.changed_edges[b].iter().copied().collect();
        for r in &result.rejected {
            if (r.t - tb).abs() <= h / 2.0 {
                for &e in &r.edges {
                    if truth_set.contains(&e) {
                        true_pos.insert(e);
                    }
                }
            }
        }
    }
    let truth_union: HashSet<(usize, usize)> = truth
        .changed_edges
        .iter()
        .flat_map(|c| c.iter().copied())
        .collect();
    let tp = true_pos.len();
    let fp = detected.len() - tp;
    (detected.len(), tp, fp, truth_union.len())
}

fn run_rep(plan: &ExperimentPlan, rep: usize) -> RepRecord {
    let rep_seed = derive_seed(plan.seed, rep as u64);
    let scenario_seed = derive_seed(rep_seed, 0);
    let bootstrap_seed = derive_seed(rep_seed, 1);
    let started = Instant::now();
    let outcome = (|| -> Result<RepRecord> {
        let scenario = plan.scenario.with_seed(scenario_seed);
        let (data, truth) = match scenario {
            Scenario::SmoothNull(s) => {
                let (_, data) = gen_smooth_null(&s)?;
                (data, None)
            }
            Scenario::Break(s) => {
                let (_, data, truth) = gen_break(&s)?;
                (data, Some(truth))
            }
        };
        let tuning = TuningConfig::new(data.n(), data.p(), plan.c1, plan.c2)?;
        let grid = GridSpec::regular(tuning.h(), plan.grid_size, &[])?;
        let boot = BootstrapConfig::new(plan.bootstrap_replicates, plan.alpha, bootstrap_seed)?;
        let edges = EdgeSet::complete(data.p());
        let result = run_test(&data, &grid, &tuning, &boot, &edges)?;

        let (break_hits, detected, tp, fp, truth_edges) = match &truth {
            Some(gt) => {
                let hits: Vec<bool> = gt
                    .break_times
                    .iter()
                    .map(|&tb| {
                        result
                            .change_points
                            .iter()
                            .any(|&cp| (cp - tb).abs() <= tuning.h() / 2.0)
                    })
                    .collect();
                let (detected, tp, fp, truth_edges) = edge_accounting(&result, gt, tuning.h());
                (hits, detected, tp, fp, truth_edges)
            }
            None => {
                let mut detected: HashSet<(usize, usize)> = HashSet::new();
                for r in &result.rejected {
                    detected.extend(r.edges.iter().copied());
                }
                (Vec::new(), detected.len(), 0, 0, 0)
            }
        };
        Ok(RepRecord {
            rep,
            seed: rep_seed,
            error: None,
            reject: result.reject_null,
            change_points: result.change_points,
            detected_edges: detected,
            break_hits,
            true_positives: tp,
            false_positives: fp,
            truth_edges,
            elapsed: None,
        })
    })();
    let elapsed = started.elapsed();
    if let Some(budget) = plan.rep_budget_seconds {
        if elapsed.as_secs_f64() > budget {
            log::warn!(
                "repetition {rep} took {:.1}s, over the {budget:.1}s budget",
                elapsed.as_secs_f64()
            );
        }
    }
    match outcome {
        Ok(mut rec) => {
            rec.elapsed = Some(elapsed);
            rec
        }
        Err(e) => {
            log::warn!("repetition {rep} failed: {e}");
            let mut rec = RepRecord::failed(rep, rep_seed, &e);
            rec.elapsed = Some(elapsed);
            rec
        }
    }
}

fn aggregate(plan: &ExperimentPlan, records: Vec<RepRecord>) -> ExperimentReport {
    let completed: Vec<&RepRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let n_ok = completed.len();
    let failures = records.len() - n_ok;

    let rejection_rate = if n_ok > 0 {
        Some(completed.iter().filter(|r| r.reject).count() as f64 / n_ok as f64)
    } else {
        None
    };

    let n_breaks = completed
        .iter()
        .map(|r| r.break_hits.len())
        .max()
        .unwrap_or(0);
    let (power, per_break) = if n_breaks > 0 && n_ok > 0 {
        let both = completed
            .iter()
            .filter(|r| !r.break_hits.is_empty() && r.break_hits.iter().all(|&h| h))
            .count();
        let per: Vec<f64> = (0..n_breaks)
            .map(|b| {
                completed
                    .iter()
                    .filter(|r| r.break_hits.get(b).copied().unwrap_or(false))
                    .count() as f64
                    / n_ok as f64
            })
            .collect();
        (Some(both as f64 / n_ok as f64), per)
    } else {
        (None, Vec::new())
    };

    let sens_reps: Vec<f64> = completed
        .iter()
        .filter(|r| r.truth_edges > 0)
        .map(|r| r.true_positives as f64 / r.truth_edges as f64)
        .collect();
    let sensitivity = if sens_reps.is_empty() {
        None
    } else {
        Some(sens_reps.iter().sum::<f64>() / sens_reps.len() as f64)
    };

    let fpr_reps: Vec<f64> = completed
        .iter()
        .filter(|r| r.detected_edges > 0)
        .map(|r| r.false_positives as f64 / r.detected_edges as f64)
        .collect();
    let fpr_defined = fpr_reps.len();
    let false_positive_rate = if fpr_reps.is_empty() {
        None
    } else {
        Some(fpr_reps.iter().sum::<f64>() / fpr_reps.len() as f64)
    };

    ExperimentReport {
        mode: plan.mode,
        repetitions: records.len(),
        completed: n_ok,
        failures,
        rejection_rate,
        power_both_breaks: power,
        per_break_hit_rate: per_break,
        sensitivity,
        false_positive_rate,
        fpr_defined_reps: fpr_defined,
        records,
        plan: plan.clone(),
    }
}

/// Runs the plan's repetitions in parallel and aggregates. Aggregation
/// reads records in repetition order, so the report is identical for any
/// thread count.
pub fn run_plan(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    plan.validate()?;
    let records: Vec<RepRecord> = (0..plan.repetitions)
        .into_par_iter()
        .map(|rep| run_rep(plan, rep))
        .collect();
    Ok(aggregate(plan, records))
}

/// Type I error rate under the smooth-null scenario.
pub fn run_type1(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    if plan.mode != ExperimentMode::Type1 {
        return Err(DgciError::Config("plan mode must be type1".into()));
    }
    run_plan(plan)
}

/// Power of localizing both breaks within half a bandwidth.
pub fn run_power(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    if plan.mode != ExperimentMode::Power {
        return Err(DgciError::Config("plan mode must be power".into()));
    }
    run_plan(plan)
}

/// Changed-edge sensitivity and false positive rate.
pub fn run_edge_recovery(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    if plan.mode != ExperimentMode::EdgeRecovery {
        return Err(DgciError::Config("plan mode must be edge_recovery".into()));
    }
    run_plan(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_type1_plan() -> ExperimentPlan {
        ExperimentPlan {
            mode: ExperimentMode::Type1,
            scenario: Scenario::SmoothNull(SmoothNullScenario::new(4, 80, 0)),
            repetitions: 3,
            c1: 1.0,
            c2: 0.3,
            alpha: 0.1,
            bootstrap_replicates: 20,
            grid_size: 5,
            seed: 42,
            rep_budget_seconds: None,
        }
    }

    #[test]
    fn plan_validation_matches_mode_to_scenario() {
        let mut plan = tiny_type1_plan();
        assert!(plan.validate().is_ok());
        plan.mode = ExperimentMode::Power;
        assert!(plan.validate().is_err());
        plan.scenario = Scenario::Break(BreakScenario::new(4, 3, 0.4, 80, 0));
        assert!(plan.validate().is_ok());
        plan.repetitions = 0;
        assert!(plan.validate().is_err());
    }

    #[test]
    fn type1_report_accounting_identities() {
        let plan = tiny_type1_plan();
        let report = run_type1(&plan).unwrap();
        assert_eq!(report.repetitions, 3);
        assert_eq!(report.completed + report.failures, 3);
        let rejects = report
            .records
            .iter()
            .filter(|r| r.error.is_none() && r.reject)
            .count();
        if report.completed > 0 {
            assert_eq!(
                report.rejection_rate.unwrap(),
                rejects as f64 / report.completed as f64
            );
        }
    }

    #[test]
    fn reports_are_reproducible() {
        let plan = tiny_type1_plan();
        let a = run_plan(&plan).unwrap();
        let b = run_plan(&plan).unwrap();
        // Wall-clock fields are skipped by serde; the serialized reports
        // must be byte-identical.
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(a.rejection_rate, b.rejection_rate);
    }

    #[test]
    fn per_rep_seeds_are_distinct() {
        let plan = tiny_type1_plan();
        let report = run_plan(&plan).unwrap();
        let mut seeds: Vec<u64> = report.records.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), report.records.len());
    }

    #[test]
    fn edge_accounting_identity_detected_splits() {
        let plan = ExperimentPlan {
            mode: ExperimentMode::EdgeRecovery,
            scenario: Scenario::Break(BreakScenario::new(5, 4, 0.6, 150, 1)),
            repetitions: 2,
            c1: 1.0,
            c2: 0.4,
            alpha: 0.1,
            bootstrap_replicates: 25,
            grid_size: 8,
            seed: 7,
            rep_budget_seconds: None,
        };
        let report = run_edge_recovery(&plan).unwrap();
        for r in report.records.iter().filter(|r| r.error.is_none()) {
            assert_eq!(r.detected_edges, r.true_positives + r.false_positives);
        }
    }
}
