use dgci::precision::{clime_column, SolverOptions};
use dgci::testkit::simplex::{solve_clime_lp, LpOutcome};
use dgci::testkit::random_spd;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

#[test]
fn probe_oracle_equivalence_and_speed() {
    let opts = SolverOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let started = Instant::now();
    let mut max_gap = 0.0f64;
    let mut max_viol = 0.0f64;
    let mut n = 0;
    for inst in 0..100 {
        let p = 3 + (inst % 8);
        let sigma = random_spd(p, &mut rng);
        for &lambda in &[0.01, 0.05, 0.1] {
            let j = inst % p;
            let theta = match clime_column(&sigma.view(), j, lambda, &opts) {
                Ok(t) => t,
                Err(e) => panic!("inst {inst} p={p} lambda={lambda} j={j}: {e}"),
            };
            let obj: f64 = theta.iter().map(|v| v.abs()).sum();
            let r = sigma.dot(&theta);
            let mut viol = 0.0f64;
            for i in 0..p {
                let e = if i == j { 1.0 } else { 0.0 };
                viol = viol.max((r[i] - e).abs() - lambda);
            }
            match solve_clime_lp(&sigma.view(), j, lambda) {
                LpOutcome::Optimal { objective, .. } => {
                    max_gap = max_gap.max((obj - objective).abs());
                    max_viol = max_viol.max(viol);
                }
                LpOutcome::Infeasible => panic!("SPD should be feasible"),
            }
            n += 1;
        }
    }
    println!("instances = {n}, max |obj - oracle| = {max_gap:.3e}, max viol = {max_viol:.3e}, elapsed = {:?}", started.elapsed());
    assert!(max_gap < 1e-6);
}

#[test]
fn probe_run_test_speed_desk_scale() {
    use dgci::harness::*;
    use dgci::simgen::SmoothNullScenario;
    let plan = ExperimentPlan {
        mode: ExperimentMode::Type1,
        scenario: Scenario::SmoothNull(SmoothNullScenario::new(20, 600, 0)),
        repetitions: 2,
        c1: 1.0,
        c2: 0.2,
        alpha: 0.05,
        bootstrap_replicates: 300,
        grid_size: 50,
        seed: 9,
        rep_budget_seconds: None,
    };
    let started = Instant::now();
    let report = run_plan(&plan).unwrap();
    println!(
        "2 reps in {:?}; failures = {}, rejects = {:?}",
        started.elapsed(),
        report.failures,
        report.rejection_rate
    );
}
