//! Cross-horizon structural properties of the continuation: the objective
//! chain between nested horizons, warm-start quality, the shutdown/threshold
//! tail implication, monitored trends, and the anchored-solve study.

mod common;

use std::sync::OnceLock;

use parcontrol::discretize::{build_operators, DiscreteOperators, TimeGrid};
use parcontrol::horizon::{anchored_study, convergence_monitors, run_continuation, Trend};
use parcontrol::horizon::ContinuationOutcome;
use parcontrol::model::ProblemSpec;
use parcontrol::optimize::{objective_value, SolveOptions};

struct Study {
    spec: ProblemSpec,
    ops: DiscreteOperators,
    solver: SolveOptions,
    outcome: ContinuationOutcome,
}

fn study() -> &'static Study {
    static CELL: OnceLock<Study> = OnceLock::new();
    CELL.get_or_init(|| {
        let run = common::load_config("schloegl_tracking.json").compile().unwrap();
        let ops = build_operators(&run.spec, &run.mesh).unwrap();
        let mut schedule = run.schedule.clone();
        schedule.horizons = vec![4.0, 8.0, 16.0];
        let outcome = run_continuation(&run.spec, &ops, &schedule, &run.solver, None).unwrap();
        assert!(outcome.report.error.is_none());
        Study {
            spec: run.spec,
            ops,
            solver: run.solver,
            outcome,
        }
    })
}

#[test]
fn objective_chain_between_nested_horizons() {
    // each horizon's solution beats the restriction of any later one
    let s = study();
    let records = &s.outcome.report.records;
    let final_control = &s.outcome.final_solution.as_ref().unwrap().control;
    // evaluate J at each shorter horizon with the longest control restricted
    for rec in records.iter().take(records.len() - 1) {
        let tg = TimeGrid::with_dt(rec.t_horizon, 0.05).unwrap();
        let restricted = final_control.truncated(tg.steps);
        let (j_restricted, _, _) =
            objective_value(&s.spec, &s.ops, &tg, &restricted, None).unwrap();
        assert!(
            rec.objective <= j_restricted + 1e-10,
            "T={}: own J {} vs restricted longer-horizon J {}",
            rec.t_horizon,
            rec.objective,
            j_restricted
        );
    }
}

#[test]
fn warm_start_never_loses_to_cold_start() {
    let s = study();
    for rec in s.outcome.report.records.iter().skip(1) {
        assert!(
            rec.warm_start_objective <= rec.cold_start_objective + 1e-12,
            "T={}: warm {} vs cold {}",
            rec.t_horizon,
            rec.warm_start_objective,
            rec.cold_start_objective
        );
    }
}

#[test]
fn shutdown_tail_keeps_adjoint_below_threshold() {
    // past the certified shutdown time, ‖φ(t)‖_ω stays ≤ κ(1 + tol)
    let s = study();
    let sol = s.outcome.final_solution.as_ref().unwrap();
    let rec = s.outcome.report.records.last().unwrap();
    let t0 = rec.shutdown_time.expect("shutdown observed");
    assert!(rec.sparsity_violations == 0);
    let tg = TimeGrid::with_dt(rec.t_horizon, 0.05).unwrap();
    let kappa = s.spec.kappa;
    for k in 0..=tg.steps {
        let t = tg.node(k);
        if t >= t0 - 1e-12 {
            let phi_omega = s.ops.restrict_omega(sol.adjoint.row(k));
            let norm = s.ops.omega_norm(&phi_omega);
            assert!(
                norm <= kappa * (1.0 + 1e-6),
                "t={t}: ‖φ‖_ω = {norm} vs κ = {kappa}"
            );
        }
    }
}

#[test]
fn monitors_show_contraction() {
    let s = study();
    let summary = convergence_monitors(&s.outcome.report.records).unwrap();
    for item in &summary.items {
        match item.name.as_str() {
            // terminal/tail state norms shrink strictly on this instance
            "terminal_state_norm" | "tail_state_norm" | "tail_adjoint_norm" => {
                assert_eq!(
                    item.verdict,
                    Trend::Decreasing,
                    "{}: {:?}",
                    item.name,
                    item.values
                );
            }
            "adjoint_l2q" => {
                assert!(summary.adjoint_l2q_bound.is_finite());
                let spread = item.values.iter().cloned().fold(f64::MIN, f64::max)
                    - item.values.iter().cloned().fold(f64::MAX, f64::min);
                // bounded uniformly across horizons (the values barely move)
                assert!(
                    spread <= 0.05 * summary.adjoint_l2q_bound,
                    "adjoint L²(Q) norms spread too much: {:?}",
                    item.values
                );
            }
            _ => {}
        }
    }
    // cross-horizon distances decrease
    let distances: Vec<f64> = s
        .outcome
        .report
        .records
        .iter()
        .filter_map(|r| r.control_distance_prev)
        .collect();
    assert!(distances.windows(2).all(|w| w[1] < w[0]), "{distances:?}");
}

#[test]
fn decay_of_terminal_norm_along_schedule() {
    let s = study();
    let terminals: Vec<f64> = s
        .outcome
        .report
        .records
        .iter()
        .map(|r| r.terminal_state_norm)
        .collect();
    assert!(
        terminals.windows(2).all(|w| w[1] < w[0]),
        "terminal norms {terminals:?}"
    );
}

#[test]
fn anchored_solution_tracks_the_long_horizon_better() {
    let s = study();
    let study_result = anchored_study(&s.spec, &s.ops, 0.05, 4.0, 16.0, &s.solver).unwrap();
    assert!(
        study_result.anchored_distance < study_result.plain_distance,
        "anchored {} vs plain {}",
        study_result.anchored_distance,
        study_result.plain_distance
    );
}

#[test]
fn solver_log_is_monotone_with_restart() {
    let s = study();
    let sol = s.outcome.final_solution.as_ref().unwrap();
    for w in sol.log.windows(2) {
        assert!(
            w[1].objective <= w[0].objective + 1e-12,
            "objective rose from {} to {} at iter {}",
            w[0].objective,
            w[1].objective,
            w[1].iter
        );
    }
    assert!(sol.kkt.stationarity_residual <= s.solver.kkt_tol);
}
