//! Growing-horizon continuation: solve the finite-horizon problem over an
//! increasing schedule with zero-extension warm starts, track cross-horizon
//! convergence diagnostics, and certify the control shutdown time.
//!
//! All horizons share one `dt`, so a longer horizon's grid restricted to a
//! shorter one coincides nodewise and cross-horizon distances need no
//! interpolation.

use serde::{Deserialize, Serialize};

use crate::discretize::{DiscreteOperators, Role, TimeGrid, Trajectory};
use crate::error::{Result, SolverError};
use crate::linalg::wnorm;
use crate::model::ProblemSpec;
use crate::optimize::{objective_value, solve_pt, PtSolution, SolveOptions};

/// Increasing horizon list with a shared time step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HorizonSchedule {
    pub horizons: Vec<f64>,
    pub dt: f64,
}

impl HorizonSchedule {
    /// Geometric doubling t0 · 2^k, `count` entries.
    pub fn doubling(t0: f64, count: usize, dt: f64) -> HorizonSchedule {
        HorizonSchedule {
            horizons: (0..count).map(|k| t0 * (1u64 << k) as f64).collect(),
            dt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() {
            return Err(SolverError::Config {
                field: "schedule.horizons".into(),
                message: "schedule needs at least one horizon".into(),
            });
        }
        if self.horizons.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SolverError::Config {
                field: "schedule.horizons".into(),
                message: "horizons must be strictly increasing".into(),
            });
        }
        for &t in &self.horizons {
            TimeGrid::with_dt(t, self.dt)?;
        }
        Ok(())
    }
}

/// Scale-aware early-stop tolerances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoppingRule {
    /// Cross-horizon control distance threshold, relative to max(1, ‖u‖∞).
    #[serde(default = "default_horizon_tol")]
    pub horizon_tol_rel: f64,
    /// Tail state norm threshold, relative to ‖y₀‖.
    #[serde(default = "default_tail_tol")]
    pub tail_tol_rel: f64,
}

fn default_horizon_tol() -> f64 {
    1e-6
}

fn default_tail_tol() -> f64 {
    1e-6
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule {
            horizon_tol_rel: 1e-6,
            tail_tol_rel: 1e-6,
        }
    }
}

/// Diagnostics of one horizon in the schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HorizonRecord {
    pub t_horizon: f64,
    pub steps: usize,
    pub objective: f64,
    pub smooth_cost: f64,
    /// j_T(u) = ‖u‖_{L¹(0,T;L²(ω))} (equals the L¹(0,∞) norm of the
    /// zero-extension).
    pub control_l1l2: f64,
    /// ‖y(T)‖_{L²(Ω)}.
    pub terminal_state_norm: f64,
    /// Start of the tail observation window: max(target support end, T/2).
    pub tail_start: f64,
    /// max ‖y(t_k)‖ over nodes beyond the tail start.
    pub tail_state_norm: f64,
    /// max ‖φ(t_k)‖ over the same window.
    pub tail_adjoint_norm: f64,
    /// ‖φ‖_{L²(Q_T)}, which stays bounded across horizons.
    pub adjoint_l2q: f64,
    /// ‖u_T − u_{T_prev}‖_{L²(Q_ω)} on the common interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_distance_prev: Option<f64>,
    /// ‖y_T − y_{T_prev}‖_{L²(Q)} on the common interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_distance_prev: Option<f64>,
    /// Certified shutdown time (None: control active up to the horizon).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shutdown_time: Option<f64>,
    /// Objective of the zero-extended warm start before iterating.
    pub warm_start_objective: f64,
    /// Objective of the cold start u = 0 at this horizon.
    pub cold_start_objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stationarity_residual: f64,
    pub sparsity_violations: usize,
    pub active_slices: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HorizonReport {
    pub records: Vec<HorizonRecord>,
    pub stopped_early: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Continuation output: the report plus the last completed solve.
pub struct ContinuationOutcome {
    pub report: HorizonReport,
    pub final_solution: Option<PtSolution>,
}

/// Shutdown time of a control trajectory: `dt · (1 + k_last)` with `k_last`
/// the 1-based index of the last slice whose ω-norm exceeds `eps_u`; 0 for
/// the zero control; `None` when the final slice is still active (shutdown
/// not observed within the horizon).
pub fn shutdown_time(u: &Trajectory, ops: &DiscreteOperators, dt: f64, eps_u: f64) -> Option<f64> {
    let w = &ops.omega_weights;
    let last_active = (0..u.n_time).rev().find(|&k| wnorm(w, u.row(k)) > eps_u);
    match last_active {
        None => Some(0.0),
        Some(k) if k + 1 == u.n_time => None,
        Some(k) => Some(dt * (k + 2) as f64),
    }
}

fn l2q_distance_controls(
    a: &Trajectory,
    b: &Trajectory,
    ops: &DiscreteOperators,
    dt: f64,
    steps: usize,
) -> f64 {
    let mut acc = 0.0;
    let mut diff = vec![0.0; a.n_space];
    for k in 0..steps {
        let ra = a.row(k);
        let rb = b.row(k);
        for i in 0..diff.len() {
            diff[i] = ra[i] - rb[i];
        }
        let n = wnorm(&ops.omega_weights, &diff);
        acc += dt * n * n;
    }
    acc.sqrt()
}

fn l2q_distance_states(
    a: &Trajectory,
    b: &Trajectory,
    ops: &DiscreteOperators,
    dt: f64,
    steps: usize,
) -> f64 {
    let mut acc = 0.0;
    let mut diff = vec![0.0; a.n_space];
    for k in 0..steps {
        let ra = a.row(k);
        let rb = b.row(k);
        for i in 0..diff.len() {
            diff[i] = ra[i] - rb[i];
        }
        let n = ops.l2_norm(&diff);
        acc += dt * n * n;
    }
    acc.sqrt()
}

/// Run the continuation over the schedule. Solve failures truncate the
/// report at the failing horizon instead of raising.
pub fn run_continuation(
    spec: &ProblemSpec,
    ops: &DiscreteOperators,
    schedule: &HorizonSchedule,
    solve_opts: &SolveOptions,
    stopping: Option<&StoppingRule>,
) -> Result<ContinuationOutcome> {
    run_continuation_observed(spec, ops, schedule, solve_opts, stopping, &mut |_, _| {})
}

/// [`run_continuation`] with a per-horizon observer, called after each
/// completed horizon (artifact flushing, progress output).
pub fn run_continuation_observed(
    spec: &ProblemSpec,
    ops: &DiscreteOperators,
    schedule: &HorizonSchedule,
    solve_opts: &SolveOptions,
    stopping: Option<&StoppingRule>,
    observer: &mut dyn FnMut(&HorizonRecord, &PtSolution),
) -> Result<ContinuationOutcome> {
    schedule.validate()?;
    spec.validate()?;
    let dt = schedule.dt;
    let coords = ops.mesh.node_coords();
    let y0_norm = ops.l2_norm(&spec.y0.on_nodes(&coords, 0.0)?);
    let support_end = spec.yd_support_end();

    let mut records: Vec<HorizonRecord> = Vec::new();
    let mut prev: Option<(PtSolution, TimeGrid)> = None;
    let mut stopped_early = false;
    let mut stop_reason = None;
    let mut error = None;
    let mut consecutive_stable = 0usize;

    for &t_horizon in &schedule.horizons {
        let tgrid = TimeGrid::with_dt(t_horizon, dt)?;
        let zeros = Trajectory::zeros(Role::Control, tgrid.steps, ops.omega_nodes.len());
        let u0 = match &prev {
            Some((sol, _)) => sol.control.zero_extended(tgrid.steps),
            None => zeros.clone(),
        };

        let cold_start_objective = match objective_value(spec, ops, &tgrid, &zeros, None) {
            Ok((j, _, _)) => j,
            Err(e) => {
                error = Some(format!("cold-start evaluation failed at T={t_horizon}: {e}"));
                break;
            }
        };
        let warm_start_objective = if u0.data.iter().all(|&v| v == 0.0) {
            cold_start_objective
        } else {
            match objective_value(spec, ops, &tgrid, &u0, None) {
                Ok((j, _, _)) => j,
                Err(e) => {
                    error = Some(format!("warm-start evaluation failed at T={t_horizon}: {e}"));
                    break;
                }
            }
        };

        let sol = match solve_pt(spec, ops, &tgrid, &u0, solve_opts, None) {
            Ok(s) => s,
            Err(e) => {
                error = Some(format!("solve failed at T={t_horizon}: {e}"));
                break;
            }
        };

        // diagnostics
        let tail_start = support_end.max(0.5 * t_horizon);
        let mut tail_state_norm: f64 = 0.0;
        let mut tail_adjoint_norm: f64 = 0.0;
        for k in 0..=tgrid.steps {
            if tgrid.node(k) > tail_start + 1e-12 {
                tail_state_norm = tail_state_norm.max(sol.state_norms[k]);
                tail_adjoint_norm = tail_adjoint_norm.max(sol.adjoint_norms[k]);
            }
        }
        let mut adjoint_l2q = 0.0;
        for k in 0..tgrid.steps {
            adjoint_l2q += dt * sol.adjoint_norms[k] * sol.adjoint_norms[k];
        }
        let adjoint_l2q = adjoint_l2q.sqrt();

        let (control_distance_prev, state_distance_prev) = match &prev {
            Some((p, ptg)) => (
                Some(l2q_distance_controls(
                    &sol.control,
                    &p.control,
                    ops,
                    dt,
                    ptg.steps,
                )),
                Some(l2q_distance_states(&sol.state, &p.state, ops, dt, ptg.steps)),
            ),
            None => (None, None),
        };

        let t0 = shutdown_time(&sol.control, ops, dt, sol.kkt.eps_u);
        let record = HorizonRecord {
            t_horizon,
            steps: tgrid.steps,
            objective: sol.objective,
            smooth_cost: sol.smooth_cost,
            control_l1l2: sol.sparse_cost,
            terminal_state_norm: *sol.state_norms.last().unwrap(),
            tail_start,
            tail_state_norm,
            tail_adjoint_norm,
            adjoint_l2q,
            control_distance_prev,
            state_distance_prev,
            shutdown_time: t0,
            warm_start_objective,
            cold_start_objective,
            iterations: sol.iterations,
            converged: sol.converged,
            stationarity_residual: sol.kkt.stationarity_residual,
            sparsity_violations: sol.kkt.per_time.iter().filter(|c| !c.sparsity_ok).count(),
            active_slices: sol.kkt.per_time.iter().filter(|c| c.active).count(),
        };

        // early stop: control distance small, shutdown time stable, tail
        // small — on two consecutive horizon pairs
        if let (Some(rule), true) = (stopping, prev.is_some()) {
            let u_scale = crate::linalg::max_abs(&sol.control.data).max(1.0);
            let horizon_tol = rule.horizon_tol_rel * u_scale;
            let tail_tol = rule.tail_tol_rel * y0_norm.max(1e-300);
            let prev_t0 = records.last().and_then(|r| r.shutdown_time);
            let dist_ok = record
                .control_distance_prev
                .is_some_and(|d| d <= horizon_tol);
            let shutdown_ok = match (t0, prev_t0) {
                (Some(a), Some(b)) => (a - b).abs() <= dt + 1e-12,
                _ => false,
            };
            let tail_ok = record.tail_state_norm <= tail_tol;
            if dist_ok && shutdown_ok && tail_ok {
                consecutive_stable += 1;
            } else {
                consecutive_stable = 0;
            }
        }

        observer(&record, &sol);
        records.push(record);
        prev = Some((sol, tgrid));

        if consecutive_stable >= 2 {
            stopped_early = true;
            stop_reason = Some(
                "control distance, shutdown time, and tail norm stable on two consecutive horizons"
                    .to_string(),
            );
            break;
        }
    }

    Ok(ContinuationOutcome {
        report: HorizonReport {
            records,
            stopped_early,
            stop_reason,
            error,
        },
        final_solution: prev.map(|(s, _)| s),
    })
}

// ---------------------------------------------------------------------------
// Convergence monitors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Decreasing,
    Stable,
    NonMonotone,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonitorItem {
    pub name: String,
    pub values: Vec<f64>,
    pub verdict: Trend,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonitorSummary {
    pub items: Vec<MonitorItem>,
    /// max over horizons of ‖φ‖_{L²(Q)} — the boundedness certificate.
    pub adjoint_l2q_bound: f64,
}

fn classify(values: &[f64], slack: f64) -> Trend {
    let scale = values.iter().cloned().fold(0.0f64, f64::max).max(1e-300);
    let tol = slack * scale.max(1.0);
    if values.windows(2).all(|w| (w[1] - w[0]).abs() <= tol) {
        Trend::Stable
    } else if values.windows(2).all(|w| w[1] <= w[0] + tol) {
        Trend::Decreasing
    } else {
        Trend::NonMonotone
    }
}

/// Trend verdicts for the monitored cross-horizon quantities. Requires at
/// least three completed horizons.
pub fn convergence_monitors(records: &[HorizonRecord]) -> Result<MonitorSummary> {
    if records.len() < 3 {
        return Err(SolverError::Precondition(
            "convergence monitors need at least three completed horizons".into(),
        ));
    }
    let slack = 1e-8;
    let mut items = Vec::new();

    let state_dist: Vec<f64> = records
        .iter()
        .filter_map(|r| r.state_distance_prev)
        .collect();
    items.push(MonitorItem {
        name: "state_distance".into(),
        verdict: classify(&state_dist, slack),
        values: state_dist,
    });

    let control_dist: Vec<f64> = records
        .iter()
        .filter_map(|r| r.control_distance_prev)
        .collect();
    items.push(MonitorItem {
        name: "control_distance".into(),
        verdict: classify(&control_dist, slack),
        values: control_dist,
    });

    let j_values: Vec<f64> = records.iter().map(|r| r.control_l1l2).collect();
    let j_diffs: Vec<f64> = j_values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    items.push(MonitorItem {
        name: "control_l1l2_difference".into(),
        verdict: classify(&j_diffs, slack),
        values: j_diffs,
    });

    let terminal: Vec<f64> = records.iter().map(|r| r.terminal_state_norm).collect();
    items.push(MonitorItem {
        name: "terminal_state_norm".into(),
        verdict: classify(&terminal, slack),
        values: terminal,
    });

    let tail_state: Vec<f64> = records.iter().map(|r| r.tail_state_norm).collect();
    items.push(MonitorItem {
        name: "tail_state_norm".into(),
        verdict: classify(&tail_state, slack),
        values: tail_state,
    });

    let tail_adj: Vec<f64> = records.iter().map(|r| r.tail_adjoint_norm).collect();
    items.push(MonitorItem {
        name: "tail_adjoint_norm".into(),
        verdict: classify(&tail_adj, slack),
        values: tail_adj,
    });

    let l2q: Vec<f64> = records.iter().map(|r| r.adjoint_l2q).collect();
    let bound = l2q.iter().cloned().fold(0.0f64, f64::max);
    items.push(MonitorItem {
        name: "adjoint_l2q".into(),
        verdict: Trend::Stable,
        values: l2q,
    });

    Ok(MonitorSummary {
        items,
        adjoint_l2q_bound: bound,
    })
}

// ---------------------------------------------------------------------------
// Anchored-solve study
// ---------------------------------------------------------------------------

/// Distances of the short-horizon solutions (with and without the anchor
/// term) from the restriction of a long-horizon solution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorStudy {
    pub t_short: f64,
    pub t_long: f64,
    pub anchored_distance: f64,
    pub plain_distance: f64,
}

/// Re-solve the short horizon with the long-horizon state as the anchor
/// trajectory and compare both short-horizon controls to the long one.
pub fn anchored_study(
    spec: &ProblemSpec,
    ops: &DiscreteOperators,
    dt: f64,
    t_short: f64,
    t_long: f64,
    opts: &SolveOptions,
) -> Result<AnchorStudy> {
    if t_long <= t_short {
        return Err(SolverError::Precondition(
            "anchored study needs t_long > t_short".into(),
        ));
    }
    let tg_long = TimeGrid::with_dt(t_long, dt)?;
    let tg_short = TimeGrid::with_dt(t_short, dt)?;
    let zeros_long = Trajectory::zeros(Role::Control, tg_long.steps, ops.omega_nodes.len());
    let long = solve_pt(spec, ops, &tg_long, &zeros_long, opts, None)?;

    let anchor = long.state.truncated(tg_short.steps + 1);
    let reference = long.control.truncated(tg_short.steps);

    let zeros_short = Trajectory::zeros(Role::Control, tg_short.steps, ops.omega_nodes.len());
    let plain = solve_pt(spec, ops, &tg_short, &zeros_short, opts, None)?;
    let anchored = solve_pt(spec, ops, &tg_short, &zeros_short, opts, Some(&anchor))?;

    Ok(AnchorStudy {
        t_short,
        t_long,
        anchored_distance: l2q_distance_controls(
            &anchored.control,
            &reference,
            ops,
            dt,
            tg_short.steps,
        ),
        plain_distance: l2q_distance_controls(&plain.control, &reference, ops, dt, tg_short.steps),
    })
}
