//! Command implementations: check, solve, verify.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use parcontrol::adjoint::{adjoint_step_residuals, reduced_gradient};
use parcontrol::config::{CheckConfig, EmitKind, RunConfig};
use parcontrol::discretize::{
    build_operators, estimate_embedding_c4, DiscreteOperators, Role, TimeGrid,
};
use parcontrol::forward::{
    smallness_threshold, step_residuals, uncontrolled_decay_probe, DecayReport, SmallnessReport,
};
use parcontrol::horizon::{
    convergence_monitors, run_continuation_observed, HorizonRecord, HorizonReport,
};
use parcontrol::io;
use parcontrol::model::{AssumptionReport, ProblemSpec};
use parcontrol::optimize::{
    extract_multipliers, prox_slice, verify_kkt, KktCheckOptions, PtSolution, VerificationReport,
};

use crate::svg::{LinePlot, Series};

/// String error mapped to exit code 2 by the caller.
type Input<T> = Result<T, String>;

fn read_config(path: &Path) -> Input<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    RunConfig::parse(&text).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckOutput {
    assumptions: AssumptionReport,
    coercivity_constant: f64,
    embedding_constant: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    smallness: Option<SmallnessReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    smallness_note: Option<String>,
    /// Uncontrolled exponential-decay probe over the first scheduled
    /// horizon; absent (with a note) when its hypotheses do not apply.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    decay: Option<DecayReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    decay_note: Option<String>,
    warnings: Vec<String>,
    pass: bool,
}

fn run_checks(
    spec: &ProblemSpec,
    ops: &DiscreteOperators,
    check_cfg: &CheckConfig,
    probe_grid: &TimeGrid,
) -> Input<CheckOutput> {
    let sample = check_cfg.sample_box(spec);
    let assumptions = parcontrol::model::check_assumptions(&spec.nonlinearity, &sample)
        .map_err(|e| e.to_string())?;
    let embedding = estimate_embedding_c4(ops);
    let (smallness, smallness_note) = match smallness_threshold(spec, ops) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (decay, decay_note) =
        match uncontrolled_decay_probe(spec, ops, probe_grid, check_cfg.decay_tolerance) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
    // the exit contract is scoped to the declared assumptions; the decay
    // probe carries its own pass flag as a diagnostic
    let pass = assumptions.all_passed();
    Ok(CheckOutput {
        assumptions,
        coercivity_constant: ops.c_a_estimate,
        embedding_constant: embedding,
        smallness,
        smallness_note,
        decay,
        decay_note,
        warnings: ops.warnings.clone(),
        pass,
    })
}

pub fn cmd_check(config_path: &Path, out: Option<&Path>, quiet: bool) -> Input<u8> {
    let config = read_config(config_path)?;
    let run = config.compile().map_err(|e| e.to_string())?;
    let ops = build_operators(&run.spec, &run.mesh).map_err(|e| e.to_string())?;
    for w in &ops.warnings {
        eprintln!("warning: {w}");
    }
    let probe_grid = TimeGrid::with_dt(run.schedule.horizons[0], run.schedule.dt)
        .map_err(|e| e.to_string())?;
    let output = run_checks(&run.spec, &ops, &run.check, &probe_grid)?;
    if !quiet {
        println!("{}", serde_json::to_string_pretty(&output).unwrap());
    }
    if let Some(dir) = out {
        io::write_json_atomic(&dir.join("check.json"), &output).map_err(|e| e.to_string())?;
    }
    Ok(if output.pass { 0 } else { 1 })
}

#[derive(Serialize)]
struct ErrorArtifact {
    error: String,
    completed_horizons: usize,
}

#[derive(Serialize, Deserialize)]
struct VerifyReport {
    forward_residual_max: f64,
    adjoint_residual_max: f64,
    stationarity_residual: f64,
    stationarity_tolerance: f64,
    csv_binary_mismatch: bool,
    kkt: VerificationReport,
    pass: bool,
}

struct Emitter {
    dir: PathBuf,
    csv: bool,
    json: bool,
    svg: bool,
}

impl Emitter {
    fn new(dir: &Path, emit: &[EmitKind]) -> Emitter {
        Emitter {
            dir: dir.to_path_buf(),
            csv: emit.contains(&EmitKind::Csv),
            json: emit.contains(&EmitKind::Json),
            svg: emit.contains(&EmitKind::Svg),
        }
    }

    fn write_solution(
        &self,
        spec: &ProblemSpec,
        ops: &DiscreteOperators,
        sol: &PtSolution,
        dt: f64,
    ) -> Result<(), io::IoError> {
        // binary dumps are always written: they are the canonical artifacts
        io::write_trajectory_binary(&self.dir.join("u.bin"), &sol.control, dt)?;
        io::write_trajectory_binary(&self.dir.join("y.bin"), &sol.state, dt)?;
        io::write_trajectory_binary(&self.dir.join("phi.bin"), &sol.adjoint, dt)?;
        if self.csv {
            let mesh = Some(&ops.mesh);
            io::write_trajectory_csv(&self.dir.join("u.csv"), &sol.control, dt, None)?;
            io::write_trajectory_csv(&self.dir.join("y.csv"), &sol.state, dt, mesh)?;
            io::write_trajectory_csv(&self.dir.join("phi.csv"), &sol.adjoint, dt, mesh)?;
            io::write_iteration_log_csv(&self.dir.join("iterations.csv"), &sol.log)?;
        }
        if self.json {
            io::write_json_atomic(&self.dir.join("kkt.json"), &sol.kkt)?;
        }
        let _ = spec;
        Ok(())
    }

    fn write_report(&self, report: &HorizonReport) -> Result<(), io::IoError> {
        io::write_json_atomic(&self.dir.join("horizon_report.json"), report)
    }
}

pub fn cmd_solve(
    config_path: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
    emit: Option<&[String]>,
    quiet: bool,
) -> Input<u8> {
    let mut config = read_config(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(emit) = emit {
        config.output.emit = emit
            .iter()
            .map(|s| match s.as_str() {
                "csv" => Ok(EmitKind::Csv),
                "json" => Ok(EmitKind::Json),
                "svg" => Ok(EmitKind::Svg),
                other => Err(format!("unknown emit kind `{other}`")),
            })
            .collect::<Result<_, _>>()?;
    }
    let run = config.compile().map_err(|e| e.to_string())?;
    let ops = build_operators(&run.spec, &run.mesh).map_err(|e| e.to_string())?;
    for w in &ops.warnings {
        eprintln!("warning: {w}");
    }

    // the solve presumes a checkable model
    let probe_grid = TimeGrid::with_dt(run.schedule.horizons[0], run.schedule.dt)
        .map_err(|e| e.to_string())?;
    let checks = run_checks(&run.spec, &ops, &run.check, &probe_grid)?;
    if !checks.pass {
        return Err("model assumptions fail; run `parcontrol check` for the report".into());
    }

    let dir = out
        .map(|p| p.to_path_buf())
        .or_else(|| config.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let emitter = Emitter::new(&dir, &config.output.emit);

    // effective config echo: this is what `verify` replays against
    io::write_json_atomic(&dir.join("config.json"), &config).map_err(|e| e.to_string())?;
    io::write_json_atomic(&dir.join("check.json"), &checks).map_err(|e| e.to_string())?;

    let dt = run.schedule.dt;
    let mut flushed: Vec<HorizonRecord> = Vec::new();
    let mut flush_error: Option<io::IoError> = None;
    let outcome = run_continuation_observed(
        &run.spec,
        &ops,
        &run.schedule,
        &run.solver,
        run.stopping.as_ref(),
        &mut |record, sol| {
            // flush artifacts after every completed horizon
            flushed.push(record.clone());
            let partial = HorizonReport {
                records: flushed.clone(),
                stopped_early: false,
                stop_reason: None,
                error: None,
            };
            if let Err(e) = emitter
                .write_solution(&run.spec, &ops, sol, dt)
                .and_then(|()| emitter.write_report(&partial))
            {
                flush_error = Some(e);
            }
            if !quiet {
                println!(
                    "horizon T={:<6} iters {:<5} J = {:.6e}  shutdown: {}",
                    record.t_horizon,
                    record.iterations,
                    record.objective,
                    record
                        .shutdown_time
                        .map(|t| format!("{t:.3}"))
                        .unwrap_or_else(|| "not observed".into())
                );
            }
        },
    )
    .map_err(|e| e.to_string())?;
    if let Some(e) = flush_error {
        return Err(e.to_string());
    }

    emitter.write_report(&outcome.report).map_err(|e| e.to_string())?;
    if outcome.report.records.len() >= 3 {
        let monitors = convergence_monitors(&outcome.report.records).map_err(|e| e.to_string())?;
        if emitter.json {
            io::write_json_atomic(&dir.join("monitors.json"), &monitors)
                .map_err(|e| e.to_string())?;
        }
        if emitter.csv {
            io::write_monitors_csv(&dir.join("monitors.csv"), &monitors)
                .map_err(|e| e.to_string())?;
        }
    }

    if let Some(error) = &outcome.report.error {
        io::write_json_atomic(
            &dir.join("error.json"),
            &ErrorArtifact {
                error: error.clone(),
                completed_horizons: outcome.report.records.len(),
            },
        )
        .map_err(|e| e.to_string())?;
        eprintln!("solver failed: {error}");
        return Ok(1);
    }

    let sol = outcome.final_solution.as_ref().expect("records imply a solution");
    let last = outcome.report.records.last().expect("at least one record");
    if !last.converged {
        io::write_json_atomic(
            &dir.join("error.json"),
            &ErrorArtifact {
                error: format!(
                    "final horizon did not converge (residual {:.3e})",
                    last.stationarity_residual
                ),
                completed_horizons: outcome.report.records.len(),
            },
        )
        .map_err(|e| e.to_string())?;
        return Ok(1);
    }

    // independent verification of the converged run
    let tgrid = TimeGrid::with_dt(last.t_horizon, dt).map_err(|e| e.to_string())?;
    let kkt_report = verify_kkt(
        &sol.kkt,
        &sol.control,
        &run.spec,
        &ops,
        &tgrid,
        &KktCheckOptions {
            seed: config.seed,
            ..KktCheckOptions::default()
        },
    );
    if emitter.json {
        io::write_json_atomic(&dir.join("verification.json"), &kkt_report)
            .map_err(|e| e.to_string())?;
    }
    if emitter.svg {
        write_plots(&dir, &run.spec, &ops, sol, &tgrid, last).map_err(|e| e.to_string())?;
    }

    if !quiet {
        println!(
            "done: J = {:.6e}, shutdown T0 = {}, certificates {}",
            sol.objective,
            last.shutdown_time
                .map(|t| format!("{t:.3}"))
                .unwrap_or_else(|| "not observed".into()),
            if kkt_report.pass { "pass" } else { "FAIL" }
        );
    }
    Ok(if kkt_report.pass { 0 } else { 1 })
}

fn write_plots(
    dir: &Path,
    spec: &ProblemSpec,
    ops: &DiscreteOperators,
    sol: &PtSolution,
    tgrid: &TimeGrid,
    record: &HorizonRecord,
) -> Result<(), io::IoError> {
    let dt = tgrid.dt;

    // ‖u(t)‖ with the shutdown marker
    let u_pts: Vec<(f64, f64)> = (0..sol.control.n_time)
        .map(|k| ((k + 1) as f64 * dt, ops.omega_norm(sol.control.row(k))))
        .collect();
    let mut vlines = Vec::new();
    if let Some(t0) = record.shutdown_time {
        vlines.push((t0, "shutdown".to_string()));
    }
    let plot = LinePlot {
        title: "control norm per time slice".into(),
        x_label: "t".into(),
        y_label: "control L2 norm on the region".into(),
        series: vec![Series {
            label: "control norm".into(),
            color: "#26c",
            points: u_pts,
        }],
        hlines: vec![],
        vlines,
    };
    io::write_atomic(&dir.join("u_norm.svg"), plot.render().as_bytes())?;

    // ‖y(t)‖ and ‖y − y_d(t)‖
    let coords = ops.mesh.node_coords();
    let mut y_pts = Vec::new();
    let mut err_pts = Vec::new();
    for k in 0..=tgrid.steps {
        let t = tgrid.node(k);
        y_pts.push((t, sol.state_norms[k]));
        let yd = spec.yd.on_nodes(&coords, t).unwrap_or_else(|_| vec![0.0; coords.len()]);
        let diff: Vec<f64> = sol
            .state
            .row(k)
            .iter()
            .zip(&yd)
            .map(|(a, b)| a - b)
            .collect();
        err_pts.push((t, ops.l2_norm(&diff)));
    }
    let plot = LinePlot {
        title: "state norm and tracking error".into(),
        x_label: "t".into(),
        y_label: "L2 norm".into(),
        series: vec![
            Series {
                label: "state norm".into(),
                color: "#26c",
                points: y_pts,
            },
            Series {
                label: "tracking error".into(),
                color: "#c60",
                points: err_pts,
            },
        ],
        hlines: vec![],
        vlines: vec![],
    };
    io::write_atomic(&dir.join("state_norm.svg"), plot.render().as_bytes())?;

    // ‖φ(t)‖_ω with the κ threshold line
    let phi_pts: Vec<(f64, f64)> = (0..=tgrid.steps)
        .map(|k| {
            let restricted = ops.restrict_omega(sol.adjoint.row(k));
            (tgrid.node(k), ops.omega_norm(&restricted))
        })
        .collect();
    let plot = LinePlot {
        title: "adjoint norm on the control region".into(),
        x_label: "t".into(),
        y_label: "adjoint L2 norm on the region".into(),
        series: vec![Series {
            label: "adjoint norm".into(),
            color: "#26c",
            points: phi_pts,
        }],
        hlines: vec![(spec.kappa, "sparsity threshold".into())],
        vlines: vec![],
    };
    io::write_atomic(&dir.join("adjoint_norm.svg"), plot.render().as_bytes())
}

pub fn cmd_verify(dir: &Path, quiet: bool) -> Input<u8> {
    let config: RunConfig =
        io::read_json(&dir.join("config.json")).map_err(|e| e.to_string())?;
    let run = config.compile().map_err(|e| e.to_string())?;
    let ops = build_operators(&run.spec, &run.mesh).map_err(|e| e.to_string())?;

    let (u_bin, dt_u) =
        io::read_trajectory_binary(&dir.join("u.bin")).map_err(|e| e.to_string())?;
    let (state, dt_y) =
        io::read_trajectory_binary(&dir.join("y.bin")).map_err(|e| e.to_string())?;
    let (phi, dt_p) =
        io::read_trajectory_binary(&dir.join("phi.bin")).map_err(|e| e.to_string())?;
    let dt = run.schedule.dt;
    if (dt_u - dt).abs() > 1e-12 || (dt_y - dt).abs() > 1e-12 || (dt_p - dt).abs() > 1e-12 {
        return Err("artifact dt does not match the config schedule".into());
    }
    if state.n_time != u_bin.n_time + 1 || phi.n_time != state.n_time {
        return Err("artifact trajectory shapes are inconsistent".into());
    }
    let tgrid =
        TimeGrid::new(u_bin.n_time as f64 * dt, u_bin.n_time).map_err(|e| e.to_string())?;

    // CSV cross-check: when the decimal exports exist they must agree with
    // the binaries; on mismatch the (human-editable) CSV is what gets
    // verified, so tampering is caught by the checks below
    let mut mismatch = false;
    let mut u = u_bin.clone();
    let csv_path = dir.join("u.csv");
    if csv_path.exists() {
        let (u_csv, _) =
            io::read_trajectory_csv(&csv_path, Role::Control).map_err(|e| e.to_string())?;
        if u_csv.n_time != u.n_time || u_csv.n_space != u.n_space {
            return Err("u.csv shape does not match u.bin".into());
        }
        for (a, b) in u_csv.data.iter().zip(&u.data) {
            if (a - b).abs() > 1e-12 * b.abs().max(1.0) {
                mismatch = true;
            }
        }
        if mismatch {
            u = u_csv;
        }
    }

    // plug the trajectories back into the discrete equations
    let fwd = step_residuals(&run.spec, &ops, &tgrid, &state, Some(&u))
        .map_err(|e| e.to_string())?;
    let forward_residual_max = fwd.iter().cloned().fold(0.0f64, f64::max);
    let adj = adjoint_step_residuals(&run.spec, &ops, &tgrid, &state, &phi)
        .map_err(|e| e.to_string())?;
    let adjoint_residual_max = adj.iter().cloned().fold(0.0f64, f64::max);

    // prox-gradient stationarity at the stored control
    let mut grad = reduced_gradient(&phi, &ops);
    for v in grad.data.iter_mut() {
        *v *= dt;
    }
    let tau = 1.0 / dt;
    let mut worst = 0.0f64;
    let mut vbuf = vec![0.0; u.n_space];
    for k in 0..u.n_time {
        let urow = u.row(k);
        let grow = grad.row(k);
        for i in 0..u.n_space {
            vbuf[i] = urow[i] - tau * grow[i];
        }
        let (pu, _) = prox_slice(
            &vbuf,
            tau * run.spec.kappa * dt,
            &run.spec.constraints,
            &ops.omega_weights,
        );
        let diff: Vec<f64> = urow.iter().zip(&pu).map(|(a, b)| a - b).collect();
        worst = worst.max(parcontrol::linalg::wnorm(&ops.omega_weights, &diff));
    }
    let stationarity_residual = worst / (tau * dt);
    let stationarity_tolerance = (10.0 * run.solver.kkt_tol).max(1e-7);

    let mut kkt = extract_multipliers(&u, &phi, &run.spec, &ops, &tgrid)
        .map_err(|e| e.to_string())?;
    kkt.stationarity_residual = stationarity_residual;
    let kkt_report = verify_kkt(
        &kkt,
        &u,
        &run.spec,
        &ops,
        &tgrid,
        &KktCheckOptions {
            seed: config.seed,
            ..KktCheckOptions::default()
        },
    );

    let residual_tol = 1e-8;
    let pass = !mismatch
        && forward_residual_max <= residual_tol
        && adjoint_residual_max <= residual_tol
        && stationarity_residual <= stationarity_tolerance
        && kkt_report.pass;

    let report = VerifyReport {
        forward_residual_max,
        adjoint_residual_max,
        stationarity_residual,
        stationarity_tolerance,
        csv_binary_mismatch: mismatch,
        kkt: kkt_report,
        pass,
    };
    io::write_json_atomic(&dir.join("verify_report.json"), &report)
        .map_err(|e| e.to_string())?;
    if !quiet {
        println!("{}", serde_json::to_string_pretty(&report).unwrap());
    }
    Ok(if pass { 0 } else { 1 })
}
