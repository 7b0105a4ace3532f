//! Browser bindings: three interactive operations over JSON strings, so the
//! static demo page needs no framework and no generated TypeScript. Each
//! function takes a request document and returns either the result object or
//! `{"error": "..."}`.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::wasm_bindgen;

use parcontrol::config::ProblemConfig;
use parcontrol::discretize::{build_operators, DiscreteOperators, Mesh, Role, TimeGrid, Trajectory};
use parcontrol::forward::solve_forward;
use parcontrol::horizon::shutdown_time;
use parcontrol::model::ProblemSpec;
use parcontrol::optimize::{solve_pt, SolveOptions, StepRule};

#[derive(Deserialize)]
struct SimulateRequest {
    problem: ProblemConfig,
    cells: usize,
    t_end: f64,
    dt: f64,
    /// Constant control value applied on ω over [0, t_end] (0 = uncontrolled).
    #[serde(default)]
    control: f64,
    /// Maximum number of state snapshots to return.
    #[serde(default = "default_frames")]
    max_frames: usize,
}

fn default_frames() -> usize {
    80
}

#[derive(Serialize)]
struct SimulateResponse {
    x: Vec<f64>,
    times: Vec<f64>,
    frames: Vec<Vec<f64>>,
    state_norms: Vec<f64>,
    norm_times: Vec<f64>,
    linf: f64,
    omega_nodes: Vec<usize>,
}

#[derive(Deserialize)]
struct SolveRequest {
    problem: ProblemConfig,
    cells: usize,
    t_end: f64,
    dt: f64,
    #[serde(default = "default_tol")]
    kkt_tol: f64,
    #[serde(default = "default_iters")]
    max_iters: usize,
    #[serde(default = "default_frames")]
    max_frames: usize,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_iters() -> usize {
    3000
}

#[derive(Serialize)]
struct SolveResponse {
    x: Vec<f64>,
    omega_nodes: Vec<usize>,
    kappa: f64,
    /// Right-endpoint times of the control slices.
    t_slices: Vec<f64>,
    u_norms: Vec<f64>,
    /// ‖φ(t_k)‖ on ω at every node (the sparsity threshold curve).
    t_nodes: Vec<f64>,
    phi_norms: Vec<f64>,
    state_norms: Vec<f64>,
    tracking_errors: Vec<f64>,
    /// Decimated control field frames (rows: slices, columns: ω nodes).
    u_frames: Vec<Vec<f64>>,
    u_frame_times: Vec<f64>,
    shutdown: Option<f64>,
    objective: f64,
    sparse_cost: f64,
    iterations: usize,
    converged: bool,
    residual: f64,
    active_slices: usize,
}

#[derive(Deserialize)]
struct SweepRequest {
    problem: ProblemConfig,
    cells: usize,
    t_end: f64,
    dt: f64,
    kappas: Vec<f64>,
    #[serde(default = "default_tol")]
    kkt_tol: f64,
    #[serde(default = "default_iters")]
    max_iters: usize,
}

#[derive(Serialize)]
struct SweepPoint {
    kappa: f64,
    shutdown: Option<f64>,
    control_l1l2: f64,
    objective: f64,
    iterations: usize,
    converged: bool,
}

fn build(problem: &ProblemConfig, cells: usize) -> Result<(ProblemSpec, DiscreteOperators), String> {
    let spec = problem.compile().map_err(|e| e.to_string())?;
    let mesh = match spec.domain {
        parcontrol::model::Domain::Interval { length } => Mesh::interval(length, cells),
        parcontrol::model::Domain::Rectangle { lx, ly } => Mesh::rectangle(lx, ly, cells, cells),
    }
    .map_err(|e| e.to_string())?;
    let ops = build_operators(&spec, &mesh).map_err(|e| e.to_string())?;
    Ok((spec, ops))
}

fn decimate(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    (0..max)
        .map(|i| i * (n - 1) / (max - 1))
        .collect::<Vec<_>>()
}

fn simulate_impl(request: &str) -> Result<SimulateResponse, String> {
    let req: SimulateRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let (spec, ops) = build(&req.problem, req.cells)?;
    let tgrid = TimeGrid::with_dt(req.t_end, req.dt).map_err(|e| e.to_string())?;
    let u = if req.control != 0.0 {
        let mut u = Trajectory::zeros(Role::Control, tgrid.steps, ops.omega_nodes.len());
        u.data.fill(req.control);
        Some(u)
    } else {
        None
    };
    let result = solve_forward(&spec, &ops, &tgrid, u.as_ref()).map_err(|e| e.to_string())?;
    let x: Vec<f64> = ops.mesh.node_coords().iter().map(|c| c.0).collect();
    let picks = decimate(tgrid.steps + 1, req.max_frames.max(2));
    Ok(SimulateResponse {
        x,
        times: picks.iter().map(|&k| tgrid.node(k)).collect(),
        frames: picks.iter().map(|&k| result.state.row(k).to_vec()).collect(),
        norm_times: (0..=tgrid.steps).map(|k| tgrid.node(k)).collect(),
        state_norms: result.state_norms,
        linf: result.linf_bound,
        omega_nodes: ops.omega_nodes.clone(),
    })
}

fn solve_impl(request: &str) -> Result<SolveResponse, String> {
    let req: SolveRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let (spec, ops) = build(&req.problem, req.cells)?;
    let tgrid = TimeGrid::with_dt(req.t_end, req.dt).map_err(|e| e.to_string())?;
    let opts = SolveOptions {
        step: StepRule::Backtracking,
        max_outer_iters: req.max_iters,
        kkt_tol: req.kkt_tol,
        restart: true,
    };
    let u0 = Trajectory::zeros(Role::Control, tgrid.steps, ops.omega_nodes.len());
    let sol = solve_pt(&spec, &ops, &tgrid, &u0, &opts, None).map_err(|e| e.to_string())?;

    let coords = ops.mesh.node_coords();
    let x: Vec<f64> = coords.iter().map(|c| c.0).collect();
    let mut tracking_errors = Vec::with_capacity(tgrid.steps + 1);
    for k in 0..=tgrid.steps {
        let yd = spec
            .yd
            .on_nodes(&coords, tgrid.node(k))
            .map_err(|e| e.to_string())?;
        let diff: Vec<f64> = sol.state.row(k).iter().zip(&yd).map(|(a, b)| a - b).collect();
        tracking_errors.push(ops.l2_norm(&diff));
    }
    let picks = decimate(tgrid.steps, req.max_frames.max(2));
    let phi_norms: Vec<f64> = (0..=tgrid.steps)
        .map(|k| ops.omega_norm(&ops.restrict_omega(sol.adjoint.row(k))))
        .collect();
    Ok(SolveResponse {
        x,
        omega_nodes: ops.omega_nodes.clone(),
        kappa: spec.kappa,
        t_slices: (1..=tgrid.steps).map(|k| tgrid.node(k)).collect(),
        u_norms: (0..tgrid.steps)
            .map(|k| ops.omega_norm(sol.control.row(k)))
            .collect(),
        t_nodes: (0..=tgrid.steps).map(|k| tgrid.node(k)).collect(),
        phi_norms,
        state_norms: sol.state_norms.clone(),
        tracking_errors,
        u_frames: picks.iter().map(|&k| sol.control.row(k).to_vec()).collect(),
        u_frame_times: picks.iter().map(|&k| tgrid.node(k + 1)).collect(),
        shutdown: shutdown_time(&sol.control, &ops, tgrid.dt, sol.kkt.eps_u),
        objective: sol.objective,
        sparse_cost: sol.sparse_cost,
        iterations: sol.iterations,
        converged: sol.converged,
        residual: sol.kkt.stationarity_residual,
        active_slices: sol.kkt.per_time.iter().filter(|c| c.active).count(),
    })
}

fn sweep_impl(request: &str) -> Result<Vec<SweepPoint>, String> {
    let req: SweepRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let (spec, ops) = build(&req.problem, req.cells)?;
    let tgrid = TimeGrid::with_dt(req.t_end, req.dt).map_err(|e| e.to_string())?;
    let opts = SolveOptions {
        step: StepRule::Backtracking,
        max_outer_iters: req.max_iters,
        kkt_tol: req.kkt_tol,
        restart: true,
    };
    let mut points = Vec::new();
    // warm-start each κ from the previous (larger-κ solutions are sparser)
    let mut kappas = req.kappas.clone();
    kappas.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut warm = Trajectory::zeros(Role::Control, tgrid.steps, ops.omega_nodes.len());
    for kappa in kappas {
        if kappa <= 0.0 || kappa.is_nan() {
            return Err("kappa values must be positive".into());
        }
        let mut spec_k = spec.clone();
        spec_k.kappa = kappa;
        let sol = solve_pt(&spec_k, &ops, &tgrid, &warm, &opts, None).map_err(|e| e.to_string())?;
        points.push(SweepPoint {
            kappa,
            shutdown: shutdown_time(&sol.control, &ops, tgrid.dt, sol.kkt.eps_u),
            control_l1l2: sol.sparse_cost,
            objective: sol.objective,
            iterations: sol.iterations,
            converged: sol.converged,
        });
        warm = sol.control;
    }
    points.reverse();
    Ok(points)
}

fn to_json<T: Serialize>(result: Result<T, String>) -> String {
    match result {
        Ok(value) => serde_json::to_string(&value).unwrap_or_else(|e| {
            format!("{{\"error\": \"serialization failed: {e}\"}}")
        }),
        Err(message) => serde_json::to_string(&serde_json::json!({ "error": message })).unwrap(),
    }
}

/// Forward simulation of the reaction-diffusion equation, optionally with a
/// constant control on the control region.
#[wasm_bindgen]
pub fn simulate(request: &str) -> String {
    to_json(simulate_impl(request))
}

/// One finite-horizon sparse control solve: control/adjoint norm curves, the
/// sparsity threshold, and the certified shutdown time.
#[wasm_bindgen]
pub fn solve_sparse(request: &str) -> String {
    to_json(solve_impl(request))
}

/// Shutdown time and control cost as functions of the sparsity weight κ.
#[wasm_bindgen]
pub fn kappa_sweep(request: &str) -> String {
    to_json(sweep_impl(request))
}
