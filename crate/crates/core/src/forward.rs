//! Implicit-Euler solver for the semilinear state equation, plus the decay
//! and growth-bound probes.
//!
//! Each step solves
//!
//! ```text
//!   (M/dt + K + M_a) y_{k+1} + M ∘ f(·, t_{k+1}, y_{k+1})
//!       = (M/dt) y_k + M ∘ g_{k+1} + M ∘ (E_ω u_{k+1})
//! ```
//!
//! by damped Newton. The step matrix `M/dt + K + M_a + M ∘ f'` is factored
//! with a banded Cholesky; if the linearized reaction makes it indefinite
//! the solver falls back to a dense LU and records a warning.

use serde::{Deserialize, Serialize};

use crate::discretize::{DiscreteOperators, Role, TimeGrid, Trajectory};
use crate::error::{Result, SolverError};
use crate::linalg::{max_abs, norm2, StepSolver};
use crate::model::ProblemSpec;

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITERS: usize = 50;
const NEWTON_MAX_HALVINGS: usize = 20;
const BLOWUP_GUARD: f64 = 1e12;

/// Output of a forward solve.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub state: Trajectory,
    /// Newton iterations spent on each step.
    pub newton_iters: Vec<usize>,
    /// ‖y(t_k)‖_{L²(Ω)} at every node.
    pub state_norms: Vec<f64>,
    /// max |y| over the whole space-time grid.
    pub linf_bound: f64,
    pub warnings: Vec<String>,
}

/// Solve the state equation for a control `u` (`None` means u = 0).
pub fn solve_forward(
    spec: &ProblemSpec,
    ops: &DiscreteOperators,
    tgrid: &TimeGrid,
    u: Option<&Trajectory>,
) -> Result<ForwardResult> {
    let n = ops.n_nodes();
    if let Some(u) = u {
        if u.n_time != tgrid.steps || u.n_space != ops.omega_nodes.len() {
            return Err(SolverError::Shape(format!(
                "control has shape {}x{}, expected {}x{}",
                u.n_time,
                u.n_space,
                tgrid.steps,
                ops.omega_nodes.len()
            )));
        }
        if !u.all_finite() {
            return Err(SolverError::Shape(
                "control contains non-finite values".into(),
            ));
        }
    }

    let coords = ops.mesh.node_coords();
    let dt = tgrid.dt;

    // time-independent part of the step matrix: M/dt + K + M_a
    let mut base = ops.stiffness.clone();
    let m_over_dt: Vec<f64> = ops
        .mass
        .iter()
        .zip(&ops.reaction)
        .map(|(m, r)| m / dt + r)
        .collect();
    base.add_diag(&m_over_dt);

    let y0 = spec.y0.on_nodes(&coords, 0.0)?;
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::Shape(
            "initial state contains non-finite values".into(),
        ));
    }

    let mut state = Trajectory::zeros(Role::State, tgrid.steps + 1, n);
    state.row_mut(0).copy_from_slice(&y0);

    let mut newton_iters = Vec::with_capacity(tgrid.steps);
    let mut state_norms = Vec::with_capacity(tgrid.steps + 1);
    state_norms.push(ops.l2_norm(&y0));
    let mut linf = max_abs(&y0);
    let mut warnings = Vec::new();
    let mut warned_fallback = false;

    let mut y = y0;
    for step in 1..=tgrid.steps {
        let t = tgrid.node(step);
        let f = spec.nonlinearity.bind(&coords, t)?;
        let g = spec.g.on_nodes(&coords, t)?;

        // rhs = (M/dt) y_prev + M g + M (E u)
        let mut rhs: Vec<f64> = (0..n).map(|i| ops.mass[i] * (y[i] / dt + g[i])).collect();
        if let Some(u) = u {
            let uk = u.row(step - 1);
            for (j, &i) in ops.omega_nodes.iter().enumerate() {
                rhs[i] += ops.mass[i] * uk[j];
            }
        }
        let scale = norm2(&rhs).max(1.0);

        let residual = |y: &[f64], buf: &mut Vec<f64>| {
            base.matvec(y, buf);
            for i in 0..n {
                buf[i] += ops.mass[i] * f.value(i, y[i]) - rhs[i];
            }
        };

        let mut res = vec![0.0; n];
        residual(&y, &mut res);
        let mut res_norm = norm2(&res);
        let mut converged = res_norm <= NEWTON_TOL * scale;
        let mut iters = 0;

        while !converged && iters < NEWTON_MAX_ITERS {
            iters += 1;
            let fprime: Vec<f64> = (0..n).map(|i| ops.mass[i] * f.deriv(i, y[i])).collect();
            let jac = base.with_added_diag(&fprime);
            let solver = StepSolver::factor(&jac)?;
            if solver.fell_back && !warned_fallback {
                warnings.push(format!(
                    "indefinite step matrix at step {step}; using the dense LU fallback"
                ));
                warned_fallback = true;
            }
            let neg_res: Vec<f64> = res.iter().map(|r| -r).collect();
            let delta = solver.solve(&neg_res);

            // damped update: halve until the residual stops increasing
            let mut s = 1.0;
            let mut best: Option<(Vec<f64>, f64)> = None;
            for _ in 0..=NEWTON_MAX_HALVINGS {
                let cand: Vec<f64> = (0..n).map(|i| y[i] + s * delta[i]).collect();
                let mut cand_res = vec![0.0; n];
                residual(&cand, &mut cand_res);
                let cand_norm = norm2(&cand_res);
                if cand_norm.is_finite() && cand_norm < res_norm {
                    best = Some((cand, cand_norm));
                    break;
                }
                if cand_norm.is_finite() && best.as_ref().is_none_or(|(_, b)| cand_norm < *b) {
                    best = Some((cand, cand_norm));
                }
                s *= 0.5;
            }
            match best {
                Some((cand, cand_norm)) => {
                    y = cand;
                    res_norm = cand_norm;
                    residual(&y, &mut res);
                }
                None => break,
            }
            converged = res_norm <= NEWTON_TOL * scale;
        }

        if !converged {
            return Err(SolverError::NewtonFailure {
                step,
                iters,
                residual: res_norm,
            });
        }
        let step_max = max_abs(&y);
        if step_max > BLOWUP_GUARD {
            return Err(SolverError::Divergence {
                step,
                max_abs: step_max,
            });
        }

        linf = linf.max(step_max);
        state.row_mut(step).copy_from_slice(&y);
        state_norms.push(ops.l2_norm(&y));
        newton_iters.push(iters);
    }

    Ok(ForwardResult {
        state,
        newton_iters,
        state_norms,
        linf_bound: linf,
        warnings,
    })
}

/// Relative residual of each step equation for an externally supplied
/// trajectory; used by the independent artifact verifier.
pub fn step_residuals(
    spec: &ProblemSpec,
    ops: &DiscreteOperators,
    tgrid: &TimeGrid,
    state: &Trajectory,
    u: Option<&Trajectory>,
) -> Result<Vec<f64>> {
    let n = ops.n_nodes();
    if state.n_time != tgrid.steps + 1 || state.n_space != n {
        return Err(SolverError::Shape("state shape mismatch".into()));
    }
    let coords = ops.mesh.node_coords();
    let dt = tgrid.dt;
    let mut base = ops.stiffness.clone();
    let diag: Vec<f64> = ops
        .mass
        .iter()
        .zip(&ops.reaction)
        .map(|(m, r)| m / dt + r)
        .collect();
    base.add_diag(&diag);

    let mut out = Vec::with_capacity(tgrid.steps);
    let mut buf = vec![0.0; n];
    for step in 1..=tgrid.steps {
        let t = tgrid.node(step);
        let f = spec.nonlinearity.bind(&coords, t)?;
        let g = spec.g.on_nodes(&coords, t)?;
        let y_prev = state.row(step - 1);
        let y = state.row(step);
        base.matvec(y, &mut buf);
        let mut rhs_norm_sq = 0.0;
        for i in 0..n {
            let mut rhs = ops.mass[i] * (y_prev[i] / dt + g[i]);
            if let Some(u) = u {
                if let Ok(j) = ops.omega_nodes.binary_search(&i) {
                    rhs += ops.mass[i] * u.row(step - 1)[j];
                }
            }
            buf[i] += ops.mass[i] * f.value(i, y[i]) - rhs;
            rhs_norm_sq += rhs * rhs;
        }
        out.push(norm2(&buf) / rhs_norm_sq.sqrt().max(1.0));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Probes
// ---------------------------------------------------------------------------

/// Per-node comparison of ‖y(t)‖ against the exponential decay envelope
/// e^{-C_a t} ‖y₀‖ for the uncontrolled equation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayReport {
    pub c_a: f64,
    /// ratio_k = ‖y(t_k)‖ / (e^{-C_a t_k} ‖y₀‖); 0 when y₀ = 0.
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Default first-order time-discretization slack for the decay probe.
pub const DECAY_TOL_DEFAULT: f64 = 0.05;

/// Verify the uncontrolled exponential decay estimate. Preconditions: g = 0,
/// `f` independent of (x, t) with f'(0) > 0, and the initial state inside
/// the declared sign-stable interval.
pub fn uncontrolled_decay_probe(
    spec: &ProblemSpec,
    ops: &DiscreteOperators,
    tgrid: &TimeGrid,
    tolerance: Option<f64>,
) -> Result<DecayReport> {
    if !spec.g.is_zero() {
        return Err(SolverError::Precondition(
            "decay probe requires g = 0".into(),
        ));
    }
    ensure_xt_independent(spec)?;
    let d0 = spec.nonlinearity.deriv(0.0, 0.0, 0.0, 0.0)?;
    if d0 <= 0.0 {
        return Err(SolverError::Precondition(format!(
            "decay probe requires f'(0) > 0, got {d0:.3e}"
        )));
    }
    let (rho_minus, rho_plus) = spec
        .nonlinearity
        .constants
        .as_ref()
        .and_then(|c| c.sign_stable)
        .ok_or_else(|| {
            SolverError::Precondition(
                "decay probe requires a declared sign-stable interval (rho-, rho+)".into(),
            )
        })?;
    let coords = ops.mesh.node_coords();
    let y0 = spec.y0.on_nodes(&coords, 0.0)?;
    if y0.iter().any(|&v| v <= rho_minus || v >= rho_plus) {
        return Err(SolverError::Precondition(format!(
            "initial state leaves the sign-stable interval ({rho_minus}, {rho_plus})"
        )));
    }

    let c_a = ops.c_a_estimate;
    let result = solve_forward(spec, ops, tgrid, None)?;
    let y0_norm = result.state_norms[0];
    let tolerance = tolerance.unwrap_or(DECAY_TOL_DEFAULT);

    let ratios: Vec<f64> = result
        .state_norms
        .iter()
        .enumerate()
        .map(|(k, &nrm)| {
            if y0_norm == 0.0 {
                0.0
            } else {
                nrm / ((-c_a * tgrid.node(k)).exp() * y0_norm)
            }
        })
        .collect();
    let max_ratio = ratios.iter().cloned().fold(0.0f64, f64::max);
    Ok(DecayReport {
        c_a,
        max_ratio,
        pass: max_ratio <= 1.0 + tolerance,
        ratios,
        tolerance,
    })
}

fn ensure_xt_independent(spec: &ProblemSpec) -> Result<()> {
    // sampled check: f may not vary across (x, t)
    let extents = spec.domain.extents();
    let probes = [
        (0.0, 0.0, 0.0),
        (extents[0] * 0.33, extents[1] * 0.7, 0.4),
        (extents[0], extents[1], 1.7),
        (extents[0] * 0.71, 0.0, 11.0),
    ];
    for y in [-1.3, -0.2, 0.4, 2.7] {
        let v0 = spec
            .nonlinearity
            .value(probes[0].0, probes[0].1, probes[0].2, y)?;
        for &(x, xy, t) in &probes[1..] {
            let v = spec.nonlinearity.value(x, xy, t, y)?;
            if (v - v0).abs() > 1e-10 * v0.abs().max(1.0) {
                return Err(SolverError::Precondition(
                    "probe requires f independent of (x, t)".into(),
                ));
            }
        }
    }
    Ok(())
}

/// The zero-control smallness threshold and the guaranteed decay rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmallnessReport {
    /// Initial states below this L² threshold admit the a-priori bound.
    pub threshold: f64,
    /// Exponential rate λ in the a-priori bound (present iff applicable).
    pub rate: Option<f64>,
    pub y0_norm: f64,
    pub hypothesis_satisfied: bool,
    pub c_a: f64,
    pub c4: f64,
    pub local_derivative_bound: f64,
    pub monotone_radius: f64,
}

/// Compute the smallness threshold K = m C_a⁴ / (C C₄)² and the decay rate
/// λ = ½ (C_a² − C² C₄² K₀ / (m C_a²)) with K₀ = ½(‖y₀‖ + K).
pub fn smallness_threshold(
    spec: &ProblemSpec,
    ops: &DiscreteOperators,
) -> Result<SmallnessReport> {
    let sample = spec.default_sample_box();
    let report = crate::model::check_assumptions(&spec.nonlinearity, &sample)?;
    let m_small = report.constants.monotone_radius.ok_or_else(|| {
        SolverError::Precondition(
            "smallness threshold needs a positive monotone radius (f' ≥ 0 near 0)".into(),
        )
    })?;
    let c_local = report.constants.local_derivative_bound;
    if c_local <= 0.0 {
        return Err(SolverError::Precondition(
            "smallness threshold needs a positive local derivative bound".into(),
        ));
    }
    let c_a = ops.c_a_estimate;
    if c_a <= 0.0 {
        return Err(SolverError::Precondition(
            "smallness threshold needs a positive coercivity constant".into(),
        ));
    }
    let c4 = crate::discretize::estimate_embedding_c4(ops);

    let threshold = m_small * c_a.powi(4) / (c_local * c4).powi(2);
    let coords = ops.mesh.node_coords();
    let y0_norm = ops.l2_norm(&spec.y0.on_nodes(&coords, 0.0)?);
    let hypothesis_satisfied = y0_norm < threshold;
    let rate = if hypothesis_satisfied {
        let k0 = 0.5 * (y0_norm + threshold);
        Some(0.5 * (c_a * c_a - c_local * c_local * c4 * c4 * k0 / (m_small * c_a * c_a)))
    } else {
        None
    };
    Ok(SmallnessReport {
        threshold,
        rate,
        y0_norm,
        hypothesis_satisfied,
        c_a,
        c4,
        local_derivative_bound: c_local,
        monotone_radius: m_small,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmallnessProbe {
    pub report: SmallnessReport,
    /// ‖y‖_{L²(Q_T)} from the zero-control solve.
    pub lhs: f64,
    /// λ^{-1/2} (‖y₀‖ + ‖g‖_{L²(Q_T)}).
    pub rhs: f64,
    pub pass: bool,
}

/// Verify the a-priori bound ‖y‖_{L²(Q_T)} ≤ λ^{-1/2}(‖y₀‖ + ‖g‖) for the
/// zero control on the discrete grid.
pub fn smallness_decay_probe(
    spec: &ProblemSpec,
    ops: &DiscreteOperators,
    tgrid: &TimeGrid,
) -> Result<SmallnessProbe> {
    let report = smallness_threshold(spec, ops)?;
    let rate = report.rate.ok_or_else(|| {
        SolverError::Precondition(format!(
            "‖y₀‖ = {:.6e} is not below the threshold {:.6e}",
            report.y0_norm, report.threshold
        ))
    })?;
    let coords = ops.mesh.node_coords();
    let result = solve_forward(spec, ops, tgrid, None)?;
    let mut y_sq = 0.0;
    let mut g_sq = 0.0;
    for k in 0..tgrid.steps {
        y_sq += tgrid.dt * result.state_norms[k] * result.state_norms[k];
        let g = spec.g.on_nodes(&coords, tgrid.node(k))?;
        let gn = ops.l2_norm(&g);
        g_sq += tgrid.dt * gn * gn;
    }
    let lhs = y_sq.sqrt();
    let rhs = (report.y0_norm + g_sq.sqrt()) / rate.sqrt();
    Ok(SmallnessProbe {
        report,
        lhs,
        rhs,
        pass: lhs <= rhs * (1.0 + 1e-9),
    })
}

/// Ratio ‖f(·,·,y)‖_{L²(Q_T)} / (‖u‖ + ‖g‖ + ‖y‖), an empirical version of
/// the linear growth bound on the realized nonlinearity.
pub fn nonlinearity_bound_probe(
    result: &ForwardResult,
    spec: &ProblemSpec,
    ops: &DiscreteOperators,
    tgrid: &TimeGrid,
    u: Option<&Trajectory>,
) -> Result<f64> {
    let coords = ops.mesh.node_coords();
    let mut f_sq = 0.0;
    let mut g_sq = 0.0;
    let mut y_sq = 0.0;
    let mut u_sq = 0.0;
    for k in 0..tgrid.steps {
        let t = tgrid.node(k + 1);
        let f = spec.nonlinearity.bind(&coords, t)?;
        let y = result.state.row(k + 1);
        let fv: Vec<f64> = (0..y.len()).map(|i| f.value(i, y[i])).collect();
        let fnorm = ops.l2_norm(&fv);
        f_sq += tgrid.dt * fnorm * fnorm;
        let g = spec.g.on_nodes(&coords, t)?;
        let gn = ops.l2_norm(&g);
        g_sq += tgrid.dt * gn * gn;
        let yn = result.state_norms[k + 1];
        y_sq += tgrid.dt * yn * yn;
        if let Some(u) = u {
            let un = ops.omega_norm(u.row(k));
            u_sq += tgrid.dt * un * un;
        }
    }
    let denom = u_sq.sqrt() + g_sq.sqrt() + y_sq.sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(f_sq.sqrt() / denom)
}
