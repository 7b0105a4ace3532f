//! Backward linearized adjoint solver and the reduced gradient.
//!
//! The adjoint is the exact transpose of the linearized forward step
//! (discretize-then-optimize), with the reaction coefficient frozen at the
//! converged state of the same time node:
//!
//! ```text
//!   (M/dt + K + M_a + M ∘ f'(·, t_k, y_k)) φ_k = (M/dt) φ_{k+1} + M ∘ r_k,
//!   φ_N = 0,
//! ```
//!
//! where `r = y − y_d` in the practical mode and `r = 2y − y_d − ŷ` when an
//! anchor trajectory `ŷ` is supplied. With the tracking cost discretized by
//! the left-endpoint rectangle rule this recursion reproduces the discrete
//! gradient of the reduced cost to machine precision: the gradient on the
//! control interval `(t_{k-1}, t_k]` is the restriction of `φ_k` to ω.

use crate::discretize::{DiscreteOperators, Role, TimeGrid, Trajectory};
use crate::error::{Result, SolverError};
use crate::linalg::StepSolver;
use crate::model::ProblemSpec;

/// Output of an adjoint solve.
#[derive(Debug, Clone)]
pub struct AdjointResult {
    pub phi: Trajectory,
    /// ‖φ(t_k)‖_{L²(Ω)} at every node.
    pub phi_norms: Vec<f64>,
    /// Relative defect of the discrete energy identity at t = 0.
    pub energy_identity_residual: f64,
    pub warnings: Vec<String>,
}

/// Solve the backward adjoint equation for a given forward state.
pub fn solve_adjoint(
    spec: &ProblemSpec,
    ops: &DiscreteOperators,
    tgrid: &TimeGrid,
    state: &Trajectory,
    anchor: Option<&Trajectory>,
) -> Result<AdjointResult> {
    let n = ops.n_nodes();
    if state.n_time != tgrid.steps + 1 || state.n_space != n {
        return Err(SolverError::Shape(format!(
            "state has shape {}x{}, expected {}x{}",
            state.n_time,
            state.n_space,
            tgrid.steps + 1,
            n
        )));
    }
    if let Some(anchor) = anchor {
        if anchor.n_time != state.n_time || anchor.n_space != n {
            return Err(SolverError::Shape("anchor shape mismatch".into()));
        }
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

    let mut phi = Trajectory::zeros(Role::Adjoint, tgrid.steps + 1, n);
    let mut warnings = Vec::new();
    let mut warned_fallback = false;

    // terminal condition: φ_N = 0 (already zeroed); march k = N-1 .. 0
    let mut phi_next = vec![0.0; n];
    for k in (0..tgrid.steps).rev() {
        let t = tgrid.node(k);
        let f = spec.nonlinearity.bind(&coords, t)?;
        let y = state.row(k);
        let r = residual_row(spec, ops, &coords, t, y, anchor.map(|a| a.row(k)))?;

        let fprime: Vec<f64> = (0..n).map(|i| ops.mass[i] * f.deriv(i, y[i])).collect();
        let jac = base.with_added_diag(&fprime);
        let solver = StepSolver::factor(&jac)?;
        if solver.fell_back && !warned_fallback {
            warnings.push(format!(
                "indefinite adjoint step matrix at node {k}; using the dense LU fallback"
            ));
            warned_fallback = true;
        }
        let rhs: Vec<f64> = (0..n)
            .map(|i| ops.mass[i] * (phi_next[i] / dt + r[i]))
            .collect();
        let sol = solver.solve(&rhs);
        phi.row_mut(k).copy_from_slice(&sol);
        phi_next = sol;
    }

    let phi_norms: Vec<f64> = (0..=tgrid.steps).map(|k| ops.l2_norm(phi.row(k))).collect();
    let energy_identity_residual =
        energy_identity_residual(&phi, state, spec, ops, tgrid, anchor)?;

    Ok(AdjointResult {
        phi,
        phi_norms,
        energy_identity_residual,
        warnings,
    })
}

fn residual_row(
    spec: &ProblemSpec,
    ops: &DiscreteOperators,
    coords: &[(f64, f64)],
    t: f64,
    y: &[f64],
    anchor: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let yd = spec.yd.on_nodes(coords, t)?;
    Ok(match anchor {
        None => (0..ops.n_nodes()).map(|i| y[i] - yd[i]).collect(),
        Some(a) => (0..ops.n_nodes())
            .map(|i| 2.0 * y[i] - yd[i] - a[i])
            .collect(),
    })
}

/// Relative residual of each backward step equation for an externally
/// supplied adjoint trajectory; used by the independent artifact verifier.
pub fn adjoint_step_residuals(
    spec: &ProblemSpec,
    ops: &DiscreteOperators,
    tgrid: &TimeGrid,
    state: &Trajectory,
    phi: &Trajectory,
) -> Result<Vec<f64>> {
    let n = ops.n_nodes();
    if phi.n_time != tgrid.steps + 1 || phi.n_space != n {
        return Err(SolverError::Shape("adjoint shape mismatch".into()));
    }
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

    let mut out = Vec::with_capacity(tgrid.steps + 1);
    // terminal condition
    let terminal: f64 = phi.row(tgrid.steps).iter().map(|v| v.abs()).sum();
    out.push(terminal);
    let mut buf = vec![0.0; n];
    for k in (0..tgrid.steps).rev() {
        let t = tgrid.node(k);
        let f = spec.nonlinearity.bind(&coords, t)?;
        let y = state.row(k);
        let p = phi.row(k);
        let p_next = phi.row(k + 1);
        let r = residual_row(spec, ops, &coords, t, y, None)?;
        base.matvec(p, &mut buf);
        let mut rhs_sq = 0.0;
        for i in 0..n {
            let rhs = ops.mass[i] * (p_next[i] / dt + r[i]);
            buf[i] += ops.mass[i] * f.deriv(i, y[i]) * p[i] - rhs;
            rhs_sq += rhs * rhs;
        }
        out.push(crate::linalg::norm2(&buf) / rhs_sq.sqrt().max(1.0));
    }
    Ok(out)
}

/// Reduced gradient of the smooth cost part: the adjoint restricted to ω,
/// aligned to control intervals via their right-endpoint node.
pub fn reduced_gradient(phi: &Trajectory, ops: &DiscreteOperators) -> Trajectory {
    let steps = phi.n_time - 1;
    let mut grad = Trajectory::zeros(Role::Control, steps, ops.omega_nodes.len());
    for k in 1..=steps {
        let row = ops.restrict_omega(phi.row(k));
        grad.row_mut(k - 1).copy_from_slice(&row);
    }
    grad
}

/// Discrete analogue of the adjoint energy identity evaluated at t = 0:
///
/// ```text
///   ½‖φ(0)‖² + Σ_k dt [ φᵀ(K + M_a)φ + φᵀ M f'(y) φ ] = Σ_k dt φᵀ M r
/// ```
///
/// returned as |lhs − rhs| / max(|lhs|, |rhs|, 1). The backward Euler
/// dissipation makes this O(dt).
pub fn energy_identity_probe(
    phi: &Trajectory,
    state: &Trajectory,
    spec: &ProblemSpec,
    ops: &DiscreteOperators,
    tgrid: &TimeGrid,
) -> Result<f64> {
    energy_identity_residual(phi, state, spec, ops, tgrid, None)
}

fn energy_identity_residual(
    phi: &Trajectory,
    state: &Trajectory,
    spec: &ProblemSpec,
    ops: &DiscreteOperators,
    tgrid: &TimeGrid,
    anchor: Option<&Trajectory>,
) -> Result<f64> {
    let n = ops.n_nodes();
    let coords = ops.mesh.node_coords();
    let phi0 = phi.row(0);
    let mut lhs = 0.5 * ops.l2_norm(phi0).powi(2);
    let mut rhs = 0.0;
    for k in 0..tgrid.steps {
        let t = tgrid.node(k);
        let f = spec.nonlinearity.bind(&coords, t)?;
        let p = phi.row(k);
        let y = state.row(k);
        let mut quad = ops.stiffness.quad(p);
        for i in 0..n {
            quad += ops.reaction[i] * p[i] * p[i];
            quad += ops.mass[i] * f.deriv(i, y[i]) * p[i] * p[i];
        }
        lhs += tgrid.dt * quad;
        let r = residual_row(spec, ops, &coords, t, y, anchor.map(|a| a.row(k)))?;
        let mut pr = 0.0;
        for i in 0..n {
            pr += ops.mass[i] * r[i] * p[i];
        }
        rhs += tgrid.dt * pr;
    }
    Ok((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{build_operators, Mesh};
    use crate::field::Field;
    use crate::forward::solve_forward;
    use crate::model::{ConstraintSet, Domain, Family, Nonlinearity, OmegaSpec, ProblemSpec};
    use crate::rng::Rng;
    use std::sync::Arc;

    fn base_spec() -> ProblemSpec {
        ProblemSpec {
            domain: Domain::Interval { length: 1.0 },
            a: Field::constant(1.0),
            g: Field::constant(0.0),
            y0: Field::constant(0.0),
            yd: Field::constant(0.0),
            nonlinearity: Nonlinearity::schloegl(0.25, 1.0),
            kappa: 0.1,
            omega: OmegaSpec::Box {
                min: vec![0.25],
                max: vec![0.75],
            },
            constraints: ConstraintSet::Box {
                alpha: -2.0,
                beta: 2.0,
            },
        }
    }

    fn zero_nonlinearity() -> Nonlinearity {
        Nonlinearity::new(Family::Custom {
            value: Arc::new(|_, _, _, _| 0.0),
            deriv: Arc::new(|_, _, _, _| 0.0),
        })
    }

    #[test]
    fn zero_residual_gives_zero_adjoint() {
        // y ≡ y_d = 0 with and without anchor = y
        let spec = base_spec();
        let mesh = Mesh::interval(1.0, 8).unwrap();
        let ops = build_operators(&spec, &mesh).unwrap();
        let tg = TimeGrid::new(1.0, 10).unwrap();
        let fw = solve_forward(&spec, &ops, &tg, None).unwrap();

        let adj = solve_adjoint(&spec, &ops, &tg, &fw.state, None).unwrap();
        assert!(adj.phi.data.iter().all(|&v| v == 0.0));
        assert_eq!(adj.energy_identity_residual, 0.0);

        // anchor = y and y = y_d: r = 2y - y_d - y = 0
        let adj2 = solve_adjoint(&spec, &ops, &tg, &fw.state, Some(&fw.state)).unwrap();
        assert!(adj2.phi.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn terminal_condition_is_exact() {
        let mut spec = base_spec();
        spec.y0 = Field::constant(0.15);
        let mesh = Mesh::interval(1.0, 12).unwrap();
        let ops = build_operators(&spec, &mesh).unwrap();
        let tg = TimeGrid::new(2.0, 40).unwrap();
        let fw = solve_forward(&spec, &ops, &tg, None).unwrap();
        let adj = solve_adjoint(&spec, &ops, &tg, &fw.state, None).unwrap();
        assert!(adj.phi.row(tg.steps).iter().all(|&v| v == 0.0));
        assert_eq!(adj.phi_norms[tg.steps], 0.0);
    }

    #[test]
    fn scalar_backward_ode_closed_form() {
        // spatially constant, f = 0, a = 1, y - y_d ≡ 1:
        // -φ' + φ = 1, φ(T) = 0  =>  φ(t) = 1 - e^{t-T}
        let mut spec = base_spec();
        spec.nonlinearity = zero_nonlinearity();
        let mesh = Mesh::interval(1.0, 6).unwrap();
        let ops = build_operators(&spec, &mesh).unwrap();
        let t_end = 1.0;

        let check = |steps: usize| -> f64 {
            let tg = TimeGrid::new(t_end, steps).unwrap();
            // y ≡ 1 and y_d = 0 make the right-hand side ≡ 1
            let mut state = Trajectory::zeros(Role::State, tg.steps + 1, ops.n_nodes());
            state.data.fill(1.0);
            let adj = solve_adjoint(&spec, &ops, &tg, &state, None).unwrap();
            let mut worst = 0.0f64;
            for k in 0..=tg.steps {
                let t = tg.node(k);
                let exact = 1.0 - (t - t_end).exp();
                for &v in adj.phi.row(k) {
                    worst = worst.max((v - exact).abs());
                }
            }
            worst
        };
        let err_coarse = check(20);
        let err_fine = check(40);
        assert!(err_coarse < 0.1, "coarse error {err_coarse}");
        // O(dt): halving dt roughly halves the error
        let ratio = err_coarse / err_fine;
        assert!((1.5..=2.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn energy_identity_residual_is_first_order() {
        let mut spec = base_spec();
        spec.nonlinearity = zero_nonlinearity();
        let mesh = Mesh::interval(1.0, 6).unwrap();
        let ops = build_operators(&spec, &mesh).unwrap();
        for steps in [20usize, 40] {
            let tg = TimeGrid::new(1.0, steps).unwrap();
            let mut state = Trajectory::zeros(Role::State, tg.steps + 1, ops.n_nodes());
            state.data.fill(1.0);
            let adj = solve_adjoint(&spec, &ops, &tg, &state, None).unwrap();
            let res = energy_identity_probe(&adj.phi, &state, &spec, &ops, &tg).unwrap();
            assert!(res <= 5.0 * tg.dt, "steps {steps}: residual {res}");
        }
    }

    #[test]
    fn energy_identity_on_generic_run() {
        let mut spec = base_spec();
        spec.y0 = Field::from_expr("0.2 + 0.05*cos(pi*x)").unwrap();
        spec.yd = Field::from_expr("0.3*sin(pi*x)")
            .unwrap()
            .with_support_end(1.0);
        let mesh = Mesh::interval(1.0, 16).unwrap();
        let ops = build_operators(&spec, &mesh).unwrap();
        let tg = TimeGrid::new(2.0, 40).unwrap();
        let fw = solve_forward(&spec, &ops, &tg, None).unwrap();
        let adj = solve_adjoint(&spec, &ops, &tg, &fw.state, None).unwrap();
        assert!(
            adj.energy_identity_residual <= 10.0 * tg.dt,
            "residual {}",
            adj.energy_identity_residual
        );
    }

    #[test]
    fn adjoint_is_linear_in_the_residual() {
        // with a frozen linearization (f = 0), φ depends linearly on r:
        // φ(y, yd_a) + φ(y, yd_b) evaluated against doubled state equals
        // φ(2y, yd_a + yd_b)
        let mesh = Mesh::interval(1.0, 10).unwrap();
        let mut sa = base_spec();
        sa.nonlinearity = zero_nonlinearity();
        sa.yd = Field::constant(0.3);
        let ops = build_operators(&sa, &mesh).unwrap();
        let tg = TimeGrid::new(1.0, 20).unwrap();

        let mut rng = Rng::new(31);
        let mut state = Trajectory::zeros(Role::State, tg.steps + 1, ops.n_nodes());
        for v in state.data.iter_mut() {
            *v = 0.1 * rng.normal();
        }
        let mut state2 = state.clone();
        for v in state2.data.iter_mut() {
            *v *= 2.0;
        }

        let mut sb = base_spec();
        sb.nonlinearity = zero_nonlinearity();
        sb.yd = Field::from_expr("0.2*sin(pi*x)").unwrap();
        let mut s_sum = base_spec();
        s_sum.nonlinearity = zero_nonlinearity();
        s_sum.yd = Field::from_expr("0.3 + 0.2*sin(pi*x)").unwrap();

        let phi_a = solve_adjoint(&sa, &ops, &tg, &state, None).unwrap().phi;
        let phi_b = solve_adjoint(&sb, &ops, &tg, &state, None).unwrap().phi;
        let phi_sum = solve_adjoint(&s_sum, &ops, &tg, &state2, None).unwrap().phi;
        for i in 0..phi_a.data.len() {
            assert!(
                (phi_a.data[i] + phi_b.data[i] - phi_sum.data[i]).abs() < 1e-10,
                "index {i}"
            );
        }
    }

    #[test]
    fn gradient_restriction_shapes() {
        let mut spec = base_spec();
        spec.omega = OmegaSpec::Box {
            min: vec![0.0],
            max: vec![1.0],
        };
        let mesh = Mesh::interval(1.0, 8).unwrap();
        let ops = build_operators(&spec, &mesh).unwrap();
        let tg = TimeGrid::new(1.0, 5).unwrap();
        let mut phi = Trajectory::zeros(Role::Adjoint, tg.steps + 1, ops.n_nodes());
        for k in 0..=tg.steps {
            for (i, v) in phi.row_mut(k).iter_mut().enumerate() {
                *v = (k * 10 + i) as f64;
            }
        }
        let g = reduced_gradient(&phi, &ops);
        assert_eq!(g.n_time, tg.steps);
        // ω = whole domain: the gradient equals φ sampled on all nodes
        assert_eq!(g.n_space, ops.n_nodes());
        assert_eq!(g.row(0), phi.row(1));
        assert_eq!(g.row(4), phi.row(5));

        // φ ≡ 0 -> zero gradient
        let z = Trajectory::zeros(Role::Adjoint, tg.steps + 1, ops.n_nodes());
        assert!(reduced_gradient(&z, &ops).data.iter().all(|&v| v == 0.0));
    }
}
