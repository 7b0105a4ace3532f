//! End-to-end checks on a 2D rectangle: the banded solver runs at full
//! bandwidth, the gradient stays consistent, and a small sparse solve
//! converges with clean certificates.

use parcontrol::adjoint::{reduced_gradient, solve_adjoint};
use parcontrol::discretize::{build_operators, Mesh, Role, TimeGrid, Trajectory};
use parcontrol::field::Field;
use parcontrol::forward::solve_forward;
use parcontrol::model::{ConstraintSet, Domain, Nonlinearity, OmegaSpec, ProblemSpec};
use parcontrol::optimize::{objective_value, solve_pt, SolveOptions};
use parcontrol::rng::Rng;

fn spec_2d() -> (ProblemSpec, Mesh) {
    let spec = ProblemSpec {
        domain: Domain::Rectangle { lx: 1.0, ly: 1.0 },
        a: Field::constant(1.0),
        g: Field::constant(0.0),
        y0: Field::constant(0.1),
        yd: Field::from_expr("0.25*sin(pi*x)*sin(pi*y)")
            .unwrap()
            .with_support_end(1.0),
        nonlinearity: Nonlinearity::schloegl(0.25, 1.0),
        kappa: 0.004,
        omega: OmegaSpec::Box {
            min: vec![0.25, 0.25],
            max: vec![0.75, 0.75],
        },
        constraints: ConstraintSet::Box {
            alpha: -2.0,
            beta: 2.0,
        },
    };
    (spec, Mesh::rectangle(1.0, 1.0, 8, 8).unwrap())
}

#[test]
fn gradient_consistency_on_a_rectangle() {
    let (spec, mesh) = spec_2d();
    let ops = build_operators(&spec, &mesh).unwrap();
    let tg = TimeGrid::with_dt(1.0, 0.05).unwrap();
    let n_omega = ops.omega_nodes.len();
    assert!(n_omega > 1);

    let mut rng = Rng::new(77);
    let mut u = Trajectory::zeros(Role::Control, tg.steps, n_omega);
    for v in u.data.iter_mut() {
        *v = 0.3 * rng.normal();
    }
    let fw = solve_forward(&spec, &ops, &tg, Some(&u)).unwrap();
    let adj = solve_adjoint(&spec, &ops, &tg, &fw.state, None).unwrap();
    let grad = reduced_gradient(&adj.phi, &ops);

    let smooth = |u: &Trajectory| objective_value(&spec, &ops, &tg, u, None).unwrap().1;
    for _ in 0..3 {
        let mut delta = Trajectory::zeros(Role::Control, tg.steps, n_omega);
        for v in delta.data.iter_mut() {
            *v = rng.normal();
        }
        let mut analytic = 0.0;
        for k in 0..tg.steps {
            for i in 0..n_omega {
                analytic += tg.dt * ops.omega_weights[i] * grad.row(k)[i] * delta.row(k)[i];
            }
        }
        let h = 1e-5;
        let mut plus = u.clone();
        let mut minus = u.clone();
        for i in 0..u.data.len() {
            plus.data[i] += h * delta.data[i];
            minus.data[i] -= h * delta.data[i];
        }
        let fd = (smooth(&plus) - smooth(&minus)) / (2.0 * h);
        let rel = (analytic - fd).abs() / fd.abs().max(1e-300);
        assert!(rel <= 1e-4, "relative error {rel}");
    }
}

#[test]
fn sparse_solve_converges_on_a_rectangle() {
    let (spec, mesh) = spec_2d();
    let ops = build_operators(&spec, &mesh).unwrap();
    let tg = TimeGrid::with_dt(2.0, 0.1).unwrap();
    let u0 = Trajectory::zeros(Role::Control, tg.steps, ops.omega_nodes.len());
    // the sparsity certificates live in a band of width 1e-6 times kappa, so
    // the absolute residual target must sit well below that
    let opts = SolveOptions {
        kkt_tol: 1e-10,
        ..SolveOptions::default()
    };
    let sol = solve_pt(&spec, &ops, &tg, &u0, &opts, None).unwrap();
    assert!(sol.converged, "residual {}", sol.kkt.stationarity_residual);
    assert!(sol.kkt.per_time.iter().any(|c| c.active));
    assert!(sol.kkt.per_time.iter().all(|c| c.sparsity_ok));
    // tracking beats doing nothing
    let (j_zero, _, _) = objective_value(&spec, &ops, &tg, &u0, None).unwrap();
    assert!(sol.objective < j_zero);
}
