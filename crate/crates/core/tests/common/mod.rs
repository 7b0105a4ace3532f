//! Shared test oracles, independent of the library's numerical paths:
//! a dense Jacobi eigensolver for generalized eigenvalue cross-checks,
//! brute-force grid searches for the prox operators, and a hand-rolled
//! three-node implicit-Euler evaluator for the tiny global-optimality check.

#![allow(dead_code)]

use parcontrol::config::RunConfig;

pub fn load_config(name: &str) -> RunConfig {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()));
    RunConfig::parse(&text).unwrap()
}

// ---------------------------------------------------------------------------
// Dense symmetric eigensolver (Jacobi rotations)
// ---------------------------------------------------------------------------

/// Eigenvalues of a dense symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(n: usize, mut a: Vec<f64>) -> Vec<f64> {
    assert_eq!(a.len(), n * n);
    for _sweep in 0..200 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// Dense Cholesky factor (lower triangular, row-major).
pub fn dense_cholesky(n: usize, a: &[f64]) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        assert!(d > 0.0, "matrix not positive definite at row {j}");
        l[j * n + j] = d.sqrt();
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / l[j * n + j];
        }
    }
    l
}

/// Smallest generalized eigenvalue of A v = λ B v (A, B dense symmetric,
/// B positive definite) via the Cholesky reduction to standard form and the
/// Jacobi eigensolver.
pub fn smallest_generalized_eigenvalue(n: usize, a: &[f64], b: &[f64]) -> f64 {
    let l = dense_cholesky(n, b);
    // C = L⁻¹ A L⁻ᵀ
    // first W = L⁻¹ A (forward substitution on each column of A)
    let mut w = vec![0.0; n * n];
    for col in 0..n {
        for i in 0..n {
            let mut s = a[i * n + col];
            for k in 0..i {
                s -= l[i * n + k] * w[k * n + col];
            }
            w[i * n + col] = s / l[i * n + i];
        }
    }
    // then C = W L⁻ᵀ: solve C Lᵀ = W row-wise, i.e. per row forward
    // substitution against Lᵀ ⇒ columns of C from columns of W
    let mut c = vec![0.0; n * n];
    for row in 0..n {
        for j in 0..n {
            let mut s = w[row * n + j];
            for k in 0..j {
                s -= l[j * n + k] * c[row * n + k];
            }
            c[row * n + j] = s / l[j * n + j];
        }
    }
    let eigs = jacobi_eigenvalues(n, c);
    eigs.into_iter().fold(f64::INFINITY, f64::min)
}

// ---------------------------------------------------------------------------
// Brute-force prox oracles
// ---------------------------------------------------------------------------

/// 1D grid search for the scalarized ball prox: minimize over the magnitude
/// s ∈ [0, cap] of ½(s − nv)² + τκ s, where nv = ‖v‖_w. Returns the optimal
/// magnitude.
pub fn scalar_ball_prox_magnitude(nv: f64, tau_kappa: f64, cap: f64, step: f64) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    let n = (cap / step).ceil() as usize;
    for i in 0..=n {
        let s = (i as f64 * step).min(cap);
        let val = 0.5 * (s - nv) * (s - nv) + tau_kappa * s;
        if val < best.0 {
            best = (val, s);
        }
    }
    best.1
}

/// 1D grid search for the single-cell box prox (weight w): minimize
/// ½ w (u − v)² + τκ √w |u| over the grid on [lo, hi].
pub fn scalar_box_prox(v: f64, tau_kappa: f64, lo: f64, hi: f64, step: f64, w: f64) -> f64 {
    let mut best = (f64::INFINITY, lo);
    let n = ((hi - lo) / step).round() as usize;
    for i in 0..=n {
        let u = lo + i as f64 * step;
        let val = 0.5 * w * (u - v) * (u - v) + tau_kappa * w.sqrt() * u.abs();
        if val < best.0 {
            best = (val, u);
        }
    }
    best.1
}

/// Exhaustive 2D grid search for the two-cell box prox with weights w.
pub fn grid_box_prox_2d(
    v: [f64; 2],
    tau_kappa: f64,
    lo: f64,
    hi: f64,
    step: f64,
    w: [f64; 2],
) -> [f64; 2] {
    let n = ((hi - lo) / step).round() as usize;
    let mut best = (f64::INFINITY, [lo, lo]);
    for i in 0..=n {
        let u0 = lo + i as f64 * step;
        let d0 = 0.5 * w[0] * (u0 - v[0]) * (u0 - v[0]);
        let q0 = w[0] * u0 * u0;
        for j in 0..=n {
            let u1 = lo + j as f64 * step;
            let d1 = 0.5 * w[1] * (u1 - v[1]) * (u1 - v[1]);
            let norm = (q0 + w[1] * u1 * u1).sqrt();
            let val = d0 + d1 + tau_kappa * norm;
            if val < best.0 {
                best = (val, [u0, u1]);
            }
        }
    }
    best.1
}

// ---------------------------------------------------------------------------
// Independent tiny-instance evaluator (3 nodes, 3 steps)
// ---------------------------------------------------------------------------

/// Hand-rolled objective evaluator for the bundled tiny instance: interval
/// [0,1] with 2 cells, a ≡ 1, Schlögl roots (0.25, 1), y₀ = 0, target 0.3 on
/// [0, 0.3], dt = 0.1, 3 steps, control on the middle node only. Everything
/// (stencil, masses, Newton, quadrature) is written out longhand so the
/// check does not share code with the library.
pub struct TinyEvaluator {
    pub kappa: f64,
}

impl TinyEvaluator {
    const H: f64 = 0.5;
    const DT: f64 = 0.1;
    const MASS: [f64; 3] = [0.25, 0.5, 0.25];
    const YD: f64 = 0.3;

    fn f(y: f64) -> f64 {
        y * (y - 0.25) * (y - 1.0)
    }

    fn fp(y: f64) -> f64 {
        3.0 * y * y - 2.5 * y + 0.25
    }

    /// One implicit Euler step by plain Newton on the 3-node system.
    fn step(y_prev: [f64; 3], u: f64) -> [f64; 3] {
        let m = Self::MASS;
        let dt = Self::DT;
        let k_off = -1.0 / Self::H;
        let k_diag = [1.0 / Self::H, 2.0 / Self::H, 1.0 / Self::H];
        let rhs = [
            m[0] * y_prev[0] / dt,
            m[1] * y_prev[1] / dt + m[1] * u,
            m[2] * y_prev[2] / dt,
        ];
        let mut y = y_prev;
        for _ in 0..60 {
            // residual of (M/dt + K + M_a) y + M f(y) − rhs
            let res = [
                (m[0] / dt + m[0]) * y[0] + k_diag[0] * y[0] + k_off * y[1]
                    + m[0] * Self::f(y[0])
                    - rhs[0],
                (m[1] / dt + m[1]) * y[1] + k_diag[1] * y[1] + k_off * (y[0] + y[2])
                    + m[1] * Self::f(y[1])
                    - rhs[1],
                (m[2] / dt + m[2]) * y[2] + k_diag[2] * y[2] + k_off * y[1]
                    + m[2] * Self::f(y[2])
                    - rhs[2],
            ];
            let rn = (res[0] * res[0] + res[1] * res[1] + res[2] * res[2]).sqrt();
            if rn < 1e-13 {
                break;
            }
            // Jacobian: tridiagonal [b0 c; c b1 c; c b2]
            let b = [
                m[0] / dt + m[0] + k_diag[0] + m[0] * Self::fp(y[0]),
                m[1] / dt + m[1] + k_diag[1] + m[1] * Self::fp(y[1]),
                m[2] / dt + m[2] + k_diag[2] + m[2] * Self::fp(y[2]),
            ];
            let c = k_off;
            // Thomas algorithm, written out
            let w1 = c / b[0];
            let d1 = b[1] - c * w1;
            let w2 = c / d1;
            let d2 = b[2] - c * w2;
            let g0 = -res[0] / b[0];
            let g1 = (-res[1] - c * g0) / d1;
            let g2 = (-res[2] - c * g1) / d2;
            let dz2 = g2;
            let dz1 = g1 - w2 * dz2;
            let dz0 = g0 - w1 * dz1;
            y = [y[0] + dz0, y[1] + dz1, y[2] + dz2];
        }
        y
    }

    /// J(u) for a 3-slice control on the middle node.
    pub fn objective(&self, u: [f64; 3]) -> f64 {
        let m = Self::MASS;
        let dt = Self::DT;
        let mut y = [0.0f64; 3];
        let mut tracking = 0.0;
        for (k, &uk) in u.iter().enumerate() {
            // left-endpoint quadrature: node k contributes before step k+1;
            // the target is supported on [0, 0.3] i.e. all three intervals
            let t = k as f64 * dt;
            let yd = if t <= 0.3 { Self::YD } else { 0.0 };
            let mut row = 0.0;
            for i in 0..3 {
                let d = y[i] - yd;
                row += m[i] * d * d;
            }
            tracking += 0.5 * dt * row;
            y = Self::step(y, uk);
        }
        let sparse: f64 = u.iter().map(|&uk| dt * (m[1].sqrt() * uk.abs())).sum();
        tracking + self.kappa * sparse
    }
}
