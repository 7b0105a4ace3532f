//! Symmetric banded matrices, Cholesky and dense LU solvers, vector helpers.
//!
//! The tensor-product meshes used here produce symmetric matrices whose
//! half-bandwidth is 1 (1D) or `nx + 1` (2D), so a banded Cholesky covers
//! every linear solve in the forward, adjoint, and eigenvalue paths. The
//! step matrices can lose positive definiteness when the linearized
//! reaction coefficient is sufficiently negative; callers then fall back to
//! the dense partial-pivoting LU.

use crate::error::{Result, SolverError};

/// Symmetric matrix stored by its diagonal and lower bands.
///
/// `band(d)[i]` holds `A[i + d, i]` for `d = 0..=half_bandwidth`.
#[derive(Debug, Clone)]
pub struct BandedSym {
    pub n: usize,
    pub hbw: usize,
    data: Vec<f64>,
}

impl BandedSym {
    pub fn zeros(n: usize, hbw: usize) -> Self {
        BandedSym {
            n,
            hbw,
            data: vec![0.0; n * (hbw + 1)],
        }
    }

    #[inline]
    pub fn get(&self, d: usize, i: usize) -> f64 {
        self.data[d * self.n + i]
    }

    #[inline]
    pub fn add(&mut self, d: usize, i: usize, v: f64) {
        self.data[d * self.n + i] += v;
    }

    #[inline]
    pub fn set(&mut self, d: usize, i: usize, v: f64) {
        self.data[d * self.n + i] = v;
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            y[i] = self.get(0, i) * x[i];
        }
        for d in 1..=self.hbw {
            for i in 0..n.saturating_sub(d) {
                let a = self.get(d, i);
                if a != 0.0 {
                    y[i + d] += a * x[i];
                    y[i] += a * x[i + d];
                }
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// Quadratic form xᵀ A x.
    pub fn quad(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            s += self.get(0, i) * x[i] * x[i];
        }
        for d in 1..=self.hbw {
            for i in 0..self.n.saturating_sub(d) {
                s += 2.0 * self.get(d, i) * x[i] * x[i + d];
            }
        }
        s
    }

    /// Add `v[i]` to the diagonal.
    pub fn add_diag(&mut self, v: &[f64]) {
        for i in 0..self.n {
            self.data[i] += v[i];
        }
    }

    /// Copy with extra diagonal entries. Used to build step matrices from
    /// the time-independent part.
    pub fn with_added_diag(&self, v: &[f64]) -> BandedSym {
        let mut out = self.clone();
        out.add_diag(v);
        out
    }

    /// Banded Cholesky factorization A = L Lᵀ. Fails on a non-positive pivot,
    /// which signals an indefinite (or numerically singular) matrix.
    pub fn cholesky(&self) -> Result<BandedChol> {
        let n = self.n;
        let hbw = self.hbw;
        let mut l = self.clone();
        for j in 0..n {
            let k0 = j.saturating_sub(hbw);
            let mut s = l.get(0, j);
            for k in k0..j {
                let v = l.get(j - k, k);
                s -= v * v;
            }
            if s <= 0.0 || !s.is_finite() {
                return Err(SolverError::Numeric(format!(
                    "Cholesky pivot {s:.3e} at row {j}"
                )));
            }
            let ljj = s.sqrt();
            l.set(0, j, ljj);
            let imax = (j + hbw).min(n - 1);
            for i in (j + 1)..=imax {
                let mut s = l.get(i - j, j);
                let k0 = i.saturating_sub(hbw).max(k0);
                for k in k0..j {
                    s -= l.get(i - k, k) * l.get(j - k, k);
                }
                l.set(i - j, j, s / ljj);
            }
        }
        Ok(BandedChol { l })
    }

    /// Dense copy (row-major), used by the LU fallback and test oracles.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n;
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            dense[i * n + i] = self.get(0, i);
        }
        for d in 1..=self.hbw {
            for i in 0..n.saturating_sub(d) {
                let a = self.get(d, i);
                dense[(i + d) * n + i] = a;
                dense[i * n + (i + d)] = a;
            }
        }
        dense
    }
}

/// Cholesky factor of a [`BandedSym`].
#[derive(Debug, Clone)]
pub struct BandedChol {
    l: BandedSym,
}

impl BandedChol {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.n;
        let hbw = self.l.hbw;
        let mut x = b.to_vec();
        // forward: L z = b
        for i in 0..n {
            let k0 = i.saturating_sub(hbw);
            let mut s = x[i];
            for k in k0..i {
                s -= self.l.get(i - k, k) * x[k];
            }
            x[i] = s / self.l.get(0, i);
        }
        // backward: Lᵀ y = z
        for i in (0..n).rev() {
            let imax = (i + hbw).min(n - 1);
            let mut s = x[i];
            for k in (i + 1)..=imax {
                s -= self.l.get(k - i, i) * x[k];
            }
            x[i] = s / self.l.get(0, i);
        }
        x
    }
}

/// Dense LU with partial pivoting; the robust fallback for indefinite
/// step matrices.
#[derive(Debug, Clone)]
pub struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

impl DenseLu {
    pub fn factor(n: usize, mut a: Vec<f64>) -> Result<DenseLu> {
        assert_eq!(a.len(), n * n);
        let mut piv = vec![0usize; n];
        for col in 0..n {
            let mut p = col;
            let mut best = a[col * n + col].abs();
            for r in (col + 1)..n {
                let v = a[r * n + col].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(SolverError::Numeric(format!(
                    "singular matrix in LU at column {col}"
                )));
            }
            piv[col] = p;
            if p != col {
                for c in 0..n {
                    a.swap(col * n + c, p * n + c);
                }
            }
            let d = a[col * n + col];
            for r in (col + 1)..n {
                let m = a[r * n + col] / d;
                a[r * n + col] = m;
                if m != 0.0 {
                    for c in (col + 1)..n {
                        a[r * n + c] -= m * a[col * n + c];
                    }
                }
            }
        }
        Ok(DenseLu { n, lu: a, piv })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for col in 0..n {
            x.swap(col, self.piv[col]);
            let xc = x[col];
            if xc != 0.0 {
                for r in (col + 1)..n {
                    x[r] -= self.lu[r * n + col] * xc;
                }
            }
        }
        for r in (0..n).rev() {
            let mut s = x[r];
            for c in (r + 1)..n {
                s -= self.lu[r * n + c] * x[c];
            }
            x[r] = s / self.lu[r * n + r];
        }
        x
    }
}

/// A factorization of a step matrix: banded Cholesky when positive definite,
/// dense LU otherwise. `fell_back` records that the robust path was taken.
pub struct StepSolver {
    chol: Option<BandedChol>,
    lu: Option<DenseLu>,
    pub fell_back: bool,
}

impl StepSolver {
    pub fn factor(matrix: &BandedSym) -> Result<StepSolver> {
        match matrix.cholesky() {
            Ok(chol) => Ok(StepSolver {
                chol: Some(chol),
                lu: None,
                fell_back: false,
            }),
            Err(_) => {
                let lu = DenseLu::factor(matrix.n, matrix.to_dense())?;
                Ok(StepSolver {
                    chol: None,
                    lu: Some(lu),
                    fell_back: true,
                })
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        match (&self.chol, &self.lu) {
            (Some(c), _) => c.solve(b),
            (None, Some(lu)) => lu.solve(b),
            _ => unreachable!(),
        }
    }
}

/// Eigen-decomposition of a small dense symmetric matrix by cyclic Jacobi
/// rotations: returns (eigenvalues, eigenvectors as columns, row-major).
/// Used for the Rayleigh-Ritz step of the block inverse iteration.
pub fn jacobi_symmetric_eigen(n: usize, mut a: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n);
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() < 1e-15 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = 0.5 * (a[q * n + q] - a[p * n + p]) / apq;
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
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[i * n + i]).collect();
    (values, v)
}

// -------- vector helpers --------

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Weighted inner product Σ wᵢ aᵢ bᵢ (discrete L²).
pub fn wdot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..w.len() {
        s += w[i] * a[i] * b[i];
    }
    s
}

/// Weighted norm (Σ wᵢ aᵢ²)^½.
pub fn wnorm(w: &[f64], a: &[f64]) -> f64 {
    wdot(w, a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for i in 0..x.len() {
        y[i] += alpha * x[i];
    }
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}
