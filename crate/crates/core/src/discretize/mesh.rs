//! Uniform tensor meshes, time grids, and space-time trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};

/// Uniform grid over an interval or an axis-aligned rectangle.
///
/// Nodes are ordered row-major: `index = iy * (nx + 1) + ix`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mesh {
    pub dim: usize,
    /// Cells per axis; second entry is 0 in 1D.
    pub cells: [usize; 2],
    /// Physical extents per axis (length units).
    pub extent: [f64; 2],
    /// Cell size per axis.
    pub h: [f64; 2],
}

impl Mesh {
    pub fn interval(length: f64, cells: usize) -> Result<Mesh> {
        if cells == 0 || length <= 0.0 {
            return Err(SolverError::InvalidCoefficient(
                "mesh needs at least one cell and positive length".into(),
            ));
        }
        Ok(Mesh {
            dim: 1,
            cells: [cells, 0],
            extent: [length, 0.0],
            h: [length / cells as f64, 0.0],
        })
    }

    pub fn rectangle(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Mesh> {
        if nx == 0 || ny == 0 || lx <= 0.0 || ly <= 0.0 {
            return Err(SolverError::InvalidCoefficient(
                "mesh needs at least one cell and positive extents per axis".into(),
            ));
        }
        Ok(Mesh {
            dim: 2,
            cells: [nx, ny],
            extent: [lx, ly],
            h: [lx / nx as f64, ly / ny as f64],
        })
    }

    pub fn nodes_per_axis(&self) -> [usize; 2] {
        [
            self.cells[0] + 1,
            if self.dim == 2 { self.cells[1] + 1 } else { 1 },
        ]
    }

    pub fn n_nodes(&self) -> usize {
        let n = self.nodes_per_axis();
        n[0] * n[1]
    }

    pub fn node_coord(&self, idx: usize) -> (f64, f64) {
        let nx = self.cells[0] + 1;
        let ix = idx % nx;
        let iy = idx / nx;
        (ix as f64 * self.h[0], iy as f64 * self.h[1])
    }

    pub fn node_coords(&self) -> Vec<(f64, f64)> {
        (0..self.n_nodes()).map(|i| self.node_coord(i)).collect()
    }

    pub fn node_multi_index(&self, idx: usize) -> (usize, usize) {
        let nx = self.cells[0] + 1;
        (idx % nx, idx / nx)
    }

    /// Trapezoid (lumped) quadrature weight of one axis node.
    fn axis_weight(h: f64, i: usize, n_nodes: usize) -> f64 {
        if i == 0 || i + 1 == n_nodes {
            0.5 * h
        } else {
            h
        }
    }

    /// Diagonal of the lumped mass matrix.
    pub fn lumped_mass(&self) -> Vec<f64> {
        let np = self.nodes_per_axis();
        let mut m = Vec::with_capacity(self.n_nodes());
        for iy in 0..np[1] {
            let wy = if self.dim == 2 {
                Self::axis_weight(self.h[1], iy, np[1])
            } else {
                1.0
            };
            for ix in 0..np[0] {
                let wx = Self::axis_weight(self.h[0], ix, np[0]);
                m.push(wx * wy);
            }
        }
        m
    }
}

/// Uniform time grid on [0, T]. States and adjoints live on the nodes
/// `t_0..t_N`; controls are piecewise constant on the left-open intervals
/// `(t_{k-1}, t_k]`, indexed `1..=N` (stored 0-based).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_end: f64,
    pub steps: usize,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(t_end: f64, steps: usize) -> Result<TimeGrid> {
        if steps == 0 || t_end <= 0.0 {
            return Err(SolverError::InvalidCoefficient(
                "time grid needs positive horizon and at least one step".into(),
            ));
        }
        Ok(TimeGrid {
            t_end,
            steps,
            dt: t_end / steps as f64,
        })
    }

    /// Grid with a prescribed step size; `t_end` must be an integer multiple.
    pub fn with_dt(t_end: f64, dt: f64) -> Result<TimeGrid> {
        if dt <= 0.0 || t_end <= 0.0 {
            return Err(SolverError::InvalidCoefficient(
                "time grid needs positive horizon and dt".into(),
            ));
        }
        let steps_f = t_end / dt;
        let steps = steps_f.round();
        if (steps_f - steps).abs() > 1e-9 * steps.max(1.0) {
            return Err(SolverError::InvalidCoefficient(format!(
                "horizon {t_end} is not an integer multiple of dt {dt}"
            )));
        }
        Ok(TimeGrid {
            t_end,
            steps: steps as usize,
            dt,
        })
    }

    pub fn node(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

/// What a trajectory represents; controls how many time entries it has.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    State,
    Adjoint,
    Control,
}

/// A space-time field sampled on the discrete grid, stored row-major as
/// `data[time * n_space + space]`. States/adjoints have `N + 1` rows on the
/// full node set; controls have `N` rows on the ω node set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub role: Role,
    pub n_time: usize,
    pub n_space: usize,
    pub data: Vec<f64>,
}

impl Trajectory {
    pub fn zeros(role: Role, n_time: usize, n_space: usize) -> Trajectory {
        Trajectory {
            role,
            n_time,
            n_space,
            data: vec![0.0; n_time * n_space],
        }
    }

    pub fn from_rows(role: Role, rows: Vec<Vec<f64>>) -> Result<Trajectory> {
        let n_time = rows.len();
        let n_space = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != n_space) {
            return Err(SolverError::Shape("ragged trajectory rows".into()));
        }
        Ok(Trajectory {
            role,
            n_time,
            n_space,
            data: rows.into_iter().flatten().collect(),
        })
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.n_space..(k + 1) * self.n_space]
    }

    #[inline]
    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.n_space..(k + 1) * self.n_space]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Restriction to the first `n_time` rows (exact on nested time grids).
    pub fn truncated(&self, n_time: usize) -> Trajectory {
        assert!(n_time <= self.n_time);
        Trajectory {
            role: self.role,
            n_time,
            n_space: self.n_space,
            data: self.data[..n_time * self.n_space].to_vec(),
        }
    }

    /// Zero-extension to `n_time` rows.
    pub fn zero_extended(&self, n_time: usize) -> Trajectory {
        assert!(n_time >= self.n_time);
        let mut data = self.data.clone();
        data.resize(n_time * self.n_space, 0.0);
        Trajectory {
            role: self.role,
            n_time,
            n_space: self.n_space,
            data,
        }
    }
}
