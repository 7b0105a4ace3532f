//! Scalar fields over the space-time cylinder.
//!
//! Config files may give a field as a plain number, a closed-form expression
//! in `x`, `y`, `t`, or gridded nodal values (optionally one frame per time
//! sample). A field can carry a declared support end: it evaluates to zero
//! for `t` beyond that time, which is how finitely supported targets and
//! sources are expressed without conditionals in the expression language.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::expr::Expr;

/// Field representation as written in a config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Constant(f64),
    Formula(String),
    Detailed {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expr: Option<String>,
        /// Nodal values on the mesh (time-independent).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grid: Option<Vec<f64>>,
        /// Frame times for a time-sampled grid; paired with `frames`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        times: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        frames: Option<Vec<Vec<f64>>>,
        /// Field is zero for t > support_end.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        support_end: Option<f64>,
    },
}

#[derive(Debug, Clone)]
enum FieldData {
    Constant(f64),
    Expr(Expr),
    /// Time-independent nodal values.
    Grid(Vec<f64>),
    /// Piecewise-constant-in-time frames: frame i is used on [times[i], times[i+1]).
    TimeGrid { times: Vec<f64>, frames: Vec<Vec<f64>> },
}

/// A compiled scalar field.
#[derive(Debug, Clone)]
pub struct Field {
    data: FieldData,
    support_end: Option<f64>,
}

impl Field {
    pub fn constant(c: f64) -> Field {
        Field {
            data: FieldData::Constant(c),
            support_end: None,
        }
    }

    pub fn from_expr(src: &str) -> Result<Field> {
        Ok(Field {
            data: FieldData::Expr(Expr::parse(src)?),
            support_end: None,
        })
    }

    pub fn with_support_end(mut self, t: f64) -> Field {
        self.support_end = Some(t);
        self
    }

    pub fn compile(spec: &FieldSpec, field_name: &str) -> Result<Field> {
        let bad = |message: String| SolverError::Config {
            field: field_name.to_string(),
            message,
        };
        match spec {
            FieldSpec::Constant(c) => {
                if !c.is_finite() {
                    return Err(bad("non-finite constant".into()));
                }
                Ok(Field::constant(*c))
            }
            FieldSpec::Formula(src) => Field::from_expr(src).map_err(|e| bad(e.to_string())),
            FieldSpec::Detailed {
                expr,
                grid,
                times,
                frames,
                support_end,
            } => {
                let data = match (expr, grid, times, frames) {
                    (Some(src), None, None, None) => {
                        FieldData::Expr(Expr::parse(src).map_err(|e| bad(e.to_string()))?)
                    }
                    (None, Some(values), None, None) => {
                        if values.iter().any(|v| !v.is_finite()) {
                            return Err(bad("grid contains non-finite values".into()));
                        }
                        FieldData::Grid(values.clone())
                    }
                    (None, None, Some(times), Some(frames)) => {
                        if times.len() != frames.len() || times.is_empty() {
                            return Err(bad("times and frames must pair up".into()));
                        }
                        if times.windows(2).any(|w| w[1] <= w[0]) {
                            return Err(bad("frame times must be strictly increasing".into()));
                        }
                        FieldData::TimeGrid {
                            times: times.clone(),
                            frames: frames.clone(),
                        }
                    }
                    _ => {
                        return Err(bad(
                            "give exactly one of `expr`, `grid`, or `times`+`frames`".into(),
                        ))
                    }
                };
                Ok(Field {
                    data,
                    support_end: *support_end,
                })
            }
        }
    }

    pub fn support_end(&self) -> Option<f64> {
        self.support_end
    }

    fn supported_at(&self, t: f64) -> bool {
        self.support_end.is_none_or(|s| t <= s + 1e-14)
    }

    /// Point evaluation; `None` for gridded data (which is mesh-tied).
    pub fn eval_point(&self, x: f64, xy: f64, t: f64) -> Option<f64> {
        if !self.supported_at(t) {
            return Some(0.0);
        }
        match &self.data {
            FieldData::Constant(c) => Some(*c),
            FieldData::Expr(e) => Some(e.eval(x, xy, t)),
            _ => None,
        }
    }

    /// Evaluate on mesh nodes at time `t`. `coords` holds (x, y) per node.
    pub fn on_nodes(&self, coords: &[(f64, f64)], t: f64) -> Result<Vec<f64>> {
        if !self.supported_at(t) {
            return Ok(vec![0.0; coords.len()]);
        }
        match &self.data {
            FieldData::Constant(c) => Ok(vec![*c; coords.len()]),
            FieldData::Expr(e) => {
                let mut out = Vec::with_capacity(coords.len());
                for &(x, xy) in coords {
                    let v = e.eval(x, xy, t);
                    if !v.is_finite() {
                        return Err(SolverError::NonFiniteEval { x, xy, t, y: 0.0 });
                    }
                    out.push(v);
                }
                Ok(out)
            }
            FieldData::Grid(values) => {
                if values.len() != coords.len() {
                    return Err(SolverError::Shape(format!(
                        "gridded field has {} values but the mesh has {} nodes",
                        values.len(),
                        coords.len()
                    )));
                }
                Ok(values.clone())
            }
            FieldData::TimeGrid { times, frames } => {
                // piecewise constant in t, last frame held
                let idx = times.iter().rposition(|&s| s <= t + 1e-14).unwrap_or(0);
                let values = &frames[idx];
                if values.len() != coords.len() {
                    return Err(SolverError::Shape(format!(
                        "gridded field frame has {} values but the mesh has {} nodes",
                        values.len(),
                        coords.len()
                    )));
                }
                Ok(values.clone())
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match &self.data {
            FieldData::Constant(_) => true,
            FieldData::Expr(e) => e.is_constant(),
            _ => false,
        }
    }

    pub fn is_time_independent(&self) -> bool {
        match &self.data {
            FieldData::Constant(_) | FieldData::Grid(_) => self.support_end.is_none(),
            FieldData::Expr(e) => e.is_time_independent() && self.support_end.is_none(),
            FieldData::TimeGrid { .. } => false,
        }
    }

    /// Identically zero, recognizable without sampling.
    pub fn is_zero(&self) -> bool {
        matches!(&self.data, FieldData::Constant(c) if *c == 0.0)
            || matches!(&self.data, FieldData::Grid(g) if g.iter().all(|&v| v == 0.0))
    }

    /// Constant value if the field is a plain constant.
    pub fn as_constant(&self) -> Option<f64> {
        match &self.data {
            FieldData::Constant(c) => Some(*c),
            FieldData::Expr(e) if e.is_constant() => Some(e.eval(0.0, 0.0, 0.0)),
            _ => None,
        }
    }

    /// (inf, sup) over a sample lattice. Gridded data ignores the lattice
    /// and scans its stored values.
    pub fn bounds_on_lattice(&self, lattice: &SampleLattice) -> Result<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        match &self.data {
            FieldData::Grid(values) => {
                for &v in values {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            FieldData::TimeGrid { frames, .. } => {
                for frame in frames {
                    for &v in frame {
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
            }
            _ => {
                for (x, xy, t) in lattice.points() {
                    let v = self.eval_point(x, xy, t).unwrap();
                    if !v.is_finite() {
                        return Err(SolverError::NonFiniteEval { x, xy, t, y: 0.0 });
                    }
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
        }
        Ok((lo, hi))
    }
}

/// Rectangular sample lattice over space and time used by assumption checks
/// and coefficient-bound estimation.
#[derive(Debug, Clone)]
pub struct SampleLattice {
    pub x_max: [f64; 2],
    pub x_samples: usize,
    pub t_max: f64,
    pub t_samples: usize,
}

impl SampleLattice {
    pub fn new(x_max: [f64; 2], x_samples: usize, t_max: f64, t_samples: usize) -> Self {
        SampleLattice {
            x_max,
            x_samples: x_samples.max(2),
            t_max,
            t_samples: t_samples.max(2),
        }
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let nx = self.x_samples;
        let ny = if self.x_max[1] > 0.0 { self.x_samples } else { 1 };
        let nt = self.t_samples;
        (0..nt).flat_map(move |it| {
            let t = self.t_max * it as f64 / (nt - 1) as f64;
            (0..ny).flat_map(move |iy| {
                let xy = if ny == 1 {
                    0.0
                } else {
                    self.x_max[1] * iy as f64 / (ny - 1) as f64
                };
                (0..nx).map(move |ix| {
                    let x = self.x_max[0] * ix as f64 / (nx - 1) as f64;
                    (x, xy, t)
                })
            })
        })
    }
}
