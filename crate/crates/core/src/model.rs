//! Continuous problem data: domain, nonlinearity families, constraint sets,
//! and numeric verification of the structural assumptions on `f`.
//!
//! Three built-in nonlinearity families ship with closed-form growth
//! constants (envelope threshold, lower envelope ratio, envelope function):
//! odd-degree polynomials with a positive leading coefficient, the scaled
//! exponential `η(x,t)(e^y - 1)`, and the cubic-plus-sine family
//! `η(x,t)(y³ + A sin y)`. Custom nonlinearities are supported through value
//! and derivative callbacks but must declare their constants, which are then
//! re-verified on a sample grid like everything else.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::field::{Field, SampleLattice};

/// Growth envelope `f̂` that brackets `|f|` for large `|y|`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Envelope {
    /// c · y^p with odd p.
    PowerLaw { c: f64, power: u32 },
    /// c · (e^y − 1).
    ExpShift { c: f64 },
}

impl Envelope {
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            Envelope::PowerLaw { c, power } => c * y.powi(*power as i32),
            Envelope::ExpShift { c } => c * (y.exp() - 1.0),
        }
    }

    pub fn deriv(&self, y: f64) -> f64 {
        match self {
            Envelope::PowerLaw { c, power } => c * *power as f64 * y.powi(*power as i32 - 1),
            Envelope::ExpShift { c } => c * y.exp(),
        }
    }
}

/// Structural constants attached to a nonlinearity.
///
/// `envelope_threshold` is the |y| level beyond which the envelope bounds
/// hold, `envelope_lower_ratio` the guaranteed fraction of the envelope from
/// below, `local_derivative_bound` the max of |∂f/∂y| for |y| below the
/// threshold (also the global lower-bound constant for ∂f/∂y),
/// `monotone_radius` the radius around 0 where ∂f/∂y ≥ 0, and `sign_stable`
/// an interval (ρ⁻, ρ⁺) around 0 on which `f` keeps the sign of `y`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonlinearityConstants {
    pub envelope_threshold: f64,
    pub envelope_lower_ratio: f64,
    pub envelope: Envelope,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_derivative_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monotone_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign_stable: Option<(f64, f64)>,
}

type ScalarFn = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;

/// The reaction term families.
#[derive(Clone)]
pub enum Family {
    /// Σ_{k=1..2m+1} a_k(x,t) y^k, leading coefficient bounded below by a
    /// positive constant. `coeffs[k-1]` is a_k.
    Polynomial { coeffs: Vec<Field> },
    /// η(x,t) (e^y − 1) with η ≥ δ₀ > 0.
    ExponentialScaled { eta: Field },
    /// η(x,t) (y³ + amplitude · sin y) with η ≥ δ₀ > 0.
    CubicSine { eta: Field, amplitude: f64 },
    /// User callbacks (x, x₂, t, y) ↦ value / ∂value/∂y.
    Custom { value: ScalarFn, deriv: ScalarFn },
}

impl fmt::Debug for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Polynomial { coeffs } => {
                write!(f, "Polynomial(degree {})", coeffs.len())
            }
            Family::ExponentialScaled { .. } => write!(f, "ExponentialScaled"),
            Family::CubicSine { amplitude, .. } => write!(f, "CubicSine(amplitude {amplitude})"),
            Family::Custom { .. } => write!(f, "Custom"),
        }
    }
}

/// A reaction nonlinearity: a family plus (optional) declared constants.
#[derive(Debug, Clone)]
pub struct Nonlinearity {
    pub family: Family,
    pub constants: Option<NonlinearityConstants>,
}

impl Nonlinearity {
    pub fn new(family: Family) -> Nonlinearity {
        Nonlinearity {
            family,
            constants: None,
        }
    }

    pub fn with_constants(mut self, constants: NonlinearityConstants) -> Nonlinearity {
        self.constants = Some(constants);
        self
    }

    /// Cubic with roots 0, r1, r2: y (y − r1)(y − r2), written as a
    /// polynomial family so the closed-form constants apply.
    pub fn schloegl(r1: f64, r2: f64) -> Nonlinearity {
        let a1 = r1 * r2;
        let a2 = -(r1 + r2);
        Nonlinearity::new(Family::Polynomial {
            coeffs: vec![
                Field::constant(a1),
                Field::constant(a2),
                Field::constant(1.0),
            ],
        })
    }

    /// Point evaluation of f(x, x₂, t, y).
    pub fn value(&self, x: f64, xy: f64, t: f64, y: f64) -> Result<f64> {
        let v = match &self.family {
            Family::Polynomial { coeffs } => {
                let mut acc = 0.0;
                let mut yp = 1.0;
                for c in coeffs {
                    yp *= y;
                    let a = c.eval_point(x, xy, t).ok_or_else(grid_coeff_err)?;
                    acc += a * yp;
                }
                acc
            }
            Family::ExponentialScaled { eta } => {
                eta.eval_point(x, xy, t).ok_or_else(grid_coeff_err)? * (y.exp() - 1.0)
            }
            Family::CubicSine { eta, amplitude } => {
                eta.eval_point(x, xy, t).ok_or_else(grid_coeff_err)?
                    * (y * y * y + amplitude * y.sin())
            }
            Family::Custom { value, .. } => value(x, xy, t, y),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(SolverError::NonFiniteEval { x, xy, t, y })
        }
    }

    /// Point evaluation of ∂f/∂y.
    pub fn deriv(&self, x: f64, xy: f64, t: f64, y: f64) -> Result<f64> {
        let v = match &self.family {
            Family::Polynomial { coeffs } => {
                let mut acc = 0.0;
                let mut yp = 1.0;
                for (k, c) in coeffs.iter().enumerate() {
                    let a = c.eval_point(x, xy, t).ok_or_else(grid_coeff_err)?;
                    acc += (k + 1) as f64 * a * yp;
                    yp *= y;
                }
                acc
            }
            Family::ExponentialScaled { eta } => {
                eta.eval_point(x, xy, t).ok_or_else(grid_coeff_err)? * y.exp()
            }
            Family::CubicSine { eta, amplitude } => {
                eta.eval_point(x, xy, t).ok_or_else(grid_coeff_err)?
                    * (3.0 * y * y + amplitude * y.cos())
            }
            Family::Custom { deriv, .. } => deriv(x, xy, t, y),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(SolverError::NonFiniteEval { x, xy, t, y })
        }
    }

    /// Freeze the coefficient fields at the given nodes and time, so the
    /// time steppers evaluate pure arithmetic per Newton sweep.
    pub fn bind(&self, coords: &[(f64, f64)], t: f64) -> Result<BoundNonlinearity> {
        Ok(match &self.family {
            Family::Polynomial { coeffs } => BoundNonlinearity::Poly {
                coeff_rows: coeffs
                    .iter()
                    .map(|c| c.on_nodes(coords, t))
                    .collect::<Result<Vec<_>>>()?,
            },
            Family::ExponentialScaled { eta } => BoundNonlinearity::Exp {
                eta: eta.on_nodes(coords, t)?,
            },
            Family::CubicSine { eta, amplitude } => BoundNonlinearity::CubicSine {
                eta: eta.on_nodes(coords, t)?,
                amplitude: *amplitude,
            },
            Family::Custom { value, deriv } => BoundNonlinearity::Custom {
                value: value.clone(),
                deriv: deriv.clone(),
                coords: coords.to_vec(),
                t,
            },
        })
    }

    /// Closed-form constants for the built-in families with constant
    /// coefficients; errors for `Custom`.
    pub fn builtin_constants(&self) -> Result<NonlinearityConstants> {
        let require_const = |f: &Field, what: &str| {
            f.as_constant().ok_or_else(|| {
                SolverError::Precondition(format!(
                    "{what} must be constant for closed-form constants; use the sampled variant"
                ))
            })
        };
        match &self.family {
            Family::Polynomial { coeffs } => {
                let values: Vec<f64> = coeffs
                    .iter()
                    .map(|c| require_const(c, "polynomial coefficient"))
                    .collect::<Result<Vec<_>>>()?;
                polynomial_constants(&values.iter().map(|&v| (v, v)).collect::<Vec<_>>())
            }
            Family::ExponentialScaled { eta } => {
                let e = require_const(eta, "eta")?;
                exponential_constants(e, e)
            }
            Family::CubicSine { eta, amplitude } => {
                let e = require_const(eta, "eta")?;
                cubic_sine_constants(e, e, *amplitude)
            }
            Family::Custom { .. } => Err(SolverError::UnsupportedFamily),
        }
    }

    /// Same as [`builtin_constants`](Self::builtin_constants) but with
    /// coefficient bounds taken over a sample lattice, for non-constant
    /// coefficient fields.
    pub fn builtin_constants_on(&self, lattice: &SampleLattice) -> Result<NonlinearityConstants> {
        match &self.family {
            Family::Polynomial { coeffs } => {
                let bounds = coeffs
                    .iter()
                    .map(|c| c.bounds_on_lattice(lattice))
                    .collect::<Result<Vec<_>>>()?;
                polynomial_constants(&bounds)
            }
            Family::ExponentialScaled { eta } => {
                let (lo, hi) = eta.bounds_on_lattice(lattice)?;
                exponential_constants(lo, hi)
            }
            Family::CubicSine { eta, amplitude } => {
                let (lo, hi) = eta.bounds_on_lattice(lattice)?;
                cubic_sine_constants(lo, hi, *amplitude)
            }
            Family::Custom { .. } => Err(SolverError::UnsupportedFamily),
        }
    }

    /// Declared constants if set, otherwise the built-in closed form.
    pub fn resolve_constants(&self, lattice: &SampleLattice) -> Result<NonlinearityConstants> {
        if let Some(c) = &self.constants {
            return Ok(c.clone());
        }
        match self.builtin_constants() {
            Ok(c) => Ok(c),
            Err(SolverError::Precondition(_)) => self.builtin_constants_on(lattice),
            Err(e) => Err(e),
        }
    }
}

fn grid_coeff_err() -> SolverError {
    SolverError::InvalidCoefficient(
        "gridded coefficient fields cannot be evaluated off-mesh; use an expression".into(),
    )
}

/// Coefficient fields frozen at a node set and time.
pub enum BoundNonlinearity {
    Poly { coeff_rows: Vec<Vec<f64>> },
    Exp { eta: Vec<f64> },
    CubicSine { eta: Vec<f64>, amplitude: f64 },
    Custom {
        value: ScalarFn,
        deriv: ScalarFn,
        coords: Vec<(f64, f64)>,
        t: f64,
    },
}

impl BoundNonlinearity {
    #[inline]
    pub fn value(&self, i: usize, y: f64) -> f64 {
        match self {
            BoundNonlinearity::Poly { coeff_rows } => {
                let mut acc = 0.0;
                let mut yp = 1.0;
                for row in coeff_rows {
                    yp *= y;
                    acc += row[i] * yp;
                }
                acc
            }
            BoundNonlinearity::Exp { eta } => eta[i] * (y.exp() - 1.0),
            BoundNonlinearity::CubicSine { eta, amplitude } => {
                eta[i] * (y * y * y + amplitude * y.sin())
            }
            BoundNonlinearity::Custom {
                value, coords, t, ..
            } => {
                let (x, xy) = coords[i];
                value(x, xy, *t, y)
            }
        }
    }

    #[inline]
    pub fn deriv(&self, i: usize, y: f64) -> f64 {
        match self {
            BoundNonlinearity::Poly { coeff_rows } => {
                let mut acc = 0.0;
                let mut yp = 1.0;
                for (k, row) in coeff_rows.iter().enumerate() {
                    acc += (k + 1) as f64 * row[i] * yp;
                    yp *= y;
                }
                acc
            }
            BoundNonlinearity::Exp { eta } => eta[i] * y.exp(),
            BoundNonlinearity::CubicSine { eta, amplitude } => {
                eta[i] * (3.0 * y * y + amplitude * y.cos())
            }
            BoundNonlinearity::Custom {
                deriv, coords, t, ..
            } => {
                let (x, xy) = coords[i];
                deriv(x, xy, *t, y)
            }
        }
    }
}

fn polynomial_constants(bounds: &[(f64, f64)]) -> Result<NonlinearityConstants> {
    if bounds.is_empty() || bounds.len().is_multiple_of(2) {
        return Err(SolverError::InvalidCoefficient(
            "polynomial family needs an odd number of coefficients a_1..a_{2m+1}".into(),
        ));
    }
    let m = (bounds.len() - 1) / 2;
    let delta0 = bounds.last().unwrap().0;
    if delta0 <= 0.0 {
        return Err(SolverError::InvalidCoefficient(format!(
            "leading polynomial coefficient must be bounded below by a positive constant (inf = {delta0})"
        )));
    }
    let k_sup = bounds
        .iter()
        .map(|&(lo, hi)| lo.abs().max(hi.abs()))
        .fold(0.0f64, f64::max);
    let degree = (2 * m + 1) as f64;
    Ok(NonlinearityConstants {
        envelope_threshold: 1.0f64.max(4.0 * m as f64 * k_sup / delta0),
        envelope_lower_ratio: delta0 / (2.0 * degree * k_sup),
        envelope: Envelope::PowerLaw {
            c: degree * k_sup,
            power: (2 * m + 1) as u32,
        },
        local_derivative_bound: None,
        monotone_radius: None,
        sign_stable: None,
    })
}

fn exponential_constants(eta_inf: f64, eta_sup: f64) -> Result<NonlinearityConstants> {
    if eta_inf <= 0.0 {
        return Err(SolverError::InvalidCoefficient(format!(
            "eta must be bounded below by a positive constant (inf = {eta_inf})"
        )));
    }
    Ok(NonlinearityConstants {
        envelope_threshold: 0.0,
        envelope_lower_ratio: eta_inf / eta_sup,
        envelope: Envelope::ExpShift { c: eta_sup },
        local_derivative_bound: None,
        monotone_radius: None,
        sign_stable: None,
    })
}

fn cubic_sine_constants(eta_inf: f64, eta_sup: f64, amplitude: f64) -> Result<NonlinearityConstants> {
    if eta_inf <= 0.0 {
        return Err(SolverError::InvalidCoefficient(format!(
            "eta must be bounded below by a positive constant (inf = {eta_inf})"
        )));
    }
    if amplitude < 0.0 {
        return Err(SolverError::InvalidCoefficient(
            "sine amplitude must be nonnegative".into(),
        ));
    }
    // 10 sqrt(10/3) at the reference amplitude 1000, scaled by the cube root
    // so that amplitude / threshold³ stays constant.
    let threshold = 10.0 * (10.0f64 / 3.0).sqrt() * (amplitude / 1000.0).powf(1.0 / 3.0);
    Ok(NonlinearityConstants {
        envelope_threshold: threshold,
        envelope_lower_ratio: eta_inf / (4.0 * eta_sup),
        envelope: Envelope::PowerLaw {
            c: 2.0 * eta_sup,
            power: 3,
        },
        local_derivative_bound: None,
        monotone_radius: None,
        sign_stable: None,
    })
}

// ---------------------------------------------------------------------------
// Assumption checking
// ---------------------------------------------------------------------------

/// Sampling region for assumption checks: a y-interval crossed with a
/// space-time lattice.
#[derive(Debug, Clone)]
pub struct SampleBox {
    pub y_min: f64,
    pub y_max: f64,
    pub y_samples: usize,
    pub lattice: SampleLattice,
}

impl SampleBox {
    /// Symmetric y-range with the default 64-point resolution per axis.
    pub fn symmetric(y_half: f64, extents: [f64; 2]) -> SampleBox {
        SampleBox {
            y_min: -y_half,
            y_max: y_half,
            y_samples: 64,
            lattice: SampleLattice::new(extents, 64, 1.0, 8),
        }
    }

    fn y_grid(&self, threshold: f64) -> Vec<f64> {
        let n = self.y_samples.max(3);
        let mut ys: Vec<f64> = (0..n)
            .map(|i| self.y_min + (self.y_max - self.y_min) * i as f64 / (n - 1) as f64)
            .collect();
        ys.push(0.0);
        if threshold > 0.0 {
            ys.push(threshold);
            ys.push(-threshold);
        }
        ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ys.dedup();
        ys
    }
}

/// Identifier of one structural assumption on `f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckId {
    /// f(x,t,0) = 0.
    VanishesAtZero,
    /// Envelope bounds, sign agreement, and monotonicity beyond the threshold.
    EnvelopeBounds,
    /// ∂f/∂y is bounded on |y| ≤ threshold (the computed local bound).
    DerivativeLocallyBounded,
    /// ∂f/∂y ≥ −local bound globally.
    DerivativeLowerBound,
    /// ∂f/∂y ≥ 0 for |y| below the monotone radius.
    MonotoneNearZero,
}

/// A grid point witnessing a violated assumption.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Witness {
    pub x: f64,
    pub xy: f64,
    pub t: f64,
    pub y: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub id: CheckId,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

/// Constants resolved (or recomputed) during a check run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedConstants {
    pub envelope_threshold: f64,
    pub envelope_lower_ratio: f64,
    /// max |∂f/∂y| over the sample with |y| ≤ envelope_threshold.
    pub local_derivative_bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monotone_radius: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
    pub constants: ResolvedConstants,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, id: CheckId) -> &AssumptionCheck {
        self.checks.iter().find(|c| c.id == id).unwrap()
    }
}

const REL_TOL: f64 = 1e-12;

/// Verify the structural assumptions on `f` over a sample box and compute
/// the derived constants. Declared constants are trusted as the candidate
/// values but re-verified pointwise.
pub fn check_assumptions(f: &Nonlinearity, sample: &SampleBox) -> Result<AssumptionReport> {
    let constants = f.resolve_constants(&sample.lattice)?;
    let threshold = constants.envelope_threshold;
    if threshold > 0.0 && (sample.y_min > -2.0 * threshold || sample.y_max < 2.0 * threshold) {
        return Err(SolverError::Precondition(format!(
            "sample box [{}, {}] must cover [-2*{t}, 2*{t}]",
            sample.y_min,
            sample.y_max,
            t = threshold
        )));
    }

    let ys = sample.y_grid(threshold);
    let xt: Vec<(f64, f64, f64)> = sample.lattice.points().collect();

    let mut zero_witness: Option<Witness> = None;
    let mut envelope_witness: Option<Witness> = None;
    let mut lower_witness: Option<Witness> = None;
    let mut monotone_witness: Option<Witness> = None;
    let mut local_bound: f64 = 0.0;

    // First pass: local derivative bound on |y| <= threshold (including the
    // origin when the threshold is 0).
    for &(x, xy, t) in &xt {
        for &y in ys.iter().filter(|y| y.abs() <= threshold + REL_TOL) {
            local_bound = local_bound.max(f.deriv(x, xy, t, y)?.abs());
        }
        if threshold == 0.0 {
            local_bound = local_bound.max(f.deriv(x, xy, t, 0.0)?.abs());
        }
    }
    if !local_bound.is_finite() {
        return Err(SolverError::Numeric(
            "derivative bound is not finite on the sample".into(),
        ));
    }

    // Second pass: pointwise conditions.
    let mut min_bad_abs_y = f64::INFINITY; // smallest |y| where the derivative dips negative
    for &(x, xy, t) in &xt {
        let f0 = f.value(x, xy, t, 0.0)?;
        if f0.abs() > REL_TOL && zero_witness.is_none() {
            zero_witness = Some(Witness {
                x,
                xy,
                t,
                y: 0.0,
                detail: format!("f(x,t,0) = {f0:.3e}"),
            });
        }
        for &y in &ys {
            let val = f.value(x, xy, t, y)?;
            let der = f.deriv(x, xy, t, y)?;

            if der < -1e-9 && y.abs() < min_bad_abs_y {
                min_bad_abs_y = y.abs();
            }
            if der < -local_bound * (1.0 + REL_TOL) - REL_TOL && lower_witness.is_none() {
                lower_witness = Some(Witness {
                    x,
                    xy,
                    t,
                    y,
                    detail: format!("df/dy = {der:.6e} < -{local_bound:.6e}"),
                });
            }

            if y.abs() >= threshold && y != 0.0 && envelope_witness.is_none() {
                let env = constants.envelope.eval(y);
                let env_d = constants.envelope.deriv(y);
                let lo = constants.envelope_lower_ratio * env.abs();
                let slack = REL_TOL * env.abs().max(1.0);
                let detail = if val.abs() < lo - slack {
                    Some(format!(
                        "|f| = {:.6e} below ratio*envelope = {:.6e}",
                        val.abs(),
                        lo
                    ))
                } else if val.abs() > env.abs() + slack {
                    Some(format!(
                        "|f| = {:.6e} above envelope = {:.6e}",
                        val.abs(),
                        env.abs()
                    ))
                } else if val.signum() * y.signum() < 0.0 && val != 0.0 {
                    Some(format!("sign(f) = {} but sign(y) = {}", val.signum(), y.signum()))
                } else if env.signum() * y.signum() < 0.0 && env != 0.0 {
                    Some(format!(
                        "sign(envelope) = {} but sign(y) = {}",
                        env.signum(),
                        y.signum()
                    ))
                } else if env_d < -REL_TOL {
                    Some(format!("envelope derivative {env_d:.3e} negative"))
                } else if der < -REL_TOL * local_bound.max(1.0) {
                    Some(format!("df/dy = {der:.6e} negative beyond the threshold"))
                } else {
                    None
                };
                if let Some(detail) = detail {
                    envelope_witness = Some(Witness { x, xy, t, y, detail });
                }
            }
        }
    }

    // Monotone radius: verify the declared one, or compute the largest
    // radius supported by the sample.
    let declared_radius = constants.monotone_radius;
    let monotone_radius = match declared_radius {
        Some(r) => {
            for &(x, xy, t) in &xt {
                for &y in ys.iter().filter(|y| y.abs() < r) {
                    let der = f.deriv(x, xy, t, y)?;
                    if der < -REL_TOL && monotone_witness.is_none() {
                        monotone_witness = Some(Witness {
                            x,
                            xy,
                            t,
                            y,
                            detail: format!("df/dy = {der:.6e} inside declared radius {r}"),
                        });
                    }
                }
            }
            Some(r)
        }
        None => {
            let r = min_bad_abs_y;
            if r.is_infinite() {
                // monotone on the whole sampled range; cap by the threshold
                if threshold > 0.0 {
                    Some(threshold * (1.0 - 1e-9))
                } else {
                    None
                }
            } else if r > 0.0 && threshold > 0.0 {
                // the coarse grid brackets the first sign dip; rescan the
                // bracket at 200x resolution so the radius is not optimistic
                let spacing = (sample.y_max - sample.y_min) / sample.y_samples.max(2) as f64;
                let lo = (r - spacing).max(0.0);
                let mut refined = r;
                'refine: for j in 0..=200 {
                    let y_abs = lo + (r - lo) * j as f64 / 200.0;
                    for y in [y_abs, -y_abs] {
                        for &(x, xy, t) in &xt {
                            if f.deriv(x, xy, t, y)? < -1e-9 {
                                refined = y_abs;
                                break 'refine;
                            }
                        }
                    }
                }
                if refined > 0.0 {
                    Some(refined.min(threshold * (1.0 - 1e-9)))
                } else {
                    None
                }
            } else {
                None
            }
        }
    };

    let checks = vec![
        AssumptionCheck {
            id: CheckId::VanishesAtZero,
            passed: zero_witness.is_none(),
            witness: zero_witness,
        },
        AssumptionCheck {
            id: CheckId::EnvelopeBounds,
            passed: envelope_witness.is_none(),
            witness: envelope_witness,
        },
        AssumptionCheck {
            id: CheckId::DerivativeLocallyBounded,
            passed: local_bound.is_finite(),
            witness: None,
        },
        AssumptionCheck {
            id: CheckId::DerivativeLowerBound,
            passed: lower_witness.is_none(),
            witness: lower_witness,
        },
        AssumptionCheck {
            id: CheckId::MonotoneNearZero,
            passed: monotone_witness.is_none(),
            witness: monotone_witness,
        },
    ];

    Ok(AssumptionReport {
        checks,
        constants: ResolvedConstants {
            envelope_threshold: threshold,
            envelope_lower_ratio: constants.envelope_lower_ratio,
            local_derivative_bound: local_bound,
            monotone_radius,
        },
    })
}

// ---------------------------------------------------------------------------
// Problem data
// ---------------------------------------------------------------------------

/// Admissible pointwise-in-time control set K.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintSet {
    /// L²(ω) ball of radius gamma.
    Ball { gamma: f64 },
    /// Pointwise box alpha ≤ u ≤ beta with alpha < 0 < beta.
    Box { alpha: f64, beta: f64 },
}

impl ConstraintSet {
    pub fn validate(&self) -> Result<()> {
        match self {
            ConstraintSet::Ball { gamma } => {
                if *gamma <= 0.0 {
                    return Err(SolverError::Config {
                        field: "constraints.gamma".into(),
                        message: "ball radius must be positive".into(),
                    });
                }
            }
            ConstraintSet::Box { alpha, beta } => {
                if !(*alpha < 0.0 && 0.0 < *beta) {
                    return Err(SolverError::Config {
                        field: "constraints".into(),
                        message: format!("box must satisfy alpha < 0 < beta, got [{alpha}, {beta}]"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Spatial domain: an interval or an axis-aligned rectangle.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Interval { length: f64 },
    Rectangle { lx: f64, ly: f64 },
}

impl Domain {
    pub fn extents(&self) -> [f64; 2] {
        match self {
            Domain::Interval { length } => [*length, 0.0],
            Domain::Rectangle { lx, ly } => [*lx, *ly],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Rectangle { .. } => 2,
        }
    }
}

/// Control region: an axis-aligned sub-box (nodes whose coordinates fall
/// inside) or an explicit node index mask.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OmegaSpec {
    Box { min: Vec<f64>, max: Vec<f64> },
    Mask { nodes: Vec<usize> },
}

/// The continuous control problem: domain, coefficients, data, nonlinearity,
/// sparsity weight, control region, and constraint set.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub domain: Domain,
    pub a: Field,
    pub g: Field,
    pub y0: Field,
    pub yd: Field,
    pub nonlinearity: Nonlinearity,
    pub kappa: f64,
    pub omega: OmegaSpec,
    pub constraints: ConstraintSet,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kappa <= 0.0 || self.kappa.is_nan() {
            return Err(SolverError::Config {
                field: "kappa".into(),
                message: "sparsity weight must be positive".into(),
            });
        }
        self.constraints.validate()?;
        if !self.yd.is_zero() && self.yd.support_end().is_none() && !self.yd.is_time_independent() {
            // time-varying target with no declared support: ambiguous tails
            return Err(SolverError::Config {
                field: "yd".into(),
                message: "time-dependent target must declare support_end".into(),
            });
        }
        if !self.yd.is_zero() && self.yd.support_end().is_none() && self.yd.is_time_independent() {
            return Err(SolverError::Config {
                field: "yd".into(),
                message:
                    "a nonzero target must declare support_end (it must decay on the infinite horizon)"
                        .into(),
            });
        }
        Ok(())
    }

    /// Declared end of the target's temporal support (0 for a zero target).
    pub fn yd_support_end(&self) -> f64 {
        if self.yd.is_zero() {
            0.0
        } else {
            self.yd.support_end().unwrap_or(0.0)
        }
    }

    /// A sample box sized from the declared constants (or a default span).
    pub fn default_sample_box(&self) -> SampleBox {
        let span = match self
            .nonlinearity
            .constants
            .as_ref()
            .map(|c| c.envelope_threshold)
            .or_else(|| {
                self.nonlinearity
                    .builtin_constants()
                    .ok()
                    .map(|c| c.envelope_threshold)
            }) {
            Some(m) if m > 0.0 => 2.5 * m,
            _ => 10.0,
        };
        SampleBox::symmetric(span, self.domain.extents())
    }
}
