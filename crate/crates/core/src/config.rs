//! Run configuration: the JSON document consumed by the CLI and the browser
//! demo, and its compilation into solver objects.

use serde::{Deserialize, Serialize};

use crate::discretize::Mesh;
use crate::error::{Result, SolverError};
use crate::field::{Field, FieldSpec};
use crate::horizon::{HorizonSchedule, StoppingRule};
use crate::model::{
    ConstraintSet, Domain, Family, Nonlinearity, NonlinearityConstants, OmegaSpec, ProblemSpec,
    SampleBox,
};
use crate::optimize::{SolveOptions, StepRule};

fn config_err(field: &str, message: impl Into<String>) -> SolverError {
    SolverError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Reaction-term description in a config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NonlinearityConfig {
    /// Σ a_k y^k with the coefficient list a_1 .. a_{2m+1}.
    Polynomial { coefficients: Vec<FieldSpec> },
    /// η (e^y − 1).
    Exponential { eta: FieldSpec },
    /// η (y³ + amplitude sin y).
    CubicSine { eta: FieldSpec, amplitude: f64 },
    /// Cubic with roots 0, r1, r2 (sugar for the polynomial family with a
    /// sign-stability interval attached when f'(0) > 0).
    Schloegl { roots: [f64; 2] },
}

impl NonlinearityConfig {
    pub fn compile(&self, constants: Option<&NonlinearityConstants>) -> Result<Nonlinearity> {
        let mut nl = match self {
            NonlinearityConfig::Polynomial { coefficients } => {
                if coefficients.is_empty() || coefficients.len() % 2 == 0 {
                    return Err(config_err(
                        "problem.nonlinearity.coefficients",
                        "need an odd number of coefficients a_1..a_{2m+1}",
                    ));
                }
                let coeffs = coefficients
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        Field::compile(c, &format!("problem.nonlinearity.coefficients[{i}]"))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Nonlinearity::new(Family::Polynomial { coeffs })
            }
            NonlinearityConfig::Exponential { eta } => {
                Nonlinearity::new(Family::ExponentialScaled {
                    eta: Field::compile(eta, "problem.nonlinearity.eta")?,
                })
            }
            NonlinearityConfig::CubicSine { eta, amplitude } => {
                Nonlinearity::new(Family::CubicSine {
                    eta: Field::compile(eta, "problem.nonlinearity.eta")?,
                    amplitude: *amplitude,
                })
            }
            NonlinearityConfig::Schloegl { roots } => {
                let [r1, r2] = *roots;
                let mut nl = Nonlinearity::schloegl(r1, r2);
                if r1 * r2 > 0.0 {
                    // f'(0) > 0: attach the sign-stable interval around 0
                    let pos = [r1, r2].into_iter().filter(|&r| r > 0.0).fold(
                        f64::INFINITY,
                        f64::min,
                    );
                    let neg = [r1, r2]
                        .into_iter()
                        .filter(|&r| r < 0.0)
                        .fold(f64::NEG_INFINITY, f64::max);
                    let mut c = nl.builtin_constants()?;
                    c.sign_stable = Some((neg, pos));
                    nl.constants = Some(c);
                }
                nl
            }
        };
        if let Some(c) = constants {
            // user-declared constants override/augment the built-in ones
            let mut merged = c.clone();
            if let Some(existing) = &nl.constants {
                if merged.sign_stable.is_none() {
                    merged.sign_stable = existing.sign_stable;
                }
            }
            nl.constants = Some(merged);
        }
        Ok(nl)
    }
}

/// The continuous problem as written in a config file; compiles into
/// [`ProblemSpec`]. This is the JSON serialization of the problem data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub domain: Domain,
    pub a: FieldSpec,
    pub g: FieldSpec,
    pub y0: FieldSpec,
    pub yd: FieldSpec,
    pub nonlinearity: NonlinearityConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlinearity_constants: Option<NonlinearityConstants>,
    pub kappa: f64,
    pub omega: OmegaSpec,
    pub constraints: ConstraintSet,
}

impl ProblemConfig {
    pub fn compile(&self) -> Result<ProblemSpec> {
        let spec = ProblemSpec {
            domain: self.domain,
            a: Field::compile(&self.a, "problem.a")?,
            g: Field::compile(&self.g, "problem.g")?,
            y0: Field::compile(&self.y0, "problem.y0")?,
            yd: Field::compile(&self.yd, "problem.yd")?,
            nonlinearity: self
                .nonlinearity
                .compile(self.nonlinearity_constants.as_ref())?,
            kappa: self.kappa,
            omega: self.omega.clone(),
            constraints: self.constraints,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshConfig {
    /// Cells per axis: one entry for an interval, two for a rectangle.
    pub cells: Vec<usize>,
}

impl MeshConfig {
    pub fn compile(&self, domain: &Domain) -> Result<Mesh> {
        match (domain, self.cells.as_slice()) {
            (Domain::Interval { length }, [n]) => Mesh::interval(*length, *n),
            (Domain::Rectangle { lx, ly }, [nx, ny]) => Mesh::rectangle(*lx, *ly, *nx, *ny),
            _ => Err(config_err(
                "mesh.cells",
                format!(
                    "{} entries do not match a {}-dimensional domain",
                    self.cells.len(),
                    domain.dim()
                ),
            )),
        }
    }
}

fn default_max_outer() -> usize {
    4000
}
fn default_kkt_tol() -> f64 {
    1e-9
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(default = "default_max_outer")]
    pub max_outer_iters: usize,
    #[serde(default = "default_kkt_tol")]
    pub kkt_tol: f64,
    #[serde(default = "default_true")]
    pub restart: bool,
    /// Fixed initial step size; omit for pure backtracking.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_outer_iters: default_max_outer(),
            kkt_tol: default_kkt_tol(),
            restart: true,
            tau: None,
        }
    }
}

impl SolverConfig {
    pub fn compile(&self) -> SolveOptions {
        SolveOptions {
            step: match self.tau {
                Some(t) => StepRule::Fixed(t),
                None => StepRule::Backtracking,
            },
            max_outer_iters: self.max_outer_iters,
            kkt_tol: self.kkt_tol,
            restart: self.restart,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoppingConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "StoppingRule::default")]
    #[serde(flatten)]
    pub rule: StoppingRule,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        StoppingConfig {
            enabled: true,
            rule: StoppingRule::default(),
        }
    }
}

/// Sampling resolution for the assumption checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckConfig {
    /// Half-width of the sampled y interval; defaults to 2.5× the envelope
    /// threshold of the nonlinearity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_span: Option<f64>,
    #[serde(default = "default_samples")]
    pub y_samples: usize,
    #[serde(default = "default_samples")]
    pub x_samples: usize,
    #[serde(default = "default_t_samples")]
    pub t_samples: usize,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    /// Slack for the uncontrolled decay probe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_tolerance: Option<f64>,
}

fn default_samples() -> usize {
    64
}
fn default_t_samples() -> usize {
    8
}
fn default_t_max() -> f64 {
    1.0
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            y_span: None,
            y_samples: default_samples(),
            x_samples: default_samples(),
            t_samples: default_t_samples(),
            t_max: default_t_max(),
            decay_tolerance: None,
        }
    }
}

impl CheckConfig {
    pub fn sample_box(&self, spec: &ProblemSpec) -> SampleBox {
        let mut sb = match self.y_span {
            Some(span) => SampleBox::symmetric(span, spec.domain.extents()),
            None => spec.default_sample_box(),
        };
        sb.y_samples = self.y_samples;
        sb.lattice = crate::field::SampleLattice::new(
            spec.domain.extents(),
            self.x_samples,
            self.t_max,
            self.t_samples,
        );
        sb
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmitKind {
    Csv,
    Json,
    Svg,
}

fn default_emit() -> Vec<EmitKind> {
    vec![EmitKind::Csv, EmitKind::Json, EmitKind::Svg]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default = "default_emit")]
    pub emit: Vec<EmitKind>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: None,
            emit: default_emit(),
        }
    }
}

/// Top-level run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemConfig,
    pub mesh: MeshConfig,
    pub schedule: HorizonSchedule,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub stopping: StoppingConfig,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Everything compiled and validated, ready to run.
pub struct CompiledRun {
    pub spec: ProblemSpec,
    pub mesh: Mesh,
    pub schedule: HorizonSchedule,
    pub solver: SolveOptions,
    pub stopping: Option<StoppingRule>,
    pub check: CheckConfig,
    pub seed: u64,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        serde_json::from_str(text).map_err(|e| SolverError::Config {
            field: format!("line {}, column {}", e.line(), e.column()),
            message: e.to_string(),
        })
    }

    pub fn compile(&self) -> Result<CompiledRun> {
        let spec = self.problem.compile()?;
        let mesh = self.mesh.compile(&spec.domain)?;
        self.schedule.validate()?;
        let solver = self.solver.compile();
        solver.validate()?;
        Ok(CompiledRun {
            spec,
            mesh,
            schedule: self.schedule.clone(),
            solver,
            stopping: self.stopping.enabled.then(|| self.stopping.rule.clone()),
            check: self.check.clone(),
            seed: self.seed,
            output: self.output.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> &'static str {
        r#"{
            "problem": {
                "domain": {"kind": "interval", "length": 1.0},
                "a": 1.0,
                "g": 0.0,
                "y0": "0.1",
                "yd": {"expr": "0.3*sin(pi*x)", "support_end": 2.0},
                "nonlinearity": {"family": "schloegl", "roots": [0.25, 1.0]},
                "kappa": 0.05,
                "omega": {"kind": "box", "min": [0.25], "max": [0.75]},
                "constraints": {"kind": "box", "alpha": -2.0, "beta": 2.0}
            },
            "mesh": {"cells": [32]},
            "schedule": {"horizons": [4.0, 8.0], "dt": 0.05}
        }"#
    }

    #[test]
    fn minimal_config_compiles_with_defaults() {
        let cfg = RunConfig::parse(minimal_json()).unwrap();
        let run = cfg.compile().unwrap();
        assert_eq!(run.mesh.n_nodes(), 33);
        assert_eq!(run.solver.max_outer_iters, 4000);
        assert!(run.stopping.is_some());
        assert_eq!(run.seed, 0);
        // schloegl sugar attaches the stability interval
        let c = run.spec.nonlinearity.constants.as_ref().unwrap();
        assert_eq!(c.sign_stable, Some((f64::NEG_INFINITY, 0.25)));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = RunConfig::parse("{ not json").unwrap_err();
        match err {
            SolverError::Config { field, .. } => assert!(field.contains("line")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_box_constraint_is_named() {
        let text = minimal_json().replace(r#""alpha": -2.0"#, r#""alpha": 0.5"#);
        let cfg = RunConfig::parse(&text).unwrap();
        match cfg.compile() {
            Err(SolverError::Config { field, message }) => {
                assert_eq!(field, "constraints");
                assert!(message.contains("alpha < 0 < beta"), "{message}");
            }
            Err(other) => panic!("unexpected {other:?}"),
            Ok(_) => panic!("compile should fail"),
        }
    }

    #[test]
    fn mesh_dimension_mismatch_is_caught() {
        let text = minimal_json().replace(r#""cells": [32]"#, r#""cells": [8, 8]"#);
        let cfg = RunConfig::parse(&text).unwrap();
        assert!(matches!(cfg.compile(), Err(SolverError::Config { .. })));
    }

    #[test]
    fn problem_config_round_trips_via_json() {
        let cfg = RunConfig::parse(minimal_json()).unwrap();
        let json = serde_json::to_string(&cfg.problem).unwrap();
        let back: ProblemConfig = serde_json::from_str(&json).unwrap();
        let spec = back.compile().unwrap();
        assert_eq!(spec.kappa, 0.05);
    }
}
