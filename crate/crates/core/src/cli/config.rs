//! Experiment configuration: one JSON file per run.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::assemble::Form;
use crate::coeff::{
    make_constant, make_holder_bump, make_sinusoid, make_sobolev_perturbation, make_step, CoefficientField,
    LowerOrderData, ScalarFn, Smoothness,
};
use crate::grid::Grid;
use crate::oracle::{null_quadratic, Oracle1D, Quadratic};
use crate::regmeter::UniversalChoice;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandName {
    Solve,
    Theorem1,
    Theorem2,
    Convergence,
    Fundsol,
    Invariants,
}

impl CommandName {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandName::Solve => "solve",
            CommandName::Theorem1 => "theorem1",
            CommandName::Theorem2 => "theorem2",
            CommandName::Convergence => "convergence",
            CommandName::Fundsol => "fundsol",
            CommandName::Invariants => "invariants",
        }
    }
}

/// Coefficient family. `base` defaults to the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    Constant {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base: Option<Vec<Vec<f64>>>,
    },
    HolderBump {
        kappa: f64,
        alpha: f64,
        center: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base: Option<Vec<Vec<f64>>>,
    },
    SobolevPerturbation {
        kappa: f64,
        gamma: f64,
        center: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base: Option<Vec<Vec<f64>>>,
    },
    Sinusoid {
        kappa: f64,
        wavenumber: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base: Option<Vec<Vec<f64>>>,
    },
    Step {
        left: f64,
        right: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base: Option<Vec<Vec<f64>>>,
    },
}

impl Default for CoefficientSpec {
    fn default() -> Self {
        CoefficientSpec::Constant { base: None }
    }
}

fn matrix(dim: usize, rows: &Option<Vec<Vec<f64>>>) -> Result<DMatrix<f64>, ConfigError> {
    match rows {
        None => Ok(DMatrix::identity(dim, dim)),
        Some(rows) => {
            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                return Err(invalid(format!("base matrix must be {dim}x{dim}")));
            }
            if rows.iter().flatten().any(|v| !v.is_finite()) {
                return Err(invalid("base matrix entries must be finite"));
            }
            Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
        }
    }
}

impl CoefficientSpec {
    pub fn build(&self, dim: usize) -> Result<CoefficientField, ConfigError> {
        let field = match self {
            CoefficientSpec::Constant { base } => make_constant(matrix(dim, base)?),
            CoefficientSpec::HolderBump {
                kappa,
                alpha,
                center,
                base,
            } => make_holder_bump(dim, matrix(dim, base)?, *kappa, *alpha, center),
            CoefficientSpec::SobolevPerturbation {
                kappa,
                gamma,
                center,
                base,
            } => make_sobolev_perturbation(dim, matrix(dim, base)?, *kappa, *gamma, center),
            CoefficientSpec::Sinusoid {
                kappa,
                wavenumber,
                base,
            } => make_sinusoid(dim, matrix(dim, base)?, *kappa, *wavenumber),
            CoefficientSpec::Step { left, right, base } => make_step(dim, matrix(dim, base)?, *left, *right),
        };
        field.map_err(|e| invalid(format!("coefficient: {e}")))
    }
}

/// Dirichlet data family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundarySpec {
    /// `g(x) = w·x + offset`; `w` defaults to `e₁`.
    Linear {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coeffs: Option<Vec<f64>>,
        #[serde(default)]
        offset: f64,
    },
    /// `g(x) = x₁x₂`.
    Saddle,
    /// Unit-norm quadratic annihilated by `a(0)`.
    NullQuadratic,
    /// `g(x) = (c₁x + c₂)/a(x)` (1D only).
    #[serde(rename = "oracle_1d")]
    Oracle1d {
        c1: f64,
        c2: f64,
    },
    Zero,
}

impl Default for BoundarySpec {
    fn default() -> Self {
        BoundarySpec::Linear {
            coeffs: None,
            offset: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowerOrderSpec {
    #[serde(default)]
    pub drift: Vec<f64>,
    #[serde(default)]
    pub potential: f64,
    #[serde(default)]
    pub source: f64,
}

/// Decay-measurement knobs. Given `universal`, `ρ` is derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySpec {
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_tol")]
    pub grad_tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub universal: Option<UniversalSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniversalSpec {
    #[serde(rename = "C")]
    pub c: f64,
    pub alpha: f64,
}

fn default_rho() -> f64 {
    0.5
}
fn default_k_max() -> usize {
    12
}
fn default_tol() -> f64 {
    1e-6
}

impl Default for DecaySpec {
    fn default() -> Self {
        Self {
            rho: default_rho(),
            k_max: default_k_max(),
            tol: default_tol(),
            grad_tol: default_tol(),
            universal: None,
        }
    }
}

impl DecaySpec {
    /// Ratio actually used, and `δ` when derived from universal constants.
    pub fn effective_rho(&self) -> Result<(f64, Option<f64>), ConfigError> {
        match &self.universal {
            None => Ok((self.rho, None)),
            Some(u) => {
                let choice = UniversalChoice::new(u.c, u.alpha).map_err(|e| invalid(e.to_string()))?;
                Ok((choice.rho, Some(choice.delta)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FundsolSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_pole")]
    pub pole: Vec<f64>,
    #[serde(default = "default_r_inner")]
    pub r_inner: f64,
    #[serde(default = "default_r_outer")]
    pub r_outer: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_fundsol_tol")]
    pub tolerance: f64,
}

fn default_pole() -> Vec<f64> {
    vec![0.0; 3]
}
fn default_r_inner() -> f64 {
    0.3
}
fn default_r_outer() -> f64 {
    0.7
}
fn default_samples() -> usize {
    2000
}
fn default_step() -> f64 {
    1e-3
}
fn default_fundsol_tol() -> f64 {
    1e-3
}

impl Default for FundsolSpec {
    fn default() -> Self {
        Self {
            matrix: None,
            pole: default_pole(),
            r_inner: default_r_inner(),
            r_outer: default_r_outer(),
            samples: default_samples(),
            step: default_step(),
            tolerance: default_fundsol_tol(),
        }
    }
}

/// Deliberate faults for exercising the invariant suite.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectSpec {
    #[serde(default)]
    pub asymmetric_coefficient: bool,
    #[serde(default)]
    pub tampered_solution: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: CommandName,
    pub dim: usize,
    pub n: usize,
    #[serde(default)]
    pub coefficient: CoefficientSpec,
    #[serde(default)]
    pub boundary: BoundarySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_order: Option<LowerOrderSpec>,
    /// Overrides the form chosen from the coefficient smoothness.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form: Option<Form>,
    #[serde(default)]
    pub decay: DecaySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n_list: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fundsol: Option<FundsolSpec>,
    #[serde(default)]
    pub inject: InjectSpec,
}

impl ExperimentConfig {
    pub fn new(command: CommandName, dim: usize, n: usize) -> Self {
        Self {
            command,
            dim,
            n,
            coefficient: CoefficientSpec::default(),
            boundary: BoundarySpec::default(),
            lower_order: None,
            form: None,
            decay: DecaySpec::default(),
            output_dir: None,
            seed: 0,
            n_list: Vec::new(),
            fundsol: None,
            inject: InjectSpec::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON, with the
    /// output directory cleared so the hash names the experiment only.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let digest = Sha256::digest(serde_json::to_vec(&canonical).expect("config serializes"));
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn grid(&self) -> Result<Grid, ConfigError> {
        Grid::new(self.dim, self.n).map_err(|e| invalid(format!("grid: {e}")))
    }

    pub fn field(&self) -> Result<CoefficientField, ConfigError> {
        self.coefficient.build(self.dim)
    }

    pub fn lower(&self) -> Result<LowerOrderData, ConfigError> {
        match &self.lower_order {
            None => Ok(LowerOrderData::none()),
            Some(l) => {
                if !l.drift.is_empty() && l.drift.len() != self.dim {
                    return Err(invalid(format!("drift must have {} components", self.dim)));
                }
                if l.drift.iter().chain([&l.potential, &l.source]).any(|v| !v.is_finite()) {
                    return Err(invalid("lower-order data must be finite"));
                }
                let drift = if l.drift.is_empty() {
                    vec![0.0; self.dim]
                } else {
                    l.drift.clone()
                };
                Ok(LowerOrderData::constant(&drift, l.potential, l.source))
            }
        }
    }

    pub fn has_lower_order(&self) -> bool {
        self.lower_order
            .as_ref()
            .is_some_and(|l| l.drift.iter().any(|v| *v != 0.0) || l.potential != 0.0 || l.source != 0.0)
    }

    /// Divergence form for Sobolev coefficients without lower-order terms,
    /// double-divergence form otherwise, unless overridden.
    pub fn solve_form(&self, field: &CoefficientField) -> Form {
        if let Some(f) = self.form {
            return f;
        }
        match field.smoothness() {
            Smoothness::Sobolev { .. } if !self.has_lower_order() => Form::DivergenceForm,
            _ => Form::DoubleDivergence,
        }
    }

    /// Boundary function. Also the exact solution when [`Self::exact`] says so.
    pub fn boundary_fn(&self, field: &CoefficientField) -> Result<Box<ScalarFn>, ConfigError> {
        let d = self.dim;
        Ok(match &self.boundary {
            BoundarySpec::Linear { coeffs, offset } => {
                let w = match coeffs {
                    Some(w) if w.len() == d && w.iter().all(|v| v.is_finite()) => w.clone(),
                    Some(_) => return Err(invalid(format!("linear boundary needs {d} finite coefficients"))),
                    None => (0..d).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect(),
                };
                let offset = *offset;
                if !offset.is_finite() {
                    return Err(invalid("linear boundary offset must be finite"));
                }
                Box::new(move |x: &[f64]| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + offset)
            }
            BoundarySpec::Saddle => {
                if d < 2 {
                    return Err(invalid("saddle boundary x1*x2 needs dim >= 2"));
                }
                Box::new(|x: &[f64]| x[0] * x[1])
            }
            BoundarySpec::NullQuadratic => {
                let q: Quadratic = null_quadratic(&field.evaluate(&vec![0.0; d]))
                    .map_err(|e| invalid(format!("null quadratic boundary: {e}")))?;
                Box::new(move |x: &[f64]| q.value(x))
            }
            BoundarySpec::Oracle1d { c1, c2 } => {
                let o = self.oracle(field, *c1, *c2)?;
                Box::new(move |x: &[f64]| o.value(x[0]).unwrap_or(f64::NAN))
            }
            BoundarySpec::Zero => Box::new(|_: &[f64]| 0.0),
        })
    }

    pub fn oracle(&self, field: &CoefficientField, c1: f64, c2: f64) -> Result<Oracle1D, ConfigError> {
        if self.dim != 1 {
            return Err(invalid("oracle_1d boundary needs dim = 1"));
        }
        if !(c1.is_finite() && c2.is_finite()) {
            return Err(invalid("oracle constants must be finite"));
        }
        Oracle1D::from_field(field, c1, c2).map_err(|e| invalid(format!("oracle: {e}")))
    }

    /// Whether the boundary function is also the exact solution of the
    /// configured problem.
    pub fn exact(&self, field: &CoefficientField) -> bool {
        if self.has_lower_order() {
            return false;
        }
        let constant = field.smoothness() == Smoothness::Constant;
        match &self.boundary {
            BoundarySpec::Linear { .. } | BoundarySpec::NullQuadratic => constant,
            BoundarySpec::Saddle => constant && field.evaluate(&vec![0.0; self.dim])[(0, 1)] == 0.0,
            BoundarySpec::Oracle1d { .. } => self.dim == 1,
            BoundarySpec::Zero => true,
        }
    }

    /// Range checks for every field, run before any computation.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let grid_needed = !matches!(self.command, CommandName::Fundsol | CommandName::Invariants);
        if !(1..=3).contains(&self.dim) {
            return Err(invalid(format!("dim must be 1, 2 or 3, got {}", self.dim)));
        }
        if grid_needed {
            self.grid()?;
        }
        let field = self.field()?;
        self.lower()?;
        if grid_needed {
            let _ = self.boundary_fn(&field)?;
        }
        let d = &self.decay;
        if !(d.rho > 0.0 && d.rho < 1.0) {
            return Err(invalid(format!("decay.rho must lie in (0, 1), got {}", d.rho)));
        }
        if !(1..=60).contains(&d.k_max) {
            return Err(invalid(format!("decay.k_max must lie in 1..=60, got {}", d.k_max)));
        }
        if !(d.tol > 0.0 && d.grad_tol > 0.0 && d.tol.is_finite() && d.grad_tol.is_finite()) {
            return Err(invalid("decay tolerances must be positive and finite"));
        }
        d.effective_rho()?;
        for &n in &self.n_list {
            Grid::new(self.dim, n).map_err(|e| invalid(format!("n_list: {e}")))?;
        }
        if self.form == Some(Form::DivergenceForm) && self.has_lower_order() {
            return Err(invalid("the divergence-form rewrite has no lower-order terms"));
        }
        if self.form == Some(Form::DivergenceForm) && !field.smoothness().admits_divergence_form() {
            return Err(invalid(format!(
                "divergence form needs differentiable coefficients, got {:?}",
                field.smoothness()
            )));
        }
        match self.command {
            CommandName::Theorem2 => {
                if self.dim < 2 {
                    return Err(invalid(
                        "theorem2 needs dim >= 2: a 1D homogeneous solution with u = u' = 0 at a point vanishes identically",
                    ));
                }
                if !matches!(field.smoothness(), Smoothness::Constant | Smoothness::Sobolev { .. }) {
                    return Err(invalid(format!(
                        "theorem2 needs Sobolev-differentiable coefficients, got {:?}",
                        field.smoothness()
                    )));
                }
                if self.has_lower_order() {
                    return Err(invalid(
                        "theorem2 solves the divergence-form rewrite, which has no lower-order terms",
                    ));
                }
            }
            CommandName::Convergence => {
                if self.n_list.len() < 2 {
                    return Err(invalid("convergence needs an n_list with at least two grid sizes"));
                }
                if !self.exact(&field) {
                    return Err(invalid(
                        "convergence needs a configuration with a closed-form solution (1D oracle or constant coefficients)",
                    ));
                }
            }
            CommandName::Fundsol => {
                if self.dim != 3 {
                    return Err(invalid(format!("fundsol needs dim = 3, got {}", self.dim)));
                }
                let f = self.fundsol.clone().unwrap_or_default();
                make_constant(matrix(3, &f.matrix)?).map_err(|e| invalid(format!("fundsol.matrix: {e}")))?;
                if f.pole.len() != 3 || f.pole.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("fundsol.pole needs 3 finite coordinates"));
                }
                if !(f.r_inner > 0.0 && f.r_outer > f.r_inner && f.r_outer.is_finite()) {
                    return Err(invalid("fundsol annulus needs 0 < r_inner < r_outer"));
                }
                if !(f.step > 0.0 && f.step < f.r_inner / 10.0) {
                    return Err(invalid("fundsol.step must lie in (0, r_inner/10)"));
                }
                if f.samples == 0 || f.samples > 1_000_000 {
                    return Err(invalid("fundsol.samples must lie in 1..=1000000"));
                }
                if !(f.tolerance > 0.0) {
                    return Err(invalid("fundsol.tolerance must be positive"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn fundsol_matrix(&self) -> Result<DMatrix<f64>, ConfigError> {
        matrix(3, &self.fundsol.clone().unwrap_or_default().matrix)
    }
}
