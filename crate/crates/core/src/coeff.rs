//! Coefficient fields `a(x)` for double-divergence operators.
//!
//! Every built-in field is a scalar profile times a constant symmetric
//! positive definite base matrix, `a(x) = φ(x)·A`. This keeps the ellipticity
//! bounds, the Hölder seminorm and the first derivatives available in closed
//! form. Arbitrary evaluators can still be wrapped with
//! [`CoefficientField::from_fn`]; they are only checked by
//! [`check_assumptions`].

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

/// Entrywise tolerance used when deciding whether a matrix is symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum CoeffError {
    #[error("dimension must be 1, 2 or 3, got {0}")]
    Dimension(usize),
    #[error("matrix must be {expected}x{expected}, got {rows}x{cols}")]
    Shape { expected: usize, rows: usize, cols: usize },
    #[error("matrix is not symmetric (entrywise defect {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("Hölder exponent must lie in (0, 1), got {0}")]
    HolderExponent(f64),
    #[error("Sobolev power must lie in (1, 2), got {0}")]
    SobolevPower(f64),
    #[error("center has {got} coordinates, expected {expected}")]
    Center { expected: usize, got: usize },
    #[error("scalar factor leaves the ellipticity range on the box (min factor {0:e})")]
    Ellipticity(f64),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("sample set is empty")]
    EmptySamples,
}

/// Regularity class of a coefficient field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum Smoothness {
    Constant,
    /// Locally α-Hölder continuous.
    Holder {
        alpha: f64,
    },
    /// `W^{2,p}` for every `p < p_sup`; `p_sup` may be infinite for smooth fields.
    Sobolev {
        p_sup: f64,
    },
    Discontinuous,
}

impl Smoothness {
    /// Whether first derivatives of the coefficients exist (weakly) so the
    /// divergence-form rewrite is admissible.
    pub fn admits_divergence_form(self) -> bool {
        matches!(self, Smoothness::Constant | Smoothness::Sobolev { .. })
    }
}

/// Scalar factor multiplying the base matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Constant,
    /// `1 + κ|x − z|^e`.
    Power {
        kappa: f64,
        exponent: f64,
        center: Vec<f64>,
    },
    /// `1 + κ sin(ωπ x₁)`.
    Sine {
        kappa: f64,
        wavenumber: f64,
    },
    /// `left` for `x₁ < 0`, `right` for `x₁ ≥ 0`.
    Step {
        left: f64,
        right: f64,
    },
}

impl Profile {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Profile::Constant => 1.0,
            Profile::Power {
                kappa,
                exponent,
                center,
            } => 1.0 + kappa * distance(x, center).powf(*exponent),
            Profile::Sine { kappa, wavenumber } => 1.0 + kappa * (wavenumber * std::f64::consts::PI * x[0]).sin(),
            Profile::Step { left, right } => {
                if x[0] < 0.0 {
                    *left
                } else {
                    *right
                }
            }
        }
    }

    /// Analytic derivative `∂ₖφ`, when the profile is differentiable.
    pub fn derivative(&self, x: &[f64], k: usize) -> Option<f64> {
        match self {
            Profile::Constant => Some(0.0),
            Profile::Power {
                kappa,
                exponent,
                center,
            } => {
                if *exponent <= 1.0 {
                    return None;
                }
                let r = distance(x, center);
                if r == 0.0 {
                    return Some(0.0);
                }
                Some(kappa * exponent * r.powf(exponent - 2.0) * (x[k] - center[k]))
            }
            Profile::Sine { kappa, wavenumber } => {
                if k != 0 {
                    return Some(0.0);
                }
                let w = wavenumber * std::f64::consts::PI;
                Some(kappa * w * (w * x[0]).cos())
            }
            Profile::Step { .. } => None,
        }
    }

    /// Exact range of the factor over `[−1, 1]^d`.
    fn range_on_box(&self) -> (f64, f64) {
        match self {
            Profile::Constant => (1.0, 1.0),
            Profile::Power {
                kappa,
                exponent,
                center,
            } => {
                let near = center
                    .iter()
                    .map(|c| (c.abs() - 1.0).max(0.0).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let far = center.iter().map(|c| (1.0 + c.abs()).powi(2)).sum::<f64>().sqrt();
                let lo = 1.0 + kappa * near.powf(*exponent);
                let hi = 1.0 + kappa * far.powf(*exponent);
                (lo.min(hi), lo.max(hi))
            }
            Profile::Sine { kappa, wavenumber } => {
                let reach = (wavenumber.abs() * std::f64::consts::PI).min(std::f64::consts::FRAC_PI_2);
                let s = kappa.abs() * reach.sin();
                (1.0 - s, 1.0 + s)
            }
            Profile::Step { left, right } => (left.min(*right), left.max(*right)),
        }
    }
}

type MatrixFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

#[derive(Clone)]
enum Kind {
    Scaled { base: DMatrix<f64>, profile: Profile },
    Custom(Arc<MatrixFn>),
}

/// A symmetric matrix-valued coefficient `a(x)` on `[−1, 1]^d`.
#[derive(Clone)]
pub struct CoefficientField {
    dim: usize,
    kind: Kind,
    lambda_min: f64,
    lambda_max: f64,
    smoothness: Smoothness,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("CoefficientField");
        s.field("dim", &self.dim)
            .field("lambda_min", &self.lambda_min)
            .field("lambda_max", &self.lambda_max)
            .field("smoothness", &self.smoothness);
        match &self.kind {
            Kind::Scaled { base, profile } => s.field("base", base).field("profile", profile),
            Kind::Custom(_) => s.field("evaluator", &"<custom>"),
        };
        s.finish()
    }
}

impl CoefficientField {
    /// Wraps an arbitrary evaluator. Nothing is validated here; run
    /// [`check_assumptions`] to audit symmetry and ellipticity.
    pub fn from_fn<F>(dim: usize, eval: F, lambda_min: f64, lambda_max: f64, smoothness: Smoothness) -> Self
    where
        F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            dim,
            kind: Kind::Custom(Arc::new(eval)),
            lambda_min,
            lambda_max,
            smoothness,
        }
    }

    fn scaled(dim: usize, base: DMatrix<f64>, profile: Profile, smoothness: Smoothness) -> Result<Self, CoeffError> {
        let (lo, hi) = spectrum(&base);
        let (fmin, fmax) = profile.range_on_box();
        if fmin <= 0.0 {
            return Err(CoeffError::Ellipticity(fmin));
        }
        Ok(Self {
            dim,
            kind: Kind::Scaled { base, profile },
            lambda_min: lo * fmin,
            lambda_max: hi * fmax,
            smoothness,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Lower ellipticity bound λ.
    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    /// Upper ellipticity bound Λ.
    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    /// Base matrix and profile, for scalar-factor fields.
    pub fn scalar_form(&self) -> Option<(&DMatrix<f64>, &Profile)> {
        match &self.kind {
            Kind::Scaled { base, profile } => Some((base, profile)),
            Kind::Custom(_) => None,
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.kind {
            Kind::Scaled { base, profile } => base * profile.value(x),
            Kind::Custom(f) => f(x),
        }
    }

    /// Row-major entries of `a(x)`; cheaper than [`evaluate`](Self::evaluate)
    /// inside assembly loops.
    pub fn entries(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        match &self.kind {
            Kind::Scaled { base, profile } => {
                let s = profile.value(x);
                let mut out = Vec::with_capacity(d * d);
                for i in 0..d {
                    for j in 0..d {
                        out.push(base[(i, j)] * s);
                    }
                }
                out
            }
            Kind::Custom(f) => {
                let m = f(x);
                let mut out = Vec::with_capacity(d * d);
                for i in 0..d {
                    for j in 0..d {
                        out.push(m[(i, j)]);
                    }
                }
                out
            }
        }
    }

    /// Analytic `∂ₖaⁱʲ(x)` when available.
    pub fn derivative(&self, x: &[f64], i: usize, j: usize, k: usize) -> Option<f64> {
        match &self.kind {
            Kind::Scaled { base, profile } => profile.derivative(x, k).map(|g| g * base[(i, j)]),
            Kind::Custom(_) => None,
        }
    }

    /// `∂ₖaⁱʲ(x)`, falling back to a centered difference with the given step.
    pub fn derivative_or_fd(&self, x: &[f64], i: usize, j: usize, k: usize, step: f64) -> f64 {
        if let Some(g) = self.derivative(x, i, j, k) {
            return g;
        }
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[k] += step;
        xm[k] -= step;
        let d = self.dim;
        let ap = self.entries(&xp)[i * d + j];
        let am = self.entries(&xm)[i * d + j];
        (ap - am) / (2.0 * step)
    }
}

pub type VectorFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
pub type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Optional drift `b`, potential `c` and source `f`; absent terms are zero.
#[derive(Clone, Default)]
pub struct LowerOrderData {
    pub drift: Option<Arc<VectorFn>>,
    pub potential: Option<Arc<ScalarFn>>,
    pub source: Option<Arc<ScalarFn>>,
}

impl fmt::Debug for LowerOrderData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LowerOrderData")
            .field("drift", &self.drift.is_some())
            .field("potential", &self.potential.is_some())
            .field("source", &self.source.is_some())
            .finish()
    }
}

impl LowerOrderData {
    pub fn none() -> Self {
        Self::default()
    }

    /// Constant `b`, `c`, `f`. Zero entries are stored as absent.
    pub fn constant(drift: &[f64], potential: f64, source: f64) -> Self {
        let mut out = Self::default();
        if drift.iter().any(|&v| v != 0.0) {
            let b = drift.to_vec();
            out.drift = Some(Arc::new(move |_| b.clone()));
        }
        if potential != 0.0 {
            out.potential = Some(Arc::new(move |_| potential));
        }
        if source != 0.0 {
            out.source = Some(Arc::new(move |_| source));
        }
        out
    }

    pub fn drift_at(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.drift.as_ref().map(|b| b(x))
    }

    pub fn potential_at(&self, x: &[f64]) -> f64 {
        self.potential.as_ref().map_or(0.0, |c| c(x))
    }

    pub fn source_at(&self, x: &[f64]) -> f64 {
        self.source.as_ref().map_or(0.0, |f| f(x))
    }
}

fn distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

/// Largest entrywise asymmetry `|aᵢⱼ − aⱼᵢ|`.
pub fn symmetry_defect(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest and largest eigenvalue of the symmetric part of `m`.
pub fn spectrum(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn check_dim(dim: usize) -> Result<(), CoeffError> {
    if (1..=3).contains(&dim) {
        Ok(())
    } else {
        Err(CoeffError::Dimension(dim))
    }
}

fn check_spd(m: &DMatrix<f64>) -> Result<(), CoeffError> {
    let d = m.nrows();
    if m.ncols() != d {
        return Err(CoeffError::Shape {
            expected: d,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    check_dim(d)?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(CoeffError::Parameter("matrix has non-finite entries".into()));
    }
    let defect = symmetry_defect(m);
    let scale = m.amax().max(1.0);
    if defect > SYMMETRY_TOL * scale {
        return Err(CoeffError::NotSymmetric(defect));
    }
    let (lo, _) = spectrum(m);
    if lo <= 0.0 {
        return Err(CoeffError::NotPositiveDefinite(lo));
    }
    Ok(())
}

fn check_center(dim: usize, center: &[f64]) -> Result<(), CoeffError> {
    if center.len() != dim {
        return Err(CoeffError::Center {
            expected: dim,
            got: center.len(),
        });
    }
    if center.iter().any(|c| !c.is_finite()) {
        return Err(CoeffError::Parameter("center has non-finite coordinates".into()));
    }
    Ok(())
}

fn check_base(dim: usize, base: &DMatrix<f64>) -> Result<(), CoeffError> {
    check_dim(dim)?;
    if base.nrows() != dim || base.ncols() != dim {
        return Err(CoeffError::Shape {
            expected: dim,
            rows: base.nrows(),
            cols: base.ncols(),
        });
    }
    check_spd(base)
}

/// Constant coefficients `a(x) = A`.
pub fn make_constant(a: DMatrix<f64>) -> Result<CoefficientField, CoeffError> {
    check_spd(&a)?;
    let dim = a.nrows();
    CoefficientField::scaled(dim, a, Profile::Constant, Smoothness::Constant)
}

/// `a(x) = A·(1 + κ|x − z|^α)`, α-Hölder with seminorm `κ` in the factor.
pub fn make_holder_bump(
    dim: usize,
    base: DMatrix<f64>,
    kappa: f64,
    alpha: f64,
    center: &[f64],
) -> Result<CoefficientField, CoeffError> {
    check_base(dim, &base)?;
    check_center(dim, center)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CoeffError::HolderExponent(alpha));
    }
    if !kappa.is_finite() {
        return Err(CoeffError::Parameter("amplitude must be finite".into()));
    }
    let profile = Profile::Power {
        kappa,
        exponent: alpha,
        center: center.to_vec(),
    };
    CoefficientField::scaled(dim, base, profile, Smoothness::Holder { alpha })
}

/// `a(x) = A·(1 + κ|x − z|^γ)` with γ ∈ (1, 2): second derivatives behave
/// like `|x − z|^{γ−2}`, integrable to every power below `d/(2 − γ)`.
pub fn make_sobolev_perturbation(
    dim: usize,
    base: DMatrix<f64>,
    kappa: f64,
    gamma: f64,
    center: &[f64],
) -> Result<CoefficientField, CoeffError> {
    check_base(dim, &base)?;
    check_center(dim, center)?;
    if !(gamma > 1.0 && gamma < 2.0) {
        return Err(CoeffError::SobolevPower(gamma));
    }
    if !kappa.is_finite() {
        return Err(CoeffError::Parameter("amplitude must be finite".into()));
    }
    let profile = Profile::Power {
        kappa,
        exponent: gamma,
        center: center.to_vec(),
    };
    let p_sup = dim as f64 / (2.0 - gamma);
    CoefficientField::scaled(dim, base, profile, Smoothness::Sobolev { p_sup })
}

/// Smooth field `a(x) = A·(1 + κ sin(ωπ x₁))`.
pub fn make_sinusoid(
    dim: usize,
    base: DMatrix<f64>,
    kappa: f64,
    wavenumber: f64,
) -> Result<CoefficientField, CoeffError> {
    check_base(dim, &base)?;
    if !kappa.is_finite() || !wavenumber.is_finite() {
        return Err(CoeffError::Parameter("amplitude and wavenumber must be finite".into()));
    }
    let profile = Profile::Sine { kappa, wavenumber };
    CoefficientField::scaled(dim, base, profile, Smoothness::Sobolev { p_sup: f64::INFINITY })
}

/// Piecewise constant `a(x) = A·left` for `x₁ < 0` and `A·right` otherwise.
pub fn make_step(dim: usize, base: DMatrix<f64>, left: f64, right: f64) -> Result<CoefficientField, CoeffError> {
    check_base(dim, &base)?;
    if !(left > 0.0 && right > 0.0 && left.is_finite() && right.is_finite()) {
        return Err(CoeffError::Ellipticity(left.min(right)));
    }
    CoefficientField::scaled(dim, base, Profile::Step { left, right }, Smoothness::Discontinuous)
}

/// `max_{x ∈ samples} max_{i,j} |aⁱʲ(x) − aⁱʲ(x₀)|`.
pub fn proximity(field: &CoefficientField, x0: &[f64], samples: &[Vec<f64>]) -> Result<f64, CoeffError> {
    if samples.is_empty() {
        return Err(CoeffError::EmptySamples);
    }
    let a0 = field.entries(x0);
    let mut worst = 0.0f64;
    for x in samples {
        for (a, b) in field.entries(x).iter().zip(&a0) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Outcome of auditing a field against symmetry, ellipticity and
/// (for Hölder fields) the Hölder seminorm.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub samples: usize,
    pub symmetry_defect: f64,
    pub eig_min: f64,
    pub eig_max: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub symmetric: bool,
    pub elliptic: bool,
    pub holder_quotient: Option<f64>,
    pub holder_bound: Option<f64>,
    pub holder_ok: bool,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.symmetric && self.elliptic && self.holder_ok
    }
}

/// Lattice of `density` points per axis over `[−w, w]^d`.
fn lattice(dim: usize, half_width: f64, density: usize) -> Vec<Vec<f64>> {
    let m = density.max(2);
    let total = m.pow(dim as u32);
    (0..total)
        .map(|mut k| {
            (0..dim)
                .map(|_| {
                    let i = k % m;
                    k /= m;
                    -half_width + 2.0 * half_width * i as f64 / (m - 1) as f64
                })
                .collect()
        })
        .collect()
}

/// Audits a field on a `density^d` lattice over `[−w, w]^d`. Violations are
/// reported, never raised.
pub fn check_assumptions(field: &CoefficientField, half_width: f64, density: usize) -> AssumptionReport {
    let points = lattice(field.dim(), half_width, density);
    check_assumptions_at(field, &points)
}

/// Same as [`check_assumptions`] over an explicit point set.
pub fn check_assumptions_at(field: &CoefficientField, points: &[Vec<f64>]) -> AssumptionReport {
    let tol = 1e-9;
    let mut sym = 0.0f64;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mats: Vec<DMatrix<f64>> = points.iter().map(|x| field.evaluate(x)).collect();
    for m in &mats {
        sym = sym.max(symmetry_defect(m));
        let (a, b) = spectrum(m);
        lo = lo.min(a);
        hi = hi.max(b);
    }
    let (holder_quotient, holder_bound) = match (field.smoothness(), field.scalar_form()) {
        (Smoothness::Holder { alpha }, scalar) => {
            let mut q = 0.0f64;
            for (a, (x, ma)) in points.iter().zip(&mats).enumerate() {
                for (y, mb) in points.iter().zip(&mats).skip(a + 1) {
                    let r = distance(x, y);
                    if r == 0.0 {
                        continue;
                    }
                    let diff = (ma - mb).amax();
                    q = q.max(diff / r.powf(alpha));
                }
            }
            let bound = scalar.and_then(|(base, profile)| match profile {
                Profile::Power { kappa, .. } => Some(kappa.abs() * base.amax()),
                _ => None,
            });
            (Some(q), bound)
        }
        _ => (None, None),
    };
    let holder_ok = match (holder_quotient, holder_bound) {
        (Some(q), Some(b)) => q <= b * (1.0 + tol) + f64::EPSILON,
        _ => true,
    };
    AssumptionReport {
        samples: points.len(),
        symmetry_defect: sym,
        eig_min: lo,
        eig_max: hi,
        lambda_min: field.lambda_min(),
        lambda_max: field.lambda_max(),
        symmetric: sym <= SYMMETRY_TOL,
        elliptic: lo >= field.lambda_min() - tol && hi <= field.lambda_max() + tol,
        holder_quotient,
        holder_bound,
        holder_ok,
    }
}
