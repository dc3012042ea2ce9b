//! Exact reference solutions.
//!
//! * the one-dimensional family `u = (c₁x + c₂)/a(x)`, which solves
//!   `(a u)'' = 0` for any positive `a` and is exactly as regular as `a`
//!   away from its zero;
//! * quadratics annihilated by a constant coefficient matrix;
//! * the fundamental solution of the frozen operator `aⁱʲ(y)∂²ᵢⱼ` for d ≥ 3.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::coeff::{spectrum, symmetry_defect, CoefficientField, SYMMETRY_TOL};

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("coefficient must be positive, got a({x}) = {value}")]
    NonPositive { x: f64, value: f64 },
    #[error("no nontrivial null quadratic in dimension 1")]
    OneDimensional,
    #[error("fundamental solution is only defined for d ≥ 3, got {0}")]
    LowDimension(usize),
    #[error("evaluation point coincides with the pole")]
    Pole,
    #[error("matrix must be symmetric positive definite")]
    NotSpd,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("annulus [{r0}, {r1}] is invalid")]
    Annulus { r0: f64, r1: f64 },
    #[error("finite-difference step {step} must be below r0/10 = {limit}")]
    Step { step: f64, limit: f64 },
    #[error("coefficient field must be one-dimensional")]
    NotOneDimensional,
}

/// `(c₁x + c₂)/a(x)`.
pub fn exact_1d(a: impl Fn(f64) -> f64, c1: f64, c2: f64, x: f64) -> Result<f64, OracleError> {
    let ax = a(x);
    if !(ax > 0.0) {
        return Err(OracleError::NonPositive { x, value: ax });
    }
    Ok((c1 * x + c2) / ax)
}

/// Affine coefficients matching Dirichlet data `u(−1)`, `u(1)`.
pub fn fit_1d_bvp(a: impl Fn(f64) -> f64, u_left: f64, u_right: f64) -> Result<(f64, f64), OracleError> {
    let (al, ar) = (a(-1.0), a(1.0));
    if !(al > 0.0) {
        return Err(OracleError::NonPositive { x: -1.0, value: al });
    }
    if !(ar > 0.0) {
        return Err(OracleError::NonPositive { x: 1.0, value: ar });
    }
    // −c₁ + c₂ = u_left·a(−1),  c₁ + c₂ = u_right·a(1)
    let (l, r) = (u_left * al, u_right * ar);
    Ok(((r - l) / 2.0, (r + l) / 2.0))
}

/// The one-dimensional solution family `ℓ(x)/a(x)`.
#[derive(Clone)]
pub struct Oracle1D {
    a: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub c1: f64,
    pub c2: f64,
}

impl std::fmt::Debug for Oracle1D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Oracle1D")
            .field("c1", &self.c1)
            .field("c2", &self.c2)
            .finish()
    }
}

impl Oracle1D {
    pub fn new(a: impl Fn(f64) -> f64 + Send + Sync + 'static, c1: f64, c2: f64) -> Self {
        Self { a: Arc::new(a), c1, c2 }
    }

    /// Uses `a¹¹` of a one-dimensional coefficient field.
    pub fn from_field(field: &CoefficientField, c1: f64, c2: f64) -> Result<Self, OracleError> {
        if field.dim() != 1 {
            return Err(OracleError::NotOneDimensional);
        }
        let f = field.clone();
        Ok(Self::new(move |x| f.entries(&[x])[0], c1, c2))
    }

    /// Member of the family matching the Dirichlet data.
    pub fn from_boundary(field: &CoefficientField, u_left: f64, u_right: f64) -> Result<Self, OracleError> {
        let probe = Self::from_field(field, 0.0, 0.0)?;
        let (c1, c2) = fit_1d_bvp(|x| probe.coefficient(x), u_left, u_right)?;
        Ok(Self { c1, c2, ..probe })
    }

    pub fn coefficient(&self, x: f64) -> f64 {
        (self.a)(x)
    }

    pub fn value(&self, x: f64) -> Result<f64, OracleError> {
        exact_1d(|t| (self.a)(t), self.c1, self.c2, x)
    }

    /// The unique zero `−c₂/c₁`, when `c₁ ≠ 0`.
    pub fn zero(&self) -> Option<f64> {
        (self.c1 != 0.0).then(|| -self.c2 / self.c1)
    }
}

/// `q(x) = ½ xᵀMx`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub m: DMatrix<f64>,
}

impl Quadratic {
    /// `x₁x₂`, whose critical point at the origin is also a zero.
    pub fn saddle(dim: usize) -> Result<Self, OracleError> {
        if dim < 2 {
            return Err(OracleError::OneDimensional);
        }
        let mut m = DMatrix::zeros(dim, dim);
        m[(0, 1)] = 1.0;
        m[(1, 0)] = 1.0;
        Ok(Self { m })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        0.5 * v.dot(&(&self.m * &v))
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(x);
        (&self.m * v).iter().copied().collect()
    }

    /// `Σᵢⱼ Aⁱʲ∂²ᵢⱼq = trace(AM)`.
    pub fn operator_value(&self, a: &DMatrix<f64>) -> f64 {
        (a * &self.m).trace()
    }
}

/// Quadratic with `trace(AM) = 0` and unit Frobenius norm, built from
/// `M ∝ A₂₂E₁₁ − A₁₁E₂₂`.
pub fn null_quadratic(a: &DMatrix<f64>) -> Result<Quadratic, OracleError> {
    let d = a.nrows();
    if a.ncols() != d {
        return Err(OracleError::Dimension(format!("{}x{} matrix", a.nrows(), a.ncols())));
    }
    if d < 2 {
        return Err(OracleError::OneDimensional);
    }
    let mut m = DMatrix::zeros(d, d);
    m[(0, 0)] = a[(1, 1)];
    m[(1, 1)] = -a[(0, 0)];
    let norm = m.norm();
    Ok(Quadratic { m: m / norm })
}

/// Volume of the unit ball in ℝᵈ.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * std::f64::consts::PI / d as f64 * unit_ball_volume(d - 2),
    }
}

fn check_spd(a: &DMatrix<f64>) -> Result<(), OracleError> {
    if a.nrows() != a.ncols() || symmetry_defect(a) > SYMMETRY_TOL * a.amax().max(1.0) || spectrum(a).0 <= 0.0 {
        return Err(OracleError::NotSpd);
    }
    Ok(())
}

/// Kernel of `Aⁱʲ∂²ᵢⱼ` with pole `y`:
/// `[(x−y)ᵀA⁻¹(x−y)]^{(2−d)/2} / ((d − 2)·ω_d·√det A)`, where `ω_d` is the
/// unit-ball volume.
pub fn fundamental_solution(a: &DMatrix<f64>, y: &[f64], x: &[f64]) -> Result<f64, OracleError> {
    let d = a.nrows();
    if d < 3 {
        return Err(OracleError::LowDimension(d));
    }
    if x.len() != d || y.len() != d {
        return Err(OracleError::Dimension(format!("points must have {d} coordinates")));
    }
    check_spd(a)?;
    let inv = a.clone().try_inverse().ok_or(OracleError::NotSpd)?;
    kernel(&inv, a.determinant(), y, x)
}

fn kernel(inv: &DMatrix<f64>, det: f64, y: &[f64], x: &[f64]) -> Result<f64, OracleError> {
    let d = inv.nrows();
    let r = DVector::from_iterator(d, x.iter().zip(y).map(|(a, b)| a - b));
    let q = r.dot(&(inv * &r));
    if q == 0.0 {
        return Err(OracleError::Pole);
    }
    let df = d as f64;
    Ok(q.powf((2.0 - df) / 2.0) / ((df - 2.0) * unit_ball_volume(d) * det.sqrt()))
}

/// Worst annihilation defect of the fundamental solution over an annulus.
#[derive(Debug, Clone, Serialize)]
pub struct AnnihilationDefect {
    /// `max |Σ Aⁱʲ D²ᵢⱼH|`.
    pub absolute: f64,
    /// `max |Σ Aⁱʲ D²ᵢⱼH| / Σ |Aⁱʲ D²ᵢⱼH|`, pointwise; invariant under scaling H.
    pub relative: f64,
    pub samples: usize,
}

/// Applies `Aⁱʲ` times centered second differences (step `step`) to `H(·, y)`
/// at `samples` deterministic points with `r0 ≤ |x − y| ≤ r1`.
pub fn fundsol_annihilation_defect(
    a: &DMatrix<f64>,
    y: &[f64],
    r0: f64,
    r1: f64,
    samples: usize,
    step: f64,
) -> Result<AnnihilationDefect, OracleError> {
    let d = a.nrows();
    if d < 3 {
        return Err(OracleError::LowDimension(d));
    }
    if y.len() != d {
        return Err(OracleError::Dimension(format!("pole must have {d} coordinates")));
    }
    check_spd(a)?;
    if !(r0 > 0.0 && r1 > r0) {
        return Err(OracleError::Annulus { r0, r1 });
    }
    if !(step > 0.0 && step < r0 / 10.0) {
        return Err(OracleError::Step { step, limit: r0 / 10.0 });
    }
    let inv = a.clone().try_inverse().ok_or(OracleError::NotSpd)?;
    let det = a.determinant();
    let h = |x: &[f64]| kernel(&inv, det, y, x);

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut absolute = 0.0f64;
    let mut relative = 0.0f64;
    let count = samples.max(1);
    for s in 0..count {
        let dir: Vec<f64> = loop {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            if n > 1e-8 {
                break v.into_iter().map(|c| c / n).collect();
            }
        };
        let radius = r0 + (r1 - r0) * (s as f64 + 0.5) / count as f64;
        let x: Vec<f64> = y.iter().zip(&dir).map(|(c, u)| c + radius * u).collect();
        let centre = h(&x)?;
        let mut total = 0.0;
        let mut mass = 0.0;
        for i in 0..d {
            for j in 0..d {
                if a[(i, j)] == 0.0 {
                    continue;
                }
                let second = if i == j {
                    let mut p = x.clone();
                    let mut m = x.clone();
                    p[i] += step;
                    m[i] -= step;
                    (h(&p)? - 2.0 * centre + h(&m)?) / (step * step)
                } else {
                    let at = |si: f64, sj: f64| {
                        let mut p = x.clone();
                        p[i] += si * step;
                        p[j] += sj * step;
                        h(&p)
                    };
                    (at(1.0, 1.0)? - at(1.0, -1.0)? - at(-1.0, 1.0)? + at(-1.0, -1.0)?) / (4.0 * step * step)
                };
                total += a[(i, j)] * second;
                mass += (a[(i, j)] * second).abs();
            }
        }
        absolute = absolute.max(total.abs());
        if mass > 0.0 {
            relative = relative.max(total.abs() / mass);
        }
    }
    Ok(AnnihilationDefect {
        absolute,
        relative,
        samples: count,
    })
}
