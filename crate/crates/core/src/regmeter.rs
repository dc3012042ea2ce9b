//! Level-set detection and dyadic decay measurements.
//!
//! `S₀[u] = {u = 0}` and `S₁[u] = {u = 0, Du = 0}` are located with sub-cell
//! accuracy by multilinear interpolation. Around a detected point the sup of
//! `|u − u(x₀)|` (or `|Du − Du(x₀)|`) over nested balls `B_{r₀ρᵏ}(x₀)` is
//! tabulated and a power law `C rᵅ` is fitted on log-log axes.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::grid::{fmt_f64, DiscreteField, Grid, VectorField};

/// Detection is restricted to `|x|∞ ≤ DETECTION_BOX`.
pub const DETECTION_BOX: f64 = 0.5;
/// Largest first radius of a table.
pub const MAX_START_RADIUS: f64 = 0.25;
/// Lower fit cutoff in units of the grid spacing.
pub const WINDOW_CELLS: f64 = 4.0;
/// Minimum number of radii for an exponent fit.
pub const MIN_FIT_POINTS: usize = 4;
/// Minimum number of nodes inside a ball for its radius to be kept.
pub const MIN_BALL_NODES: usize = 3;

const RADIUS_SLACK: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum RegmeterError {
    #[error("first level-set detection needs d ≥ 2: in 1D a homogeneous solution (c₁x + c₂)/a with u = u' = 0 somewhere vanishes identically")]
    OneDimensional,
    #[error("center {0:?} lies outside the measurement box |x|∞ ≤ 1/2")]
    OutsideBox(Vec<f64>),
    #[error("ratio ρ must lie in (0, 1), got {0}")]
    Ratio(f64),
    #[error("no admissible radii around {0:?}")]
    NoRadii(Vec<f64>),
    #[error("exponent fit needs at least {MIN_FIT_POINTS} radii with positive oscillation, got {0}")]
    TooFewRadii(usize),
    #[error("all oscillations vanish: the field is identically zero near the center")]
    IdenticallyZero,
    #[error("invalid universal constants: {0}")]
    Universal(String),
    #[error("radii and oscillations differ in length")]
    Length,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LevelKind {
    S0,
    S1,
}

/// A detected point of `S₀[u]` or `S₁[u]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSetPoint {
    pub location: Vec<f64>,
    pub kind: LevelKind,
    /// `|u(x₀)|` from multilinear interpolation.
    pub value_residual: f64,
    /// `|Du(x₀)|` from multilinear interpolation (S1 only).
    pub gradient_residual: Option<f64>,
    /// Lowest-corner node of the host cell.
    pub cell: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Detection {
    /// The field vanishes at every node; no level set can be singled out.
    IdenticallyZero,
    Points(Vec<LevelSetPoint>),
}

impl Detection {
    pub fn points(&self) -> &[LevelSetPoint] {
        match self {
            Detection::IdenticallyZero => &[],
            Detection::Points(p) => p,
        }
    }
}

/// Host cell (lowest corner, per-axis) and local coordinates of `x`.
fn locate(grid: &Grid, x: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let h = grid.h();
    let top = grid.n() - 2;
    let mut corner = Vec::with_capacity(x.len());
    let mut local = Vec::with_capacity(x.len());
    for &c in x {
        let s = (c + 1.0) / h;
        let i = (s.floor().max(0.0) as usize).min(top);
        corner.push(i);
        local.push(s - i as f64);
    }
    (corner, local)
}

/// Multilinear interpolation of nodal values in the cell with lowest corner
/// `corner`, at local coordinates `t ∈ [0,1]ᵈ`; returns the value and its
/// derivatives with respect to `t`.
fn multilinear(grid: &Grid, values: &[f64], corner: &[usize], t: &[f64]) -> (f64, Vec<f64>) {
    let d = corner.len();
    let base = grid.linear_index(corner);
    let mut value = 0.0;
    let mut dt = vec![0.0; d];
    for mask in 0..(1usize << d) {
        let mut node = base;
        let mut w = 1.0;
        let mut factors = vec![0.0; d];
        for a in 0..d {
            let up = mask >> a & 1 == 1;
            if up {
                node += grid.stride(a);
            }
            factors[a] = if up { t[a] } else { 1.0 - t[a] };
            w *= factors[a];
        }
        let v = values[node];
        value += w * v;
        for m in 0..d {
            let up = mask >> m & 1 == 1;
            let mut p = if up { 1.0 } else { -1.0 };
            for (a, f) in factors.iter().enumerate() {
                if a != m {
                    p *= f;
                }
            }
            dt[m] += p * v;
        }
    }
    (value, dt)
}

/// Multilinear interpolant of a nodal field at an arbitrary point of the box.
pub fn interpolate(u: &DiscreteField, x: &[f64]) -> f64 {
    let (corner, t) = locate(u.grid(), x);
    multilinear(u.grid(), u.values(), &corner, &t).0
}

fn inside_detection_box(x: &[f64]) -> bool {
    x.iter().all(|c| c.abs() <= DETECTION_BOX + 1e-12)
}

fn dedup(points: Vec<LevelSetPoint>, h: f64) -> Vec<LevelSetPoint> {
    let mut kept: Vec<LevelSetPoint> = Vec::new();
    for p in points {
        let close = kept.iter().any(|q| {
            q.location
                .iter()
                .zip(&p.location)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
                < h
        });
        if !close {
            kept.push(p);
        }
    }
    kept
}

fn host_cell(grid: &Grid, x: &[f64]) -> usize {
    let (corner, _) = locate(grid, x);
    grid.linear_index(&corner)
}

/// Roots of `u` on grid edges where `u` changes sign, linearly
/// interpolated, deduplicated within `h` and restricted to `|x|∞ ≤ 1/2`.
/// Nodes where `u` is exactly zero count as roots.
pub fn detect_zero_level(u: &DiscreteField, tol: f64) -> Detection {
    let grid = *u.grid();
    let v = u.values();
    if v.iter().all(|&x| x == 0.0) {
        return Detection::IdenticallyZero;
    }
    let h = grid.h();
    let mut raw = Vec::new();
    let mut push = |x: Vec<f64>| {
        if !inside_detection_box(&x) {
            return;
        }
        let residual = interpolate(u, &x).abs();
        if residual <= tol {
            raw.push(LevelSetPoint {
                cell: host_cell(&grid, &x),
                location: x,
                kind: LevelKind::S0,
                value_residual: residual,
                gradient_residual: None,
            });
        }
    };
    for k in 0..grid.node_count() {
        if v[k] == 0.0 {
            push(grid.point(k));
            continue;
        }
        for axis in 0..grid.dim() {
            let Some(m) = grid.neighbor(k, axis, 1) else { continue };
            let (a, b) = (v[k], v[m]);
            if a * b < 0.0 {
                let t = a / (a - b);
                let mut x = grid.point(k);
                x[axis] += t * h;
                push(x);
            }
        }
    }
    Detection::Points(dedup(raw, h))
}

/// Points where the multilinear interpolant of `Du` vanishes and `|u| ≤ tol`.
///
/// Every cell in which each gradient component takes both signs (or zero) on
/// its corners is searched by Newton's method on the interpolant.
pub fn detect_first_level(
    u: &DiscreteField,
    grad: &VectorField,
    tol: f64,
    grad_tol: f64,
) -> Result<Detection, RegmeterError> {
    let grid = *u.grid();
    let d = grid.dim();
    if d < 2 {
        return Err(RegmeterError::OneDimensional);
    }
    if u.values().iter().all(|&x| x == 0.0) {
        return Ok(Detection::IdenticallyZero);
    }
    let h = grid.h();
    let n = grid.n();
    let mut raw = Vec::new();
    for k in 0..grid.node_count() {
        let idx = grid.multi_index(k);
        if idx[..d].iter().any(|&i| i + 1 >= n) {
            continue;
        }
        let corner: Vec<usize> = idx[..d].to_vec();
        let lo: Vec<f64> = corner.iter().map(|&i| grid.coordinate(i)).collect();
        if lo
            .iter()
            .any(|c| *c > DETECTION_BOX + 1e-12 || *c + h < -DETECTION_BOX - 1e-12)
        {
            continue;
        }
        let brackets = (0..d).all(|c| {
            let comp = grad.component(c);
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for mask in 0..(1usize << d) {
                let node = (0..d).fold(k, |acc, a| if mask >> a & 1 == 1 { acc + grid.stride(a) } else { acc });
                min = min.min(comp[node]);
                max = max.max(comp[node]);
            }
            min <= 0.0 && max >= 0.0
        });
        if !brackets {
            continue;
        }
        let Some(t) = newton_gradient_root(&grid, grad, &corner) else {
            continue;
        };
        let x: Vec<f64> = lo.iter().zip(&t).map(|(c, s)| c + s * h).collect();
        if !inside_detection_box(&x) {
            continue;
        }
        let value = multilinear(&grid, u.values(), &corner, &t).0.abs();
        let gres = (0..d)
            .map(|c| multilinear(&grid, grad.component(c), &corner, &t).0.powi(2))
            .sum::<f64>()
            .sqrt();
        if value <= tol && gres <= grad_tol {
            raw.push(LevelSetPoint {
                location: x,
                kind: LevelKind::S1,
                value_residual: value,
                gradient_residual: Some(gres),
                cell: k,
            });
        }
    }
    Ok(Detection::Points(dedup(raw, h)))
}

fn newton_gradient_root(grid: &Grid, grad: &VectorField, corner: &[usize]) -> Option<Vec<f64>> {
    let d = corner.len();
    let mut t = vec![0.5; d];
    let eval = |t: &[f64]| -> (DVector<f64>, DMatrix<f64>) {
        let mut g = DVector::zeros(d);
        let mut jac = DMatrix::zeros(d, d);
        for c in 0..d {
            let (v, dt) = multilinear(grid, grad.component(c), corner, t);
            g[c] = v;
            for m in 0..d {
                jac[(c, m)] = dt[m];
            }
        }
        (g, jac)
    };
    let scale = (0..d)
        .flat_map(|c| {
            let base = grid.linear_index(corner);
            (0..(1usize << d)).map(move |mask| {
                let node = (0..d).fold(
                    base,
                    |acc, a| if mask >> a & 1 == 1 { acc + grid.stride(a) } else { acc },
                );
                grad.component(c)[node].abs()
            })
        })
        .fold(0.0f64, f64::max);
    if scale == 0.0 {
        return Some(t);
    }
    for _ in 0..50 {
        let (g, jac) = eval(&t);
        if g.amax() <= 1e-14 * scale {
            break;
        }
        let step = jac.lu().solve(&g)?;
        for (ti, si) in t.iter_mut().zip(step.iter()) {
            *ti -= si;
        }
        if t.iter().any(|v| !v.is_finite() || *v < -1.0 || *v > 2.0) {
            return None;
        }
    }
    let (g, _) = eval(&t);
    let inside = t.iter().all(|&v| (-1e-9..=1.0 + 1e-9).contains(&v));
    (inside && g.amax() <= 1e-10 * scale).then(|| t.iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Value,
    Gradient,
}

/// Least-squares power law `osc ≈ C rᵅ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentFit {
    pub alpha: f64,
    pub c: f64,
    pub r2: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Fitted,
    TooFewRadii,
    IdenticallyZero,
}

/// Dyadic oscillation table around one center.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub center: Vec<f64>,
    pub kind: ReportKind,
    pub rho: f64,
    pub radii: Vec<f64>,
    pub oscillations: Vec<f64>,
    pub node_counts: Vec<usize>,
    /// `[r_lo, r_hi]` of radii admitted to the fit.
    pub window: (f64, f64),
    pub fit: Option<ExponentFit>,
    pub status: FitStatus,
    pub value_residual: Option<f64>,
    pub gradient_residual: Option<f64>,
}

impl DecayReport {
    pub fn alpha(&self) -> Option<f64> {
        self.fit.map(|f| f.alpha)
    }

    pub fn with_residuals(mut self, point: &LevelSetPoint) -> Self {
        self.value_residual = Some(point.value_residual);
        self.gradient_residual = point.gradient_residual;
        self
    }

    /// Radii and oscillations inside the fit window.
    pub fn windowed(&self) -> (Vec<f64>, Vec<f64>) {
        let (lo, hi) = self.window;
        self.radii
            .iter()
            .zip(&self.oscillations)
            .filter(|(r, _)| **r >= lo * (1.0 - RADIUS_SLACK) && **r <= hi * (1.0 + RADIUS_SLACK))
            .map(|(r, o)| (*r, *o))
            .unzip()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "r,osc")?;
        for (r, o) in self.radii.iter().zip(&self.oscillations) {
            writeln!(w, "{},{}", fmt_f64(*r), fmt_f64(*o))?;
        }
        Ok(())
    }

    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            x0: self.center.clone(),
            kind: self.kind,
            alpha_star: self.fit.map(|f| f.alpha),
            c: self.fit.map(|f| f.c),
            r2: self.fit.map(|f| f.r2),
            window: self.window,
            status: self.status,
            residuals: Residuals {
                value: self.value_residual,
                gradient: self.gradient_residual,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Residuals {
    pub value: Option<f64>,
    pub gradient: Option<f64>,
}

/// JSON summary of a [`DecayReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub x0: Vec<f64>,
    pub kind: ReportKind,
    pub alpha_star: Option<f64>,
    #[serde(rename = "C")]
    pub c: Option<f64>,
    pub r2: Option<f64>,
    pub window: (f64, f64),
    pub status: FitStatus,
    pub residuals: Residuals,
}

/// Ordinary least squares of `ln osc` on `ln r`, optionally restricted to
/// radii in `window`. Pairs with zero oscillation are dropped.
pub fn fit_exponent(radii: &[f64], osc: &[f64], window: Option<(f64, f64)>) -> Result<ExponentFit, RegmeterError> {
    if radii.len() != osc.len() {
        return Err(RegmeterError::Length);
    }
    let inside = |r: f64| match window {
        Some((lo, hi)) => r >= lo * (1.0 - RADIUS_SLACK) && r <= hi * (1.0 + RADIUS_SLACK),
        None => true,
    };
    let pairs: Vec<(f64, f64)> = radii
        .iter()
        .zip(osc)
        .filter(|(r, _)| inside(**r))
        .map(|(r, o)| (*r, *o))
        .collect();
    if !pairs.is_empty() && pairs.iter().all(|(_, o)| *o == 0.0) {
        return Err(RegmeterError::IdenticallyZero);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs
        .iter()
        .filter(|(_, o)| *o > 0.0)
        .map(|(r, o)| (r.ln(), o.ln()))
        .unzip();
    let m = xs.len();
    if m < MIN_FIT_POINTS {
        return Err(RegmeterError::TooFewRadii(m));
    }
    let mf = m as f64;
    let xbar = xs.iter().sum::<f64>() / mf;
    let ybar = ys.iter().sum::<f64>() / mf;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_tot: f64 = ys.iter().map(|y| (y - ybar).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(ExponentFit {
        alpha: slope,
        c: intercept.exp(),
        r2,
        points: m,
    })
}

/// Builds a table from pointwise deviations `dev(k)` of the nodes.
fn nodal_table(
    grid: &Grid,
    x0: &[f64],
    rho: f64,
    k_max: usize,
    kind: ReportKind,
    dev: impl Fn(usize) -> f64,
) -> Result<DecayReport, RegmeterError> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(RegmeterError::Ratio(rho));
    }
    if x0.len() != grid.dim() || !inside_detection_box(x0) {
        return Err(RegmeterError::OutsideBox(x0.to_vec()));
    }
    let dist = grid.distance_to_boundary(x0);
    let r0 = MAX_START_RADIUS.min(dist / 2.0);
    let h = grid.h();
    let d = grid.dim();

    // nodes within r0, sorted by distance, with running max of deviation
    let reach = r0 * (1.0 + RADIUS_SLACK);
    let lo: Vec<usize> = x0
        .iter()
        .map(|&c| grid.axis_index(c - reach).saturating_sub(1))
        .collect();
    let hi: Vec<usize> = x0
        .iter()
        .map(|&c| (grid.axis_index(c + reach) + 1).min(grid.n() - 1))
        .collect();
    let mut near: Vec<(f64, f64)> = Vec::new();
    let mut idx = lo.clone();
    loop {
        let k = grid.linear_index(&idx);
        let r = idx
            .iter()
            .zip(x0)
            .map(|(&i, c)| (grid.coordinate(i) - c).powi(2))
            .sum::<f64>()
            .sqrt();
        if r <= reach {
            near.push((r, dev(k)));
        }
        let mut a = 0;
        loop {
            if a == d {
                break;
            }
            if idx[a] < hi[a] {
                idx[a] += 1;
                break;
            }
            idx[a] = lo[a];
            a += 1;
        }
        if a == d {
            break;
        }
    }
    near.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut running = Vec::with_capacity(near.len());
    let mut m = 0.0f64;
    for &(_, v) in &near {
        m = m.max(v);
        running.push(m);
    }

    let mut radii = Vec::new();
    let mut oscillations = Vec::new();
    let mut node_counts = Vec::new();
    for k in 0..=k_max {
        let r = r0 * rho.powi(k as i32);
        let count = near.partition_point(|(d, _)| *d <= r * (1.0 + RADIUS_SLACK));
        if count < MIN_BALL_NODES {
            continue;
        }
        radii.push(r);
        oscillations.push(running[count - 1]);
        node_counts.push(count);
    }
    if radii.is_empty() {
        return Err(RegmeterError::NoRadii(x0.to_vec()));
    }
    let window = (WINDOW_CELLS * h, dist / 2.0);
    Ok(finish_report(x0, kind, rho, radii, oscillations, node_counts, window))
}

fn finish_report(
    x0: &[f64],
    kind: ReportKind,
    rho: f64,
    radii: Vec<f64>,
    oscillations: Vec<f64>,
    node_counts: Vec<usize>,
    window: (f64, f64),
) -> DecayReport {
    let (fit, status) = match fit_exponent(&radii, &oscillations, Some(window)) {
        Ok(f) => (Some(f), FitStatus::Fitted),
        Err(RegmeterError::IdenticallyZero) => (None, FitStatus::IdenticallyZero),
        Err(_) => (None, FitStatus::TooFewRadii),
    };
    DecayReport {
        center: x0.to_vec(),
        kind,
        rho,
        radii,
        oscillations,
        node_counts,
        window,
        fit,
        status,
        value_residual: None,
        gradient_residual: None,
    }
}

/// `osc_k = max_{|x − x₀| ≤ r_k} |u(x) − u₀|` over grid nodes, with
/// `r_k = r₀ρᵏ`, `r₀ = min(1/4, dist(x₀, ∂)/2)`. Use `u₀ = 0` at detected
/// zeros.
pub fn oscillation_table(
    u: &DiscreteField,
    x0: &[f64],
    u0: f64,
    rho: f64,
    k_max: usize,
) -> Result<DecayReport, RegmeterError> {
    let v = u.values();
    nodal_table(u.grid(), x0, rho, k_max, ReportKind::Value, |k| (v[k] - u0).abs())
}

/// Gradient analogue of [`oscillation_table`] with `|Du(x) − Du₀|₂`.
pub fn gradient_oscillation_table(
    grad: &VectorField,
    x0: &[f64],
    du0: &[f64],
    rho: f64,
    k_max: usize,
) -> Result<DecayReport, RegmeterError> {
    nodal_table(grad.grid(), x0, rho, k_max, ReportKind::Gradient, |k| {
        grad.distance_at(k, du0)
    })
}

/// Oscillation table of a closed-form 1D function, sampled at `samples`
/// equispaced points of each interval `[x₀ − r, x₀ + r]` (endpoints
/// included). All given radii enter the fit.
pub fn closed_form_table_1d(
    f: impl Fn(f64) -> f64,
    x0: f64,
    u0: f64,
    radii: &[f64],
    samples: usize,
) -> Result<DecayReport, RegmeterError> {
    let samples = samples.max(3);
    let oscillations: Vec<f64> = radii
        .iter()
        .map(|&r| {
            (0..samples)
                .map(|i| {
                    let s = -1.0 + 2.0 * i as f64 / (samples - 1) as f64;
                    (f(x0 + s * r) - u0).abs()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    if radii.is_empty() {
        return Err(RegmeterError::NoRadii(vec![x0]));
    }
    let lo = radii.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = radii.iter().cloned().fold(0.0, f64::max);
    let rho = if radii.len() > 1 { radii[1] / radii[0] } else { 0.5 };
    Ok(finish_report(
        &[x0],
        ReportKind::Value,
        rho,
        radii.to_vec(),
        oscillations,
        vec![samples; radii.len()],
        (lo, hi),
    ))
}

/// Ratio and smallness threshold `ρ = (1/(2C))^{1/(1−α)}`, `δ = ρᵅ/2` from
/// a decay constant `C` and target exponent `α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniversalChoice {
    pub rho: f64,
    pub delta: f64,
}

impl UniversalChoice {
    pub fn new(c: f64, alpha: f64) -> Result<Self, RegmeterError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(RegmeterError::Universal(format!(
                "alpha must lie in (0,1), got {alpha}"
            )));
        }
        if !(c > 0.5 && c.is_finite()) {
            return Err(RegmeterError::Universal(format!(
                "C must exceed 1/2 so that rho < 1, got {c}"
            )));
        }
        let rho = (1.0 / (2.0 * c)).powf(1.0 / (1.0 - alpha));
        Ok(Self {
            rho,
            delta: rho.powf(alpha) / 2.0,
        })
    }
}
