//! Discrete Dirichlet problems for the double-divergence operator
//! `∂²ᵢⱼ(aⁱʲu) + ∂ᵢ(bⁱu) + cu = f` and its divergence-form rewrite
//! `∂ᵢ(aⁱʲ∂ⱼu + (∂ⱼaⁱʲ)u) = 0`.
//!
//! Unknowns are the interior nodes in lexicographic order; boundary values
//! enter through a separate coupling block so one assembly serves any
//! Dirichlet data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::banded::{BandError, BandLu, BandMatrix};
use crate::coeff::{CoefficientField, LowerOrderData, Smoothness};
use crate::grid::{second_diff, DiscreteField, Grid, GridError};

/// Relative residual every accepted solve must reach.
pub const RESIDUAL_CONTRACT: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum AssembleError {
    #[error("coefficient field has dimension {field}, grid has dimension {grid}")]
    Dimension { field: usize, grid: usize },
    #[error("divergence form needs differentiable coefficients, got {0:?}")]
    Smoothness(Smoothness),
    #[error("test field is nonzero at node {0} within two layers of the boundary")]
    Support(usize),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("boundary data is not finite at node {0}")]
    BoundaryData(usize),
    #[error("singular system: {0}")]
    Singular(BandError),
    #[error("system too large for the banded solver: {0}")]
    TooLarge(BandError),
    #[error("solve did not reach the residual contract (residual {residual:e}, relative {relative:e})")]
    NonConvergent { residual: f64, relative: f64 },
}

impl From<BandError> for SolveError {
    fn from(e: BandError) -> Self {
        match e {
            BandError::TooLarge { .. } => SolveError::TooLarge(e),
            BandError::ZeroPivot { .. } => SolveError::Singular(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    DoubleDivergence,
    DivergenceForm,
}

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        for row in rows {
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self {
            ncols,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).filter(|&(cc, _)| cc == c).map(|(_, v)| v).sum()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows())
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `(lower, upper)` bandwidth.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for r in 0..self.nrows() {
            for (c, _) in self.row(r) {
                if c < r {
                    kl = kl.max(r - c);
                } else {
                    ku = ku.max(c - r);
                }
            }
        }
        (kl, ku)
    }

    fn to_band(&self) -> Result<BandMatrix, BandError> {
        let (kl, ku) = self.bandwidths();
        let mut band = BandMatrix::zeros(self.nrows(), kl, ku)?;
        for r in 0..self.nrows() {
            for (c, v) in self.row(r) {
                band.add(r, c, v);
            }
        }
        Ok(band)
    }
}

/// Interior-node equations plus their coupling to boundary values.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    grid: Grid,
    form: Form,
    interior: Vec<usize>,
    slot: Vec<Option<usize>>,
    /// interior × interior
    matrix: SparseMatrix,
    /// interior rows × global node columns, boundary columns only
    coupling: SparseMatrix,
    source: Vec<f64>,
}

impl LinearSystem {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn form(&self) -> Form {
        self.form
    }

    pub fn unknowns(&self) -> usize {
        self.interior.len()
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    /// Interior slot of a global node, `None` on the boundary.
    pub fn slot(&self, node: usize) -> Option<usize> {
        self.slot[node]
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn coupling(&self) -> &SparseMatrix {
        &self.coupling
    }

    /// Right-hand side before boundary data is moved over.
    pub fn source(&self) -> &[f64] {
        &self.source
    }

    /// Full coefficient of global node `node` in the row of interior slot `row`.
    pub fn entry(&self, row: usize, node: usize) -> f64 {
        match self.slot[node] {
            Some(c) => self.matrix.get(row, c),
            None => self.coupling.get(row, node),
        }
    }

    /// Discrete operator applied to a full-grid field, one value per interior row.
    pub fn apply(&self, u: &DiscreteField) -> Vec<f64> {
        let v = u.values();
        let interior: Vec<f64> = self.interior.iter().map(|&k| v[k]).collect();
        let mut out = self.matrix.mul_vec(&interior);
        for (r, o) in out.iter_mut().enumerate() {
            *o += self.coupling.row(r).map(|(c, a)| a * v[c]).sum::<f64>();
        }
        out
    }

    /// Largest absolute row sum over the full rows.
    pub fn row_norm(&self) -> f64 {
        (0..self.unknowns())
            .map(|r| {
                self.matrix.row(r).map(|(_, v)| v.abs()).sum::<f64>()
                    + self.coupling.row(r).map(|(_, v)| v.abs()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Factors the interior block once for repeated solves.
    pub fn factor(&self) -> Result<Factorization<'_>, SolveError> {
        let band = self.matrix.to_band()?;
        let lu = band.factor()?;
        Ok(Factorization { system: self, lu })
    }
}

/// Accumulates `(node, coefficient)` pairs for one row.
struct RowBuilder(Vec<(usize, f64)>);

impl RowBuilder {
    fn add(&mut self, node: usize, v: f64) {
        self.0.push((node, v));
    }

    fn finish(mut self) -> Vec<(usize, f64)> {
        self.0.sort_by_key(|&(c, _)| c);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.0.len());
        for (c, v) in self.0 {
            match out.last_mut() {
                Some(last) if last.0 == c => last.1 += v,
                _ => out.push((c, v)),
            }
        }
        out
    }
}

fn build_system(grid: Grid, form: Form, rows: Vec<(Vec<(usize, f64)>, f64)>) -> LinearSystem {
    let interior: Vec<usize> = (0..grid.node_count()).filter(|&k| !grid.is_boundary(k)).collect();
    let mut slot = vec![None; grid.node_count()];
    for (s, &k) in interior.iter().enumerate() {
        slot[k] = Some(s);
    }
    let mut inner = Vec::with_capacity(rows.len());
    let mut outer = Vec::with_capacity(rows.len());
    let mut source = Vec::with_capacity(rows.len());
    for (row, f) in rows {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (node, v) in row {
            match slot[node] {
                Some(c) => a.push((c, v)),
                None => b.push((node, v)),
            }
        }
        inner.push(a);
        outer.push(b);
        source.push(f);
    }
    LinearSystem {
        grid,
        form,
        matrix: SparseMatrix::from_rows(interior.len(), inner),
        coupling: SparseMatrix::from_rows(grid.node_count(), outer),
        interior,
        slot,
        source,
    }
}

fn check_dims(grid: &Grid, field: &CoefficientField) -> Result<(), AssembleError> {
    if field.dim() != grid.dim() {
        return Err(AssembleError::Dimension {
            field: field.dim(),
            grid: grid.dim(),
        });
    }
    Ok(())
}

/// Row `k`: `Σᵢⱼ D_{ij}(aⁱʲu)ₖ + Σᵢ D⁰ᵢ(bⁱu)ₖ + c(xₖ)uₖ = f(xₖ)`, with the
/// product `aⁱʲu` formed at nodes before differencing.
pub fn assemble_double_div(
    grid: &Grid,
    field: &CoefficientField,
    lower: &LowerOrderData,
) -> Result<LinearSystem, AssembleError> {
    check_dims(grid, field)?;
    let grid = *grid;
    let d = grid.dim();
    let h = grid.h();
    let h2 = h * h;
    let coeffs: Vec<f64> = (0..grid.node_count())
        .into_par_iter()
        .flat_map_iter(|k| field.entries(&grid.point(k)))
        .collect();
    let drift: Option<Vec<Vec<f64>>> = lower
        .drift
        .as_ref()
        .map(|b| (0..grid.node_count()).map(|k| b(&grid.point(k))).collect());
    let a = |k: usize, i: usize, j: usize| coeffs[k * d * d + i * d + j];

    let rows = (0..grid.node_count())
        .into_par_iter()
        .filter(|&k| !grid.is_boundary(k))
        .map(|k| {
            let mut row = RowBuilder(Vec::with_capacity(9 * d));
            for i in 0..d {
                let si = grid.stride(i);
                for j in 0..d {
                    if i == j {
                        row.add(k + si, a(k + si, i, i) / h2);
                        row.add(k, -2.0 * a(k, i, i) / h2);
                        row.add(k - si, a(k - si, i, i) / h2);
                    } else {
                        let sj = grid.stride(j);
                        let q = 4.0 * h2;
                        for (node, sign) in [
                            (k + si + sj, 1.0),
                            (k + si - sj, -1.0),
                            (k - si + sj, -1.0),
                            (k - si - sj, 1.0),
                        ] {
                            row.add(node, sign * a(node, i, j) / q);
                        }
                    }
                }
            }
            if let Some(b) = &drift {
                for i in 0..d {
                    let si = grid.stride(i);
                    row.add(k + si, b[k + si][i] / (2.0 * h));
                    row.add(k - si, -b[k - si][i] / (2.0 * h));
                }
            }
            let x = grid.point(k);
            let c = lower.potential_at(&x);
            if c != 0.0 {
                row.add(k, c);
            }
            (row.finish(), lower.source_at(&x))
        })
        .collect();
    Ok(build_system(grid, Form::DoubleDivergence, rows))
}

/// Row `k`: `Σᵢ ∂ᵢ(Σⱼ aⁱʲ∂ⱼu + (∂ⱼaⁱʲ)u)` discretized conservatively.
///
/// Diagonal terms use fluxes at the half nodes `xₖ ± h/2·eᵢ`,
/// `F = aⁱⁱ(uₖ₊₁ − uₖ)/h + ∂ᵢaⁱⁱ(uₖ₊₁ + uₖ)/2`; off-diagonal terms use
/// nested centered differences `D⁰ᵢ(aⁱʲD⁰ⱼu + (∂ⱼaⁱʲ)u)`, which stay within
/// the 3ᵈ neighborhood. Missing analytic derivatives fall back to centered
/// differences with step `h`.
pub fn assemble_divergence_form(grid: &Grid, field: &CoefficientField) -> Result<LinearSystem, AssembleError> {
    check_dims(grid, field)?;
    let smoothness = field.smoothness();
    if !smoothness.admits_divergence_form() {
        return Err(AssembleError::Smoothness(smoothness));
    }
    let grid = *grid;
    let d = grid.dim();
    let h = grid.h();
    let h2 = h * h;

    let rows = (0..grid.node_count())
        .into_par_iter()
        .filter(|&k| !grid.is_boundary(k))
        .map(|k| {
            let mut row = RowBuilder(Vec::with_capacity(9 * d));
            let x = grid.point(k);
            for i in 0..d {
                let si = grid.stride(i);
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += 0.5 * h;
                xm[i] -= 0.5 * h;
                let ap = field.entries(&xp)[i * d + i];
                let am = field.entries(&xm)[i * d + i];
                let gp = field.derivative_or_fd(&xp, i, i, i, h);
                let gm = field.derivative_or_fd(&xm, i, i, i, h);
                row.add(k + si, ap / h2 + gp / (2.0 * h));
                row.add(k, -(ap + am) / h2 + (gp - gm) / (2.0 * h));
                row.add(k - si, am / h2 - gm / (2.0 * h));

                for j in (0..d).filter(|&j| j != i) {
                    let sj = grid.stride(j);
                    for (centre, sign) in [(k + si, 1.0), (k - si, -1.0)] {
                        let y = grid.point(centre);
                        let aij = field.entries(&y)[i * d + j];
                        let q = 4.0 * h2;
                        row.add(centre + sj, sign * aij / q);
                        row.add(centre - sj, -sign * aij / q);
                        let g = field.derivative_or_fd(&y, i, j, j, h);
                        row.add(centre, sign * g / (2.0 * h));
                    }
                }
            }
            (row.finish(), 0.0)
        })
        .collect();
    Ok(build_system(grid, Form::DivergenceForm, rows))
}

/// Solver diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct SolveStats {
    pub unknowns: usize,
    pub lower_bandwidth: usize,
    pub upper_bandwidth: usize,
    pub refinement_steps: usize,
    pub residual: f64,
    pub relative_residual: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub field: DiscreteField,
    pub stats: SolveStats,
}

/// LU factors of a system's interior block.
pub struct Factorization<'a> {
    system: &'a LinearSystem,
    lu: BandLu,
}

impl Factorization<'_> {
    /// Solves with boundary values taken from `g`.
    pub fn solve(&self, g: impl Fn(&[f64]) -> f64) -> Result<Solution, SolveError> {
        let grid = self.system.grid;
        let mut full = DiscreteField::zeros(grid);
        {
            let v = full.values_mut();
            for k in 0..grid.node_count() {
                if grid.is_boundary(k) {
                    v[k] = g(&grid.point(k));
                }
            }
        }
        self.solve_with_boundary(full)
    }

    /// Solves using the boundary entries of `boundary`; interior entries are ignored.
    pub fn solve_with_boundary(&self, boundary: DiscreteField) -> Result<Solution, SolveError> {
        let sys = self.system;
        let grid = sys.grid;
        let mut full = boundary;
        if let Some(k) = (0..grid.node_count()).find(|&k| grid.is_boundary(k) && !full.value(k).is_finite()) {
            return Err(SolveError::BoundaryData(k));
        }
        for &k in &sys.interior {
            full.values_mut()[k] = 0.0;
        }
        let rhs: Vec<f64> = {
            let lifted = sys.apply(&full);
            sys.source.iter().zip(&lifted).map(|(f, b)| f - b).collect()
        };
        let mut x = rhs.clone();
        self.lu.solve_in_place(&mut x);

        let rhs_norm = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let a_norm = sys.row_norm();
        let mut steps = 0;
        let (mut residual, mut relative);
        loop {
            let ax = sys.matrix.mul_vec(&x);
            let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            residual = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let x_norm = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let scale = a_norm * x_norm + rhs_norm;
            relative = if scale > 0.0 { residual / scale } else { 0.0 };
            if relative <= 1e-15 || steps >= 3 {
                break;
            }
            let mut dx = r;
            self.lu.solve_in_place(&mut dx);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
            steps += 1;
        }
        if !(relative <= RESIDUAL_CONTRACT) || x.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::NonConvergent { residual, relative });
        }
        {
            let v = full.values_mut();
            for (&k, xi) in sys.interior.iter().zip(&x) {
                v[k] = *xi;
            }
        }
        let (kl, ku) = self.lu.bandwidths();
        Ok(Solution {
            field: full,
            stats: SolveStats {
                unknowns: sys.unknowns(),
                lower_bandwidth: kl,
                upper_bandwidth: ku,
                refinement_steps: steps,
                residual,
                relative_residual: relative,
            },
        })
    }
}

/// Dirichlet solve: boundary nodes take `g`, interior nodes solve the system.
pub fn solve_dirichlet(system: &LinearSystem, g: impl Fn(&[f64]) -> f64) -> Result<Solution, SolveError> {
    system.factor()?.solve(g)
}

/// `max` over interior rows of `|row·u − rhs|`.
pub fn residual(system: &LinearSystem, u: &DiscreteField) -> f64 {
    system
        .apply(u)
        .iter()
        .zip(&system.source)
        .fold(0.0f64, |m, (a, f)| m.max((a - f).abs()))
}

/// Discrete pairing defect together with the sum of absolute terms, so
/// callers can judge it relative to round-off.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PairingDefect {
    pub defect: f64,
    pub scale: f64,
}

/// `|Σₖ Σᵢⱼ D_{ij}(aⁱʲw)ₖ φₖ hᵈ − Σₖ Σᵢⱼ (aⁱʲw)ₖ D_{ij}φₖ hᵈ|`.
///
/// The nodal product `aⁱʲw` is paired against `D_{ij}φ`; with φ vanishing on
/// the two outermost node layers the centered stencils are exactly
/// self-adjoint, so the defect is round-off.
pub fn adjoint_pairing_defect(
    grid: &Grid,
    field: &CoefficientField,
    w: &DiscreteField,
    phi: &DiscreteField,
) -> Result<PairingDefect, AssembleError> {
    check_dims(grid, field)?;
    if w.grid() != grid || phi.grid() != grid {
        return Err(AssembleError::Grid(GridError::GridMismatch));
    }
    if let Some(k) = (0..grid.node_count()).find(|&k| grid.layer(k) < 2 && phi.value(k) != 0.0) {
        return Err(AssembleError::Support(k));
    }
    let d = grid.dim();
    let coeffs: Vec<Vec<f64>> = (0..grid.node_count()).map(|k| field.entries(&grid.point(k))).collect();
    let vol = grid.h().powi(d as i32);
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut scale = 0.0;
    for i in 0..d {
        for j in 0..d {
            let aw = DiscreteField::new(
                *grid,
                coeffs.iter().zip(w.values()).map(|(a, wk)| a[i * d + j] * wk).collect(),
            )?;
            let d_aw = second_diff(&aw, i, j)?;
            let d_phi = second_diff(phi, i, j)?;
            for k in 0..grid.node_count() {
                let l = d_aw.value(k) * phi.value(k) * vol;
                let r = aw.value(k) * d_phi.value(k) * vol;
                lhs += l;
                rhs += r;
                scale += l.abs() + r.abs();
            }
        }
    }
    Ok(PairingDefect {
        defect: (lhs - rhs).abs(),
        scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{make_constant, make_holder_bump, make_sobolev_perturbation};
    use nalgebra::DMatrix;

    fn identity(d: usize) -> CoefficientField {
        make_constant(DMatrix::identity(d, d)).unwrap()
    }

    fn slot_of(sys: &LinearSystem, idx: &[usize]) -> (usize, usize) {
        let k = sys.grid().linear_index(idx);
        (sys.slot(k).unwrap(), k)
    }

    #[test]
    fn identity_1d_gives_three_point_laplacian() {
        let g = Grid::new(1, 9).unwrap();
        let sys = assemble_double_div(&g, &identity(1), &LowerOrderData::none()).unwrap();
        assert_eq!(sys.unknowns(), 7);
        let h2 = g.h() * g.h();
        let (r, k) = slot_of(&sys, &[4]);
        assert_eq!(sys.entry(r, k - 1) * h2, 1.0);
        assert_eq!(sys.entry(r, k) * h2, -2.0);
        assert_eq!(sys.entry(r, k + 1) * h2, 1.0);
        // first row couples to the left boundary node
        assert_eq!(sys.coupling().get(0, 0) * h2, 1.0);
    }

    #[test]
    fn holder_1d_row_uses_nodal_coefficients() {
        let g = Grid::new(1, 9).unwrap();
        let f = make_holder_bump(1, DMatrix::identity(1, 1), 0.5, 0.5, &[0.0]).unwrap();
        let sys = assemble_double_div(&g, &f, &LowerOrderData::none()).unwrap();
        let a = |x: f64| 1.0 + 0.5 * x.abs().sqrt();
        let h2 = g.h() * g.h();
        for idx in 1..8 {
            let (r, k) = slot_of(&sys, &[idx]);
            let x = g.coordinate(idx);
            assert!((sys.entry(r, k - 1) - a(x - g.h()) / h2).abs() < 1e-12);
            assert!((sys.entry(r, k) + 2.0 * a(x) / h2).abs() < 1e-12);
            assert!((sys.entry(r, k + 1) - a(x + g.h()) / h2).abs() < 1e-12);
        }
    }

    #[test]
    fn potential_shifts_diagonal() {
        let g = Grid::new(2, 9).unwrap();
        let plain = assemble_double_div(&g, &identity(2), &LowerOrderData::none()).unwrap();
        let shifted = assemble_double_div(&g, &identity(2), &LowerOrderData::constant(&[0.0, 0.0], 1.0, 0.0)).unwrap();
        for r in 0..plain.unknowns() {
            for c in 0..plain.unknowns() {
                let expect = plain.matrix().get(r, c) + if r == c { 1.0 } else { 0.0 };
                assert_eq!(shifted.matrix().get(r, c), expect);
            }
        }
    }

    #[test]
    fn drift_enters_with_plus_sign() {
        // ∂(b u) with b constant: centered difference of u scaled by b
        let g = Grid::new(1, 9).unwrap();
        let sys = assemble_double_div(&g, &identity(1), &LowerOrderData::constant(&[2.0], 0.0, 0.0)).unwrap();
        let u = DiscreteField::from_fn(g, |x| x[0]);
        let lap_free: Vec<f64> = sys.apply(&u);
        // Laplacian of x vanishes, D⁰(2x) = 2
        assert!(lap_free.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn constant_forms_agree_on_quadratics() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let f = make_constant(a).unwrap();
        let g = Grid::new(2, 17).unwrap();
        let dd = assemble_double_div(&g, &f, &LowerOrderData::none()).unwrap();
        let df = assemble_divergence_form(&g, &f).unwrap();
        let u = DiscreteField::from_fn(g, |x| 0.7 * x[0] * x[0] - 0.4 * x[0] * x[1] + 1.3 * x[1] * x[1] - x[1]);
        let diff = dd
            .apply(&u)
            .iter()
            .zip(df.apply(&u))
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff <= 1e-12, "{diff}");
        // both reproduce Σ aⁱʲ ∂ᵢⱼu = 2(2·0.7 + 2·0.5·(−0.2) + 1.3)
        let exact = 2.0 * 0.7 * 2.0 + 2.0 * 0.5 * -0.4 + 1.0 * 1.3 * 2.0;
        assert!(dd.apply(&u).iter().all(|v| (v - exact).abs() < 1e-10));
    }

    #[test]
    fn divergence_form_rejects_holder() {
        let g = Grid::new(2, 9).unwrap();
        let f = make_holder_bump(2, DMatrix::identity(2, 2), 0.1, 0.3, &[0.0, 0.0]).unwrap();
        assert!(matches!(
            assemble_divergence_form(&g, &f),
            Err(AssembleError::Smoothness(Smoothness::Holder { .. }))
        ));
        assert!(matches!(
            assemble_double_div(&g, &identity(1), &LowerOrderData::none()),
            Err(AssembleError::Dimension { field: 1, grid: 2 })
        ));
    }

    #[test]
    fn null_quadratic_is_reproduced() {
        for n in [9, 33] {
            let g = Grid::new(2, n).unwrap();
            let sys = assemble_double_div(&g, &identity(2), &LowerOrderData::none()).unwrap();
            let q = |x: &[f64]| x[0] * x[0] - x[1] * x[1];
            let sol = solve_dirichlet(&sys, q).unwrap();
            assert!(sol.field.max_error_where(q, |_| true) <= 1e-8);
            assert!(sol.stats.relative_residual <= RESIDUAL_CONTRACT);
        }
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let g = Grid::new(2, 17).unwrap();
        let f = make_holder_bump(2, DMatrix::identity(2, 2), 0.1, 0.3, &[0.2, 0.1]).unwrap();
        let sys = assemble_double_div(&g, &f, &LowerOrderData::none()).unwrap();
        let sol = solve_dirichlet(&sys, |_| 0.0).unwrap();
        assert_eq!(sol.field.sup_norm(), 0.0);
        assert_eq!(residual(&sys, &sol.field), 0.0);
    }

    #[test]
    fn residual_scales_and_detects_perturbation() {
        let g = Grid::new(2, 17).unwrap();
        let f = make_holder_bump(2, DMatrix::identity(2, 2), 0.1, 0.3, &[0.2, 0.1]).unwrap();
        let sys = assemble_double_div(&g, &f, &LowerOrderData::none()).unwrap();
        let u = DiscreteField::from_fn(g, |x| (3.0 * x[0]).sin() + x[1] * x[1]);
        let base = residual(&sys, &u);
        let scaled = residual(&sys, &u.scaled(-2.5));
        assert!((scaled - 2.5 * base).abs() <= 1e-12 * scaled);

        let sol = solve_dirichlet(&sys, |x| x[0]).unwrap();
        let r0 = residual(&sys, &sol.field);
        let mut tampered = sol.field.clone();
        let k = g.linear_index(&[8, 8]);
        let delta = 1e-3;
        tampered.values_mut()[k] += delta;
        let r1 = residual(&sys, &tampered);
        let bound = delta * 2.0 * 2.0 * f.lambda_min() / (g.h() * g.h());
        assert!(r1 - r0 >= bound * (1.0 - 1e-9), "{r1} vs {bound}");
    }

    #[test]
    fn pairing_defect_is_roundoff() {
        let g = Grid::new(1, 9).unwrap();
        let f = make_holder_bump(1, DMatrix::identity(1, 1), 0.5, 0.5, &[0.0]).unwrap();
        let w = DiscreteField::from_fn(g, |x| (2.0 * x[0]).cos() + x[0]);
        let phi = DiscreteField::from_fn(g, |x| if x[0].abs() < 0.6 { 0.36 - x[0] * x[0] } else { 0.0 });
        let p = adjoint_pairing_defect(&g, &f, &w, &phi).unwrap();
        assert!(p.defect <= 1e-12 * p.scale.max(1.0));

        let bad = DiscreteField::from_fn(g, |x| 1.0 - x[0] * x[0]);
        assert!(matches!(
            adjoint_pairing_defect(&g, &f, &w, &bad),
            Err(AssembleError::Support(_))
        ));
    }

    #[test]
    fn sobolev_forms_are_consistent() {
        // both discretizations of the same operator applied to x₁²
        let f = make_sobolev_perturbation(2, DMatrix::identity(2, 2), 0.1, 1.5, &[0.3, 0.2]).unwrap();
        let mut prev = None;
        let mut ratios = Vec::new();
        for n in [33, 65, 129] {
            let g = Grid::new(2, n).unwrap();
            let dd = assemble_double_div(&g, &f, &LowerOrderData::none()).unwrap();
            let df = assemble_divergence_form(&g, &f).unwrap();
            let u = DiscreteField::from_fn(g, |x| x[0] * x[0]);
            // compare away from the coefficient's singular point
            let far: Vec<bool> = sys_far(&dd, &g, &[0.3, 0.2], 0.25);
            let diff = dd
                .apply(&u)
                .iter()
                .zip(df.apply(&u))
                .zip(&far)
                .filter(|(_, &keep)| keep)
                .fold(0.0f64, |m, ((a, b), _)| m.max((a - b).abs()));
            if let Some(p) = prev {
                ratios.push(p / diff);
            }
            prev = Some(diff);
        }
        for r in ratios {
            assert!((3.0..=5.0).contains(&r), "ratio {r}");
        }
    }

    fn sys_far(sys: &LinearSystem, g: &Grid, z: &[f64], r: f64) -> Vec<bool> {
        sys.interior_nodes()
            .iter()
            .map(|&k| {
                let x = g.point(k);
                x.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() > r
            })
            .collect()
    }
}
