//! Uniform tensor grids on `[−1, 1]^d`, nodal fields and centered stencils.

use std::io::{self, Write};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("dimension must be 1, 2 or 3, got {0}")]
    Dimension(usize),
    #[error("nodes per axis must be odd so the origin is a node, got {0}")]
    EvenNodes(usize),
    #[error("nodes per axis must lie in [9, {max}] for d={dim}, got {n}")]
    NodeRange { dim: usize, n: usize, max: usize },
    #[error("field has {got} values, grid has {expected} nodes")]
    Length { expected: usize, got: usize },
    #[error("field value at node {0} is not finite")]
    NonFinite(usize),
    #[error("axis {axis} out of range for d={dim}")]
    Axis { axis: usize, dim: usize },
    #[error("fields live on different grids")]
    GridMismatch,
}

/// Largest admissible nodes-per-axis for each dimension.
pub fn max_nodes(dim: usize) -> usize {
    match dim {
        1 => 4097,
        2 => 1025,
        _ => 129,
    }
}

/// Uniform grid with `n` nodes per axis on `[−1, 1]^d`, `h = 2/(n − 1)`.
///
/// Nodes are numbered lexicographically with axis 0 fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    dim: usize,
    n: usize,
}

impl Grid {
    pub fn new(dim: usize, n: usize) -> Result<Self, GridError> {
        if !(1..=3).contains(&dim) {
            return Err(GridError::Dimension(dim));
        }
        if n.is_multiple_of(2) {
            return Err(GridError::EvenNodes(n));
        }
        let max = max_nodes(dim);
        if n < 9 || n > max {
            return Err(GridError::NodeRange { dim, n, max });
        }
        Ok(Self { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nodes per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        2.0 / (self.n - 1) as f64
    }

    pub fn node_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Coordinate of axis index `i`; the middle index maps to exactly 0.
    pub fn coordinate(&self, i: usize) -> f64 {
        let m = (self.n - 1) as f64;
        (2.0 * i as f64 - m) / m
    }

    /// Nearest axis index to coordinate `x` (clamped to the grid).
    pub fn axis_index(&self, x: f64) -> usize {
        let m = (self.n - 1) as f64;
        let i = ((x + 1.0) * m / 2.0).round();
        i.clamp(0.0, m) as usize
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow(axis as u32)
    }

    pub fn multi_index(&self, mut k: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        for slot in idx.iter_mut().take(self.dim) {
            *slot = k % self.n;
            k /= self.n;
        }
        idx
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        idx.iter().take(self.dim).rev().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn point(&self, k: usize) -> Vec<f64> {
        let idx = self.multi_index(k);
        idx[..self.dim].iter().map(|&i| self.coordinate(i)).collect()
    }

    /// Node nearest to `x`.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let idx: Vec<usize> = x.iter().map(|&c| self.axis_index(c)).collect();
        self.linear_index(&idx)
    }

    /// Distance, in nodes, to the nearest boundary face (0 on the boundary).
    pub fn layer(&self, k: usize) -> usize {
        let idx = self.multi_index(k);
        idx[..self.dim]
            .iter()
            .map(|&i| i.min(self.n - 1 - i))
            .min()
            .unwrap_or(0)
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        self.layer(k) == 0
    }

    /// Node `k + offset·e_axis`, if it exists.
    pub fn neighbor(&self, k: usize, axis: usize, offset: isize) -> Option<usize> {
        let i = self.multi_index(k)[axis] as isize + offset;
        if i < 0 || i >= self.n as isize {
            return None;
        }
        Some((k as isize + offset * self.stride(axis) as isize) as usize)
    }

    /// Euclidean distance from `x` to the boundary of the box.
    pub fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        x.iter().map(|c| 1.0 - c.abs()).fold(f64::INFINITY, f64::min)
    }
}

/// One real value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteField {
    grid: Grid,
    values: Vec<f64>,
}

impl DiscreteField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.node_count() {
            return Err(GridError::Length {
                expected: grid.node_count(),
                got: values.len(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(k));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.node_count()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.node_count()).map(|k| f(&grid.point(k))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn value(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sup-norm distance to `other`.
    pub fn max_abs_diff(&self, other: &DiscreteField) -> Result<f64, GridError> {
        if self.grid != other.grid {
            return Err(GridError::GridMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Sup-norm distance to `f` restricted to nodes accepted by `keep`.
    pub fn max_error_where(&self, f: impl Fn(&[f64]) -> f64, keep: impl Fn(usize) -> bool) -> f64 {
        (0..self.grid.node_count())
            .filter(|&k| keep(k))
            .map(|k| (self.values[k] - f(&self.grid.point(k))).abs())
            .fold(0.0, f64::max)
    }

    /// Writes `x1,..,xd,value` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write_header(&mut w, self.grid.dim(), &["value"])?;
        for k in 0..self.grid.node_count() {
            write_row(&mut w, &self.grid.point(k), &[self.values[k]])?;
        }
        Ok(())
    }
}

/// `d` real components per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn new(grid: Grid, components: Vec<Vec<f64>>) -> Result<Self, GridError> {
        if components.len() != grid.dim() {
            return Err(GridError::Length {
                expected: grid.dim(),
                got: components.len(),
            });
        }
        for c in &components {
            if c.len() != grid.node_count() {
                return Err(GridError::Length {
                    expected: grid.node_count(),
                    got: c.len(),
                });
            }
            if let Some(k) = c.iter().position(|v| !v.is_finite()) {
                return Err(GridError::NonFinite(k));
            }
        }
        Ok(Self { grid, components })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let mut components = vec![vec![0.0; grid.node_count()]; grid.dim()];
        for k in 0..grid.node_count() {
            for (c, v) in components.iter_mut().zip(f(&grid.point(k))) {
                c[k] = v;
            }
        }
        Self { grid, components }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.components[axis]
    }

    pub fn at(&self, k: usize) -> Vec<f64> {
        self.components.iter().map(|c| c[k]).collect()
    }

    /// Euclidean norm of `v(k) − reference`.
    pub fn distance_at(&self, k: usize, reference: &[f64]) -> f64 {
        self.components
            .iter()
            .zip(reference)
            .map(|(c, r)| (c[k] - r).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let names: Vec<String> = (1..=self.grid.dim()).map(|i| format!("du{i}")).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        write_header(&mut w, self.grid.dim(), &names)?;
        for k in 0..self.grid.node_count() {
            write_row(&mut w, &self.grid.point(k), &self.at(k))?;
        }
        Ok(())
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_header<W: Write>(w: &mut W, dim: usize, values: &[&str]) -> io::Result<()> {
    let mut cols: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    cols.extend(values.iter().map(|s| s.to_string()));
    writeln!(w, "{}", cols.join(","))
}

fn write_row<W: Write>(w: &mut W, x: &[f64], values: &[f64]) -> io::Result<()> {
    let row: Vec<String> = x.iter().chain(values).map(|&v| fmt_f64(v)).collect();
    writeln!(w, "{}", row.join(","))
}

/// Centered second difference `D_{ij}w` on interior nodes; boundary entries
/// of the result are zero.
///
/// Pure second derivatives use the 3-point stencil, mixed ones the 4-point
/// cross stencil `(w₊₊ − w₊₋ − w₋₊ + w₋₋)/(4h²)`.
pub fn second_diff(w: &DiscreteField, i: usize, j: usize) -> Result<DiscreteField, GridError> {
    let grid = *w.grid();
    let d = grid.dim();
    for axis in [i, j] {
        if axis >= d {
            return Err(GridError::Axis { axis, dim: d });
        }
    }
    let h2 = grid.h() * grid.h();
    let (si, sj) = (grid.stride(i), grid.stride(j));
    let v = w.values();
    let mut out = vec![0.0; grid.node_count()];
    for (k, slot) in out.iter_mut().enumerate() {
        if grid.is_boundary(k) {
            continue;
        }
        *slot = if i == j {
            (v[k + si] - 2.0 * v[k] + v[k - si]) / h2
        } else {
            (v[k + si + sj] - v[k + si - sj] - v[k - si + sj] + v[k - si - sj]) / (4.0 * h2)
        };
    }
    Ok(DiscreteField { grid, values: out })
}

/// Gradient by centered differences inside and one-sided second-order
/// differences on the boundary.
pub fn gradient(u: &DiscreteField) -> VectorField {
    let grid = *u.grid();
    let h = grid.h();
    let n = grid.n();
    let v = u.values();
    let mut components = Vec::with_capacity(grid.dim());
    for axis in 0..grid.dim() {
        let s = grid.stride(axis);
        let comp = (0..grid.node_count())
            .map(|k| {
                let i = grid.multi_index(k)[axis];
                if i == 0 {
                    (-3.0 * v[k] + 4.0 * v[k + s] - v[k + 2 * s]) / (2.0 * h)
                } else if i == n - 1 {
                    (3.0 * v[k] - 4.0 * v[k - s] + v[k - 2 * s]) / (2.0 * h)
                } else {
                    (v[k + s] - v[k - s]) / (2.0 * h)
                }
            })
            .collect();
        components.push(comp);
    }
    VectorField { grid, components }
}
