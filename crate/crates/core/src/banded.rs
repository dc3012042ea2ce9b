//! Banded LU factorization without pivoting.
//!
//! The matrices assembled here are diagonally dominant by columns (double
//! divergence, the transpose of a monotone non-divergence stencil) or very
//! nearly so by rows (divergence form), so elimination in natural order is
//! stable. A vanishing pivot is reported instead of being pivoted around.

use thiserror::Error;

/// Refuse factorizations whose band storage would exceed this many entries.
pub const MAX_BAND_ENTRIES: usize = 80_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum BandError {
    #[error("zero pivot {pivot:e} at row {row}")]
    ZeroPivot { row: usize, pivot: f64 },
    #[error("band storage of {entries} entries exceeds the limit of {limit}")]
    TooLarge { entries: usize, limit: usize },
}

/// Square matrix with `kl` sub- and `ku` super-diagonals, stored by rows.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Result<Self, BandError> {
        let entries = n.saturating_mul(kl + ku + 1);
        if entries > MAX_BAND_ENTRIES {
            return Err(BandError::TooLarge {
                entries,
                limit: MAX_BAND_ENTRIES,
            });
        }
        Ok(Self {
            n,
            kl,
            ku,
            data: vec![0.0; entries],
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    fn index(&self, r: usize, c: usize) -> usize {
        debug_assert!(c + self.kl >= r && c <= r + self.ku);
        r * self.width() + (c + self.kl - r)
    }

    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        let i = self.index(r, c);
        self.data[i] += v;
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        if c + self.kl < r || c > r + self.ku {
            return 0.0;
        }
        self.data[self.index(r, c)]
    }

    /// In-place `A = LU` with unit lower `L`.
    pub fn factor(mut self) -> Result<BandLu, BandError> {
        let (n, kl, ku, w) = (self.n, self.kl, self.ku, self.width());
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tiny = scale * 1e-14;
        for k in 0..n {
            let pivot = self.data[k * w + kl];
            if pivot.abs() <= tiny || !pivot.is_finite() {
                return Err(BandError::ZeroPivot { row: k, pivot });
            }
            let kend = (k + ku).min(n - 1);
            let len = kend - k;
            let iend = (k + kl).min(n - 1);
            let (head, tail) = self.data.split_at_mut((k + 1) * w);
            let pivot_row = &head[k * w + kl + 1..k * w + kl + 1 + len];
            for i in k + 1..=iend {
                let base = (i - k - 1) * w;
                let lidx = base + (k + kl - i);
                let l = tail[lidx] / pivot;
                tail[lidx] = l;
                if l == 0.0 {
                    continue;
                }
                let start = base + (k + 1 + kl - i);
                for (dst, src) in tail[start..start + len].iter_mut().zip(pivot_row) {
                    *dst -= l * src;
                }
            }
        }
        Ok(BandLu { m: self })
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| {
                let lo = r.saturating_sub(self.kl);
                let hi = (r + self.ku).min(self.n - 1);
                (lo..=hi).map(|c| self.get(r, c) * x[c]).sum()
            })
            .collect()
    }
}

/// LU factors of a [`BandMatrix`].
#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
}

impl BandLu {
    pub fn size(&self) -> usize {
        self.m.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        self.m.bandwidths()
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let m = &self.m;
        let (n, kl, ku, w) = (m.n, m.kl, m.ku, m.width());
        for i in 0..n {
            let lo = i.saturating_sub(kl);
            let row = &m.data[i * w..(i + 1) * w];
            let mut acc = 0.0;
            for (c, bc) in b.iter().enumerate().take(i).skip(lo) {
                acc += row[c + kl - i] * bc;
            }
            b[i] -= acc;
        }
        for i in (0..n).rev() {
            let hi = (i + ku).min(n - 1);
            let row = &m.data[i * w..(i + 1) * w];
            let mut acc = 0.0;
            for c in i + 1..=hi {
                acc += row[c + kl - i] * b[c];
            }
            b[i] = (b[i] - acc) / row[kl];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        // Gaussian elimination with partial pivoting as an independent check
        let n = b.len();
        let mut m: Vec<Vec<f64>> = a.to_vec();
        let mut x = b.to_vec();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs())).unwrap();
            m.swap(k, p);
            x.swap(k, p);
            for i in k + 1..n {
                let l = m[i][k] / m[k][k];
                for c in k..n {
                    m[i][c] -= l * m[k][c];
                }
                x[i] -= l * x[k];
            }
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|c| m[i][c] * x[c]).sum();
            x[i] = (x[i] - s) / m[i][i];
        }
        x
    }

    #[test]
    fn matches_dense_solver_on_dominant_band() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (n, kl, ku) = (40, 3, 5);
        let mut band = BandMatrix::zeros(n, kl, ku).unwrap();
        let mut dense = vec![vec![0.0; n]; n];
        for r in 0..n {
            for c in r.saturating_sub(kl)..=(r + ku).min(n - 1) {
                let v = if r == c { 10.0 } else { rng.gen_range(-1.0..1.0) };
                band.add(r, c, v);
                dense[r][c] = v;
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let expected = dense_solve(&dense, &b);
        let lu = band.clone().factor().unwrap();
        let mut x = b.clone();
        lu.solve_in_place(&mut x);
        for (a, e) in x.iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12);
        }
        let back = band.matvec(&x);
        for (a, e) in back.iter().zip(&b) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn tridiagonal_laplacian() {
        let n = 7;
        let mut band = BandMatrix::zeros(n, 1, 1).unwrap();
        for r in 0..n {
            band.add(r, r, -2.0);
            if r > 0 {
                band.add(r, r - 1, 1.0);
            }
            if r + 1 < n {
                band.add(r, r + 1, 1.0);
            }
        }
        // x_r = r + 1 gives zero interior rows, last row −(n+1)
        let x: Vec<f64> = (0..n).map(|r| (r + 1) as f64).collect();
        let mut b = band.matvec(&x);
        assert_eq!(b[0], 0.0);
        band.factor().unwrap().solve_in_place(&mut b);
        for (a, e) in b.iter().zip(&x) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let mut band = BandMatrix::zeros(3, 1, 1).unwrap();
        band.add(0, 0, 1.0);
        band.add(0, 1, 1.0);
        band.add(1, 0, 1.0);
        band.add(1, 1, 1.0);
        band.add(2, 2, 1.0);
        assert!(matches!(band.factor(), Err(BandError::ZeroPivot { row: 1, .. })));
    }

    #[test]
    fn refuses_oversized_band() {
        assert!(matches!(
            BandMatrix::zeros(1_000_000, 1000, 1000),
            Err(BandError::TooLarge { .. })
        ));
    }
}
