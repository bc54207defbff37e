//! Dense Cholesky factorization and triangular solves on row-major storage.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `A + jitter I = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
    jitter: f64,
}

/// Smallest and largest relative jitter tried by [`Cholesky::with_jitter`].
pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-4;

/// Dot product with four independent accumulators.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    let mut acc = [0.0; 4];
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl Cholesky {
    /// Plain factorization; `None` if `a` is not numerically positive definite.
    pub fn new(a: &[f64], n: usize) -> Option<Self> {
        Self::factor(a, n, 0.0)
    }

    /// Tries jitter 0, then `1e-10 * mean(diag)` escalating by 10x up to
    /// `1e-4 * mean(diag)`.
    pub fn with_jitter(a: &[f64], n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        if let Some(c) = Self::factor(a, n, 0.0) {
            return Ok(c);
        }
        let diag = (0..n).map(|i| a[i * n + i]);
        let mean_diag = diag.clone().sum::<f64>() / n.max(1) as f64;
        let scale = if mean_diag.is_finite() && mean_diag > 0.0 {
            mean_diag
        } else {
            1.0
        };
        let mut rel = JITTER_START;
        while rel <= JITTER_MAX * (1.0 + 1e-9) {
            if let Some(c) = Self::factor(a, n, rel * scale) {
                return Ok(c);
            }
            rel *= 10.0;
        }
        Err(Error::Cholesky {
            n,
            jitter: JITTER_MAX * scale,
            min_diag: diag.clone().fold(f64::INFINITY, f64::min),
            max_diag: diag.fold(f64::NEG_INFINITY, f64::max),
        })
    }

    fn factor(a: &[f64], n: usize, jitter: f64) -> Option<Self> {
        let mut l = vec![0.0; n * n];
        // row by row: row i needs rows 0..i complete
        for i in 0..n {
            let (done, rest) = l.split_at_mut(i * n);
            let row_i = &mut rest[..n];
            for j in 0..i {
                let row_j = &done[j * n..j * n + j + 1];
                let s = a[i * n + j] - dot(&row_i[..j], &row_j[..j]);
                row_i[j] = s / row_j[j];
            }
            let d = a[i * n + i] + jitter - dot(&row_i[..i], &row_i[..i]);
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            row_i[i] = libm::sqrt(d);
        }
        Some(Cholesky { n, l, jitter })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn factor_matrix(&self) -> &[f64] {
        &self.l
    }

    /// Solves `L x = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            let s = dot(&self.l[i * n..i * n + i], &x[..i]);
            x[i] = (x[i] - s) / self.l[i * n + i];
        }
        x
    }

    /// Solves `Lᵀ x = b`.
    pub fn solve_upper(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            let xi = x[i] / self.l[i * n + i];
            x[i] = xi;
            for k in 0..i {
                x[k] -= self.l[i * n + k] * xi;
            }
        }
        x
    }

    /// Solves `(L Lᵀ) x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n)
            .map(|i| libm::log(self.l[i * self.n + i]))
            .sum::<f64>()
    }

    /// Dense inverse of the factored matrix.
    pub fn inverse(&self) -> Vec<f64> {
        let n = self.n;
        // rows of L⁻¹ by forward substitution
        let mut linv = vec![0.0; n * n];
        for i in 0..n {
            let (done, rest) = linv.split_at_mut(i * n);
            let row = &mut rest[..n];
            row[i] = 1.0;
            for k in 0..i {
                let lik = self.l[i * n + k];
                if lik != 0.0 {
                    let src = &done[k * n..k * n + k + 1];
                    for (r, s) in row[..=k].iter_mut().zip(src) {
                        *r -= lik * s;
                    }
                }
            }
            let d = self.l[i * n + i];
            row[..=i].iter_mut().for_each(|r| *r /= d);
        }
        // (L⁻¹)ᵀ L⁻¹ as a sum of row outer products, lower triangle first
        let mut inv = vec![0.0; n * n];
        for k in 0..n {
            let row = &linv[k * n..k * n + k + 1];
            for a in 0..=k {
                let ra = row[a];
                if ra == 0.0 {
                    continue;
                }
                let dst = &mut inv[a * n..a * n + a + 1];
                for (d, rb) in dst.iter_mut().zip(&row[..=a]) {
                    *d += ra * rb;
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                inv[b * n + a] = inv[a * n + b];
            }
        }
        inv
    }
}
