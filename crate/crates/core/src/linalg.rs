//! Dense symmetric positive-definite factorization used by the GMM and the
//! BSS-eval projections.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{log, sqrt};
use crate::{Error, Result};

/// Lower-triangular Cholesky factor `A = L Lᵀ`, row-major.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn new(a: &[f64], n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
                let s: f64 = ri.iter().zip(rj).map(|(x, y)| x * y).sum();
                let v = a[i * n + j] - s;
                if i == j {
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(Error::NotPositiveDefinite);
                    }
                    l[i * n + i] = sqrt(v);
                } else {
                    l[i * n + j] = v / l[j * n + j];
                }
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n)
            .map(|i| log(self.l[i * self.n + i]))
            .sum::<f64>()
    }

    /// Solves `L y = b` in place.
    pub fn forward_solve(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(x, y)| x * y).sum();
            b[i] = (b[i] - s) / self.l[i * n + i];
        }
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        self.forward_solve(b);
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }
}

/// Factors `a + shift * I`, growing the shift tenfold until the factorization
/// succeeds. Returns the factor and the shift that was finally used.
pub fn cholesky_with_jitter(a: &[f64], n: usize, mut shift: f64) -> (Cholesky, f64) {
    let scale = (0..n)
        .map(|i| a[i * n + i].abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    if shift <= 0.0 {
        shift = 1e-12 * scale;
    }
    let mut work = a.to_vec();
    let mut applied = 0.0;
    loop {
        match Cholesky::new(&work, n) {
            Ok(c) => return (c, applied),
            Err(_) => {
                for i in 0..n {
                    work[i * n + i] = a[i * n + i] + shift;
                }
                applied = shift;
                shift *= 10.0;
            }
        }
    }
}
