//! Cyclic Jacobi eigensolver for dense symmetric matrices.

use crate::error::{GwError, Result};
use crate::numeric::Matrix;

/// Sweep cap; quadratic convergence makes 20 sweeps plenty in practice.
pub const MAX_SWEEPS: usize = 100;

/// Stopping threshold on the off-diagonal Frobenius mass, relative to `|A|_F`.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;

/// Once below `OFF_DIAGONAL_TOL`, sweeps continue until the off-diagonal mass
/// reaches this level or stops shrinking.
const POLISH_TOL: f64 = 1e-17;

/// `A = U^T diag(values) U`; row `i` of `vectors` is the eigenvector for `values[i]`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
    pub sweeps: usize,
}

impl SymmetricEigen {
    pub fn reconstruct(&self) -> Matrix {
        let n = self.values.len();
        Matrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|e| self.vectors.get(e, i) * self.values[e] * self.vectors.get(e, j))
                .sum()
        })
    }
}

fn off_diagonal(a: &Matrix) -> f64 {
    let n = a.rows;
    let mut s = 0.0;
    for p in 0..n {
        for q in p + 1..n {
            s += 2.0 * a.get(p, q) * a.get(p, q);
        }
    }
    s.sqrt()
}

/// Full eigendecomposition of a symmetric matrix. Only the upper triangle is read.
pub fn jacobi_eigen(input: &Matrix) -> Result<SymmetricEigen> {
    assert_eq!(input.rows, input.cols, "square matrix required");
    let n = input.rows;
    let mut a = Matrix::from_fn(n, n, |i, j| {
        if i <= j {
            input.get(i, j)
        } else {
            input.get(j, i)
        }
    });
    let mut v = Matrix::identity(n);
    let norm = a.frobenius();
    let mut sweeps = 0;
    let mut prev = f64::INFINITY;
    loop {
        let off = off_diagonal(&a);
        if off <= POLISH_TOL * norm || (off <= OFF_DIAGONAL_TOL * norm && off >= 0.5 * prev) {
            break;
        }
        prev = off;
        if sweeps == MAX_SWEEPS {
            return Err(GwError::EigenNoConvergence { sweeps, off });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                if t == 0.0 {
                    a.set(p, q, 0.0);
                    a.set(q, p, 0.0);
                    continue;
                }
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a.get(r, p);
                    let arq = a.get(r, q);
                    let np = c * arp - s * arq;
                    let nq = s * arp + c * arq;
                    a.set(r, p, np);
                    a.set(p, r, np);
                    a.set(r, q, nq);
                    a.set(q, r, nq);
                }
                a.set(p, p, app - t * apq);
                a.set(q, q, aqq + t * apq);
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                // V holds eigenvectors as columns while iterating.
                for r in 0..n {
                    let vrp = v.get(r, p);
                    let vrq = v.get(r, q);
                    v.set(r, p, c * vrp - s * vrq);
                    v.set(r, q, s * vrp + c * vrq);
                }
            }
        }
    }
    let values = (0..n).map(|i| a.get(i, i)).collect();
    let mut vectors = v.transpose();
    for e in 0..n {
        normalize_sign(&mut vectors.data[e * n..(e + 1) * n]);
    }
    Ok(SymmetricEigen {
        values,
        vectors,
        sweeps,
    })
}

/// Flips `vec` so its first entry of non-negligible size is positive.
pub fn normalize_sign(vec: &mut [f64]) {
    let scale = vec.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(first) = vec.iter().find(|x| x.abs() > 1e-9 * scale) {
        if *first < 0.0 {
            vec.iter_mut().for_each(|x| *x = -*x);
        }
    }
}
