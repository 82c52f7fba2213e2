//! Singular value decomposition by one-sided (Hestenes) Jacobi rotations.

use crate::error::{Error, Result};
use crate::numkit::matrix::{dot, Matrix};

const MAX_SWEEPS: usize = 80;
const ROTATION_TOL: f64 = 1e-15;

/// `a ≈ u · diag(singular_values) · vt`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        let r = self.rank();
        for i in 0..us.rows() {
            for (j, s) in self.singular_values.iter().enumerate().take(r) {
                let v = us.get(i, j) * s;
                us.set(i, j, v);
            }
        }
        us.matmul(&self.vt).expect("svd factors are conformant")
    }
}

/// Thin SVD with `min(rows, cols)` singular triplets, sorted non-increasing.
pub fn thin_svd(a: &Matrix) -> Result<SvdResult> {
    if a.rows() >= a.cols() {
        jacobi_tall(a)
    } else {
        let t = jacobi_tall(&a.transpose())?;
        Ok(SvdResult {
            u: t.vt.transpose(),
            singular_values: t.singular_values,
            vt: t.u.transpose(),
        })
    }
}

/// Best rank-`r` approximation factors.
pub fn truncated_svd(a: &Matrix, r: usize) -> Result<SvdResult> {
    let max_rank = a.rows().min(a.cols());
    if r == 0 || r > max_rank {
        return Err(Error::Param(format!(
            "truncation rank {r} outside 1..={max_rank} for a {}x{} matrix",
            a.rows(),
            a.cols()
        )));
    }
    let full = thin_svd(a)?;
    Ok(truncate(full, r))
}

pub(crate) fn truncate(full: SvdResult, r: usize) -> SvdResult {
    if r == full.rank() {
        return full;
    }
    let m = full.u.rows();
    let n = full.vt.cols();
    let u = Matrix::from_fn(m, r, |i, j| full.u.get(i, j));
    let vt = full.vt.row_block(0, r);
    debug_assert_eq!(vt.cols(), n);
    SvdResult {
        u,
        singular_values: full.singular_values[..r].to_vec(),
        vt,
    }
}

fn jacobi_tall(a: &Matrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    // column-major working copies
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.get(i, j)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let mut norms: Vec<f64> = cols.iter().map(|c| dot(c, c)).collect();

    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(&cols[p], &cols[q]);
                if gamma.abs() <= ROTATION_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = cols.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
                let (lo, hi) = v.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
                norms[p] = dot(&cols[p], &cols[p]);
                norms[q] = dot(&cols[q], &cols[q]);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric {
            msg: format!("Jacobi SVD of a {m}x{n} matrix did not converge"),
            iterations: sweeps,
        });
    }

    let mut sigma: Vec<f64> = norms.iter().map(|x| x.sqrt()).collect();
    if sigma.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric {
            msg: "non-finite singular value".into(),
            iterations: sweeps,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap_or(std::cmp::Ordering::Equal));

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sorted_sigma = Vec::with_capacity(n);
    let mut vt = Matrix::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        let s = sigma[j];
        let mut u = if s > 0.0 {
            cols[j].iter().map(|x| x / s).collect::<Vec<_>>()
        } else {
            vec![0.0; m]
        };
        if !orthonormalize(&mut u, &u_cols) {
            u = complete_basis(&u_cols, m);
            sigma[j] = 0.0;
        }
        u_cols.push(u);
        sorted_sigma.push(sigma[j]);
        for (i, vi) in v[j].iter().enumerate() {
            vt.set(k, i, *vi);
        }
    }
    let u = Matrix::from_fn(m, n, |i, j| u_cols[j][i]);
    Ok(SvdResult {
        u,
        singular_values: sorted_sigma,
        vt,
    })
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let xa = *a;
        let yb = *b;
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// Two passes of Gram-Schmidt against `basis`; false if `u` is (numerically) in their span.
fn orthonormalize(u: &mut [f64], basis: &[Vec<f64>]) -> bool {
    let before = dot(u, u).sqrt();
    if before == 0.0 {
        return false;
    }
    for _ in 0..2 {
        for b in basis {
            let p = dot(u, b);
            for (x, y) in u.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
    }
    let after = dot(u, u).sqrt();
    if after < 0.5 * before {
        return false;
    }
    u.iter_mut().for_each(|x| *x /= after);
    true
}

fn complete_basis(basis: &[Vec<f64>], m: usize) -> Vec<f64> {
    for i in 0..m {
        let mut e = vec![0.0; m];
        e[i] = 1.0;
        if orthonormalize(&mut e, basis) {
            return e;
        }
    }
    unreachable!("fewer than m basis vectors always leave a free direction")
}
