//! Tensor-Train matrices: mode selection, TT-SVD and direct TT-format products.

mod layers;
mod ttmatrix;

pub use layers::{tt_cells, tt_output, TtOutcome, TtSpec};
pub use ttmatrix::TtMatrix;

use crate::error::{Error, Result};
use crate::numkit::{thin_svd, Matrix};

/// Relative singular-value cutoff below which a TT rank is not kept.
const RANK_TOL: f64 = 1e-13;

/// Output of [`tt_svd`].
#[derive(Clone, Debug)]
pub struct TtDecomposition {
    pub tt: TtMatrix,
    /// `sqrt(Σ σ²)` over every singular value dropped during the sweep.
    pub discarded: f64,
}

/// Parameter count of a TT matrix together with the `d·R²·K` bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TtParamCount {
    pub params: usize,
    pub bound: usize,
}

pub fn tt_param_count(tt: &TtMatrix) -> TtParamCount {
    TtParamCount {
        params: tt.param_count(),
        bound: tt.param_bound(),
    }
}

/// All ordered ways to write `n` as a product of `d` factors, each at least 2.
pub(crate) fn ordered_factorizations(n: usize, d: usize) -> Vec<Vec<usize>> {
    fn go(n: usize, d: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if d == 1 {
            if n >= 2 {
                prefix.push(n);
                out.push(prefix.clone());
                prefix.pop();
            }
            return;
        }
        let max_first = n >> (d - 1);
        for f in 2..=max_first {
            if n % f == 0 {
                prefix.push(f);
                go(n / f, d - 1, prefix, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    if d > 0 && n >= 1 << d {
        go(n, d, &mut Vec::with_capacity(d), &mut out);
    }
    out
}

/// Split `rows` and `cols` into `d` modes each (every mode ≥ 2) so that the
/// core sizes `row_m · col_m` are as balanced as possible.
///
/// Balance is the ratio of the largest to the smallest core size; ties go
/// to the smaller largest core, then to the lexicographically first split.
pub fn choose_modes(rows: usize, cols: usize, d: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if d == 0 {
        return Err(Error::Param("TT order must be at least 1".into()));
    }
    let row_splits = ordered_factorizations(rows, d);
    let col_splits = ordered_factorizations(cols, d);
    if row_splits.is_empty() || col_splits.is_empty() {
        return Err(Error::Param(format!(
            "{rows}x{cols} cannot be split into {d} modes of size at least 2 per dimension"
        )));
    }
    let mut best: Option<((u128, u128, usize), &Vec<usize>, &Vec<usize>)> = None;
    for r in &row_splits {
        for c in &col_splits {
            let (mut lo, mut hi) = (usize::MAX, 0);
            for (a, b) in r.iter().zip(c) {
                lo = lo.min(a * b);
                hi = hi.max(a * b);
            }
            // compare hi/lo exactly via cross-multiplication
            let key = (hi as u128, lo as u128, hi);
            let better = match &best {
                None => true,
                Some(((bh, bl, bmax), _, _)) => {
                    let lhs = key.0 * bl;
                    let rhs = bh * key.1;
                    lhs < rhs || (lhs == rhs && hi < *bmax)
                }
            };
            if better {
                best = Some((key, r, c));
            }
        }
    }
    let (_, r, c) = best.expect("nonempty candidate sets");
    Ok((r.clone(), c.clone()))
}

/// Permute `w` into the interleaved tensor with modes `k_m = row_m · col_m`.
fn to_tensor(w: &Matrix, row_modes: &[usize], col_modes: &[usize]) -> Vec<f64> {
    let d = row_modes.len();
    let ks: Vec<usize> = row_modes.iter().zip(col_modes).map(|(a, b)| a * b).collect();
    let mut strides = vec![1usize; d];
    for m in (0..d.saturating_sub(1)).rev() {
        strides[m] = strides[m + 1] * ks[m + 1];
    }
    let mut out = vec![0.0; w.len()];
    let mut is = vec![0usize; d];
    for i in 0..w.rows() {
        let mut rest = i;
        for m in (0..d).rev() {
            is[m] = rest % row_modes[m];
            rest /= row_modes[m];
        }
        for j in 0..w.cols() {
            let mut rest = j;
            let mut pos = 0;
            for m in (0..d).rev() {
                let jm = rest % col_modes[m];
                rest /= col_modes[m];
                pos += (is[m] * col_modes[m] + jm) * strides[m];
            }
            out[pos] = w.get(i, j);
        }
    }
    out
}

/// TT-SVD: sequential unfolding and truncated SVD.
///
/// `max_ranks` holds the `d - 1` internal rank caps (a single value is
/// broadcast). Ranks are additionally cut where singular values vanish
/// relative to the leading one, so exactly low-rank inputs come back with
/// their true TT ranks.
pub fn tt_svd(
    w: &Matrix,
    row_modes: &[usize],
    col_modes: &[usize],
    max_ranks: &[usize],
) -> Result<TtDecomposition> {
    let d = row_modes.len();
    if d == 0 || col_modes.len() != d {
        return Err(Error::Param(format!(
            "{} row modes vs {} column modes",
            d,
            col_modes.len()
        )));
    }
    if row_modes.iter().product::<usize>() != w.rows() || col_modes.iter().product::<usize>() != w.cols() {
        return Err(Error::Param(format!(
            "modes {row_modes:?} x {col_modes:?} do not factor a {}x{} matrix",
            w.rows(),
            w.cols()
        )));
    }
    let caps: Vec<usize> = match max_ranks.len() {
        1 => vec![max_ranks[0]; d.saturating_sub(1)],
        n if n + 1 == d => max_ranks.to_vec(),
        0 if d == 1 => Vec::new(),
        n => {
            return Err(Error::Param(format!(
                "{n} rank caps for a TT of order {d} (expected {} or 1)",
                d - 1
            )))
        }
    };
    if caps.iter().any(|&r| r == 0) {
        return Err(Error::Param("TT rank caps must be positive".into()));
    }
    let ks: Vec<usize> = row_modes.iter().zip(col_modes).map(|(a, b)| a * b).collect();
    let mut rest = to_tensor(w, row_modes, col_modes);
    let mut ranks = vec![1usize; d + 1];
    let mut cores = Vec::with_capacity(d);
    let mut discarded2 = 0.0;
    for m in 0..d - 1 {
        let rows = ranks[m] * ks[m];
        let cols = rest.len() / rows;
        let unfold = Matrix::new(rows, cols, rest)?;
        let svd = thin_svd(&unfold)?;
        let s0 = svd.singular_values[0];
        let numeric = svd
            .singular_values
            .iter()
            .filter(|&&s| s > RANK_TOL * s0)
            .count()
            .max(1);
        let r = caps[m].min(numeric).min(svd.rank());
        discarded2 += svd.singular_values[r..].iter().map(|s| s * s).sum::<f64>();
        let mut core = Vec::with_capacity(rows * r);
        for i in 0..rows {
            for j in 0..r {
                core.push(svd.u.get(i, j));
            }
        }
        cores.push(core);
        let mut next = Vec::with_capacity(r * cols);
        for j in 0..r {
            let s = svd.singular_values[j];
            next.extend(svd.vt.row(j).iter().map(|v| v * s));
        }
        ranks[m + 1] = r;
        rest = next;
    }
    cores.push(rest);
    let tt = TtMatrix::new(row_modes.to_vec(), col_modes.to_vec(), ranks, cores)?;
    Ok(TtDecomposition {
        tt,
        discarded: discarded2.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;

    #[test]
    fn factorizations_enumerated() {
        let f = ordered_factorizations(12, 2);
        assert_eq!(f, vec![vec![2, 6], vec![3, 4], vec![4, 3], vec![6, 2]]);
        assert!(ordered_factorizations(13, 2).is_empty());
    }

    #[test]
    fn small_square_modes() {
        assert_eq!(choose_modes(4, 4, 2).unwrap(), (vec![2, 2], vec![2, 2]));
    }

    #[test]
    fn prime_dims_rejected() {
        assert!(matches!(choose_modes(13, 13, 4), Err(Error::Param(_))));
    }

    #[test]
    fn identity_has_unit_ranks() {
        let i = Matrix::identity(12);
        let dec = tt_svd(&i, &[3, 4], &[3, 4], &[16]).unwrap();
        assert_eq!(dec.tt.ranks(), &[1, 1, 1]);
        let x: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let y = dec.tt.matvec(&x).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kronecker_product_rank_one() {
        // W = A1 ⊗ A2 ⊗ A3 is an outer product of the per-mode factors.
        let mut rng = Rng::new(9);
        let rm = [2, 3, 2];
        let cm = [2, 2, 2];
        let f: Vec<Matrix> = (0..3).map(|m| Matrix::random(&mut rng, rm[m], cm[m], 1.0)).collect();
        let w = Matrix::from_fn(12, 8, |i, j| {
            let (i, j) = ([i / 6, (i / 2) % 3, i % 2], [j / 4, (j / 2) % 2, j % 2]);
            (0..3).map(|m| f[m].get(i[m], j[m])).product()
        });
        let dec = tt_svd(&w, &[2, 3, 2], &[2, 2, 2], &[5]).unwrap();
        assert!(dec.tt.ranks().iter().all(|&r| r == 1));
        let err = dec.tt.to_dense().sub(&w).unwrap().frobenius_norm();
        assert!(err < 1e-12);
    }

    #[test]
    fn bad_modes_rejected() {
        let w = Matrix::identity(6);
        assert!(tt_svd(&w, &[2, 2], &[2, 3], &[2]).is_err());
        assert!(tt_svd(&w, &[2, 3], &[2, 3], &[2, 2, 2]).is_err());
    }
}
