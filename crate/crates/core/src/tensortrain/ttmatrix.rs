use crate::error::{Error, Result};
use crate::numkit::{dot, Matrix, Rng};

/// A matrix stored as a chain of TT cores.
///
/// Row index `i` is split over `row_modes` and column index `j` over
/// `col_modes`, most significant mode first. Core `m` has shape
/// `(ranks[m], row_modes[m] * col_modes[m], ranks[m + 1])` with the middle
/// index laid out as `i_m * col_modes[m] + j_m`, so
/// `W(i, j) = G_0[i_0, j_0] · G_1[i_1, j_1] · … · G_{d-1}[i_{d-1}, j_{d-1}]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TtMatrix {
    row_modes: Vec<usize>,
    col_modes: Vec<usize>,
    ranks: Vec<usize>,
    cores: Vec<Vec<f64>>,
}

impl TtMatrix {
    pub fn new(
        row_modes: Vec<usize>,
        col_modes: Vec<usize>,
        ranks: Vec<usize>,
        cores: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let d = row_modes.len();
        if d == 0 || col_modes.len() != d {
            return Err(Error::Param(format!(
                "{} row modes vs {} column modes",
                d,
                col_modes.len()
            )));
        }
        if ranks.len() != d + 1 || ranks[0] != 1 || ranks[d] != 1 {
            return Err(Error::Param(format!(
                "TT ranks {ranks:?} must have length {} with unit boundary ranks",
                d + 1
            )));
        }
        if ranks.iter().chain(&row_modes).chain(&col_modes).any(|&x| x == 0) {
            return Err(Error::Param("TT ranks and modes must be positive".into()));
        }
        if cores.len() != d {
            return Err(Error::Param(format!("{} cores for {d} modes", cores.len())));
        }
        for (m, core) in cores.iter().enumerate() {
            let expect = ranks[m] * row_modes[m] * col_modes[m] * ranks[m + 1];
            if core.len() != expect {
                return Err(Error::shape(
                    "TtMatrix::new",
                    format!("core {m} has {} values, expected {expect}", core.len()),
                ));
            }
        }
        Ok(Self {
            row_modes,
            col_modes,
            ranks,
            cores,
        })
    }

    pub fn zeros(row_modes: &[usize], col_modes: &[usize], ranks: &[usize]) -> Result<Self> {
        let d = row_modes.len();
        if col_modes.len() != d || ranks.len() != d + 1 {
            return Err(Error::Param(format!(
                "{d} row modes need {d} column modes and {} ranks",
                d + 1
            )));
        }
        let cores = (0..d)
            .map(|m| vec![0.0; ranks[m] * row_modes[m] * col_modes[m] * ranks[m + 1]])
            .collect();
        Self::new(row_modes.to_vec(), col_modes.to_vec(), ranks.to_vec(), cores)
    }

    /// Random cores scaled so that reconstructed entries have roughly the
    /// spread of a `uniform(-scale, scale)` dense matrix.
    pub fn random(
        rng: &mut Rng,
        row_modes: &[usize],
        col_modes: &[usize],
        ranks: &[usize],
        scale: f64,
    ) -> Result<Self> {
        let mut tt = Self::zeros(row_modes, col_modes, ranks)?;
        let d = tt.d() as f64;
        let rank_prod: f64 = ranks.iter().map(|&r| r as f64).product();
        // entry variance = core_var^d * prod(internal ranks)
        let target = scale * scale / 3.0;
        let core_var = (target / rank_prod).powf(1.0 / d);
        let a = (3.0 * core_var).sqrt();
        for core in &mut tt.cores {
            for v in core.iter_mut() {
                *v = rng.uniform(-a, a);
            }
        }
        Ok(tt)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            row_modes: self.row_modes.clone(),
            col_modes: self.col_modes.clone(),
            ranks: self.ranks.clone(),
            cores: self.cores.iter().map(|c| vec![0.0; c.len()]).collect(),
        }
    }

    pub fn d(&self) -> usize {
        self.row_modes.len()
    }

    pub fn rows(&self) -> usize {
        self.row_modes.iter().product()
    }

    pub fn cols(&self) -> usize {
        self.col_modes.iter().product()
    }

    pub fn row_modes(&self) -> &[usize] {
        &self.row_modes
    }

    pub fn col_modes(&self) -> &[usize] {
        &self.col_modes
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    /// `k_m = row_modes[m] * col_modes[m]`.
    pub fn mode_sizes(&self) -> Vec<usize> {
        self.row_modes
            .iter()
            .zip(&self.col_modes)
            .map(|(r, c)| r * c)
            .collect()
    }

    pub fn cores(&self) -> &[Vec<f64>] {
        &self.cores
    }

    pub fn cores_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.cores
    }

    /// `Σ r_{m-1} k_m r_m`.
    pub fn param_count(&self) -> usize {
        self.cores.iter().map(Vec::len).sum()
    }

    /// `d · R² · K` with `R`, `K` the largest rank and mode size.
    pub fn param_bound(&self) -> usize {
        let r = *self.ranks.iter().max().expect("ranks nonempty");
        let k = self.mode_sizes().into_iter().max().expect("modes nonempty");
        self.d() * r * r * k
    }

    fn split_index(idx: usize, modes: &[usize]) -> Vec<usize> {
        let mut out = vec![0; modes.len()];
        let mut rest = idx;
        for m in (0..modes.len()).rev() {
            out[m] = rest % modes[m];
            rest /= modes[m];
        }
        out
    }

    /// Entry `(i, j)` as a product of core slices.
    pub fn element(&self, i: usize, j: usize) -> f64 {
        let is = Self::split_index(i, &self.row_modes);
        let js = Self::split_index(j, &self.col_modes);
        let mut v = vec![1.0];
        for m in 0..self.d() {
            let (rl, rr) = (self.ranks[m], self.ranks[m + 1]);
            let k = self.row_modes[m] * self.col_modes[m];
            let mid = is[m] * self.col_modes[m] + js[m];
            let core = &self.cores[m];
            let mut next = vec![0.0; rr];
            for (a, &va) in v.iter().enumerate().take(rl) {
                let base = (a * k + mid) * rr;
                for (b, n) in next.iter_mut().enumerate() {
                    *n += va * core[base + b];
                }
            }
            v = next;
        }
        v[0]
    }

    pub fn to_dense(&self) -> Matrix {
        let (rows, cols) = (self.rows(), self.cols());
        let mut out = Matrix::zeros(rows, cols);
        let mut e = vec![0.0; cols];
        let mut col = vec![0.0; rows];
        for j in 0..cols {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            col.iter_mut().for_each(|v| *v = 0.0);
            self.matvec_acc(&e, &mut col);
            for (i, v) in col.iter().enumerate() {
                out.set(i, j, *v);
            }
        }
        out
    }

    /// Multiply-accumulates for contracting core `m` in a matvec.
    fn core_macs(&self, m: usize) -> u64 {
        let p: usize = self.col_modes[..m].iter().product();
        let q: usize = self.row_modes[m + 1..].iter().product();
        (p * q * self.ranks[m] * self.row_modes[m] * self.col_modes[m] * self.ranks[m + 1]) as u64
    }

    /// Analytic multiply-accumulate count of one matvec.
    pub fn mac_count(&self) -> u64 {
        (0..self.d()).map(|m| self.core_macs(m)).sum()
    }

    /// Contract core `m` into a state laid out `[j_<m][j_m][r_{m+1}][i_>m]`,
    /// producing `[j_<m][r_m][i_m][i_>m]`.
    fn contract(&self, m: usize, input: &[f64], macs: &mut u64) -> Vec<f64> {
        let p: usize = self.col_modes[..m].iter().product();
        let q: usize = self.row_modes[m + 1..].iter().product();
        let (rl, rr) = (self.ranks[m], self.ranks[m + 1]);
        let (ni, nj) = (self.row_modes[m], self.col_modes[m]);
        let width = nj * rr;
        let core = &self.cores[m];
        let mut out = vec![0.0; p * rl * ni * q];
        let mut v = vec![0.0; width];
        for a in 0..p {
            for b in 0..q {
                for (jr, slot) in v.iter_mut().enumerate() {
                    *slot = input[(a * width + jr) * q + b];
                }
                for (row, g) in core.chunks_exact(width).enumerate() {
                    out[(a * rl * ni + row) * q + b] = dot(g, &v);
                    *macs += width as u64;
                }
            }
        }
        out
    }

    /// Adjoint of [`Self::contract`]: accumulates the core gradient and returns
    /// the gradient with respect to the input state.
    fn contract_back(&self, m: usize, input: &[f64], d_out: &[f64], d_core: &mut [f64], macs: &mut u64) -> Vec<f64> {
        let p: usize = self.col_modes[..m].iter().product();
        let q: usize = self.row_modes[m + 1..].iter().product();
        let (rl, rr) = (self.ranks[m], self.ranks[m + 1]);
        let (ni, nj) = (self.row_modes[m], self.col_modes[m]);
        let width = nj * rr;
        let height = rl * ni;
        let core = &self.cores[m];
        let mut d_in = vec![0.0; input.len()];
        let mut v = vec![0.0; width];
        let mut dv = vec![0.0; width];
        for a in 0..p {
            for b in 0..q {
                for (jr, slot) in v.iter_mut().enumerate() {
                    *slot = input[(a * width + jr) * q + b];
                }
                dv.iter_mut().for_each(|x| *x = 0.0);
                for row in 0..height {
                    let g = d_out[(a * height + row) * q + b];
                    if g == 0.0 {
                        continue;
                    }
                    let w = &core[row * width..(row + 1) * width];
                    let dw = &mut d_core[row * width..(row + 1) * width];
                    for jr in 0..width {
                        dw[jr] += g * v[jr];
                        dv[jr] += g * w[jr];
                    }
                }
                *macs += 2 * (height * width) as u64;
                for (jr, x) in dv.iter().enumerate() {
                    d_in[(a * width + jr) * q + b] += x;
                }
            }
        }
        d_in
    }

    /// `out += W · x` without forming `W`. Returns the multiply-accumulates executed.
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64]) -> u64 {
        debug_assert_eq!(x.len(), self.cols());
        debug_assert_eq!(out.len(), self.rows());
        let mut macs = 0;
        let mut state = x.to_vec();
        for m in (0..self.d()).rev() {
            state = self.contract(m, &state, &mut macs);
        }
        for (o, s) in out.iter_mut().zip(&state) {
            *o += s;
        }
        macs
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols() {
            return Err(Error::shape(
                "tt_matvec",
                format!("vector of length {} for {} columns", x.len(), self.cols()),
            ));
        }
        let mut out = vec![0.0; self.rows()];
        self.matvec_acc(x, &mut out);
        Ok(out)
    }

    /// Backward pass of `y = W x`: `grad` receives `∂L/∂G_m`, `gx` receives `Wᵀ gy`.
    pub fn backward(&self, x: &[f64], gy: &[f64], gx: &mut [f64], grad: &mut TtMatrix) -> u64 {
        let d = self.d();
        let mut macs = 0;
        let mut states = vec![Vec::new(); d + 1];
        states[d] = x.to_vec();
        for m in (0..d).rev() {
            states[m] = self.contract(m, &states[m + 1], &mut macs);
        }
        let mut g = gy.to_vec();
        for m in 0..d {
            g = self.contract_back(m, &states[m + 1], &g, &mut grad.cores[m], &mut macs);
        }
        for (o, v) in gx.iter_mut().zip(&g) {
            *o += v;
        }
        macs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(seed: u64) -> TtMatrix {
        let mut rng = Rng::new(seed);
        TtMatrix::random(&mut rng, &[2, 3, 2], &[3, 2, 2], &[1, 3, 2, 1], 1.0).unwrap()
    }

    #[test]
    fn matvec_matches_elementwise_dense() {
        let tt = sample(1);
        let dense = Matrix::from_fn(tt.rows(), tt.cols(), |i, j| tt.element(i, j));
        let mut rng = Rng::new(2);
        let x: Vec<f64> = (0..tt.cols()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let a = tt.matvec(&x).unwrap();
        let b = dense.matvec(&x).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
        assert_eq!(tt.to_dense(), tt.to_dense());
    }

    #[test]
    fn counted_macs_match_formula() {
        let tt = sample(3);
        let x = vec![1.0; tt.cols()];
        let mut out = vec![0.0; tt.rows()];
        assert_eq!(tt.matvec_acc(&x, &mut out), tt.mac_count());
    }

    #[test]
    fn param_count_formula() {
        let tt = TtMatrix::zeros(&[5, 4, 6, 5], &[6, 5, 4, 4], &[1, 4, 4, 4, 1]).unwrap();
        assert_eq!(tt.mode_sizes(), vec![30, 20, 24, 20]);
        assert_eq!(tt.param_count(), 30 * 4 + 4 * 20 * 4 + 4 * 24 * 4 + 4 * 20);
        let ones = TtMatrix::zeros(&[2, 3], &[5, 2], &[1, 1, 1]).unwrap();
        assert_eq!(ones.param_count(), 10 + 6);
    }

    #[test]
    fn rejects_bad_ranks() {
        assert!(TtMatrix::zeros(&[2, 2], &[2, 2], &[2, 2, 1]).is_err());
        assert!(TtMatrix::zeros(&[2, 2], &[2, 2], &[1, 1]).is_err());
    }

    #[test]
    fn zero_cores_give_zero() {
        let tt = TtMatrix::zeros(&[2, 2], &[2, 2], &[1, 2, 1]).unwrap();
        assert!(tt.matvec(&[1.0, 2.0, 3.0, 4.0]).unwrap().iter().all(|&v| v == 0.0));
        assert!(tt.matvec(&[1.0]).is_err());
    }
}
