//! Low-rank factorization of recurrent layers and of the embedding and
//! output layers.
//!
//! A low-rank layer emits an `r`-dimensional vector `m = P h` through a
//! single projection `P` (`r × k`). The same `m` is the recurrent input of
//! the layer and the input of the next layer, so every gate factor of both
//! (`U_g ≈ U_g^a P`, `W_{l+1,g} ≈ W_{l+1,g}^a P`) shares that one stored
//! matrix. The embedding of a factored model is `|V| × r`, and its first
//! layer consumes the `r`-dimensional lookup directly.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::cells::{Family, GruBlend, GruCell, Layer, Linear, LstmCell, Network, RnnCell};
use crate::error::{Error, Result};
use crate::numkit::{transpose, truncated_svd, Matrix, Rng};

/// Rank-`r` factor pair with `a · b ≈ w`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankPair {
    /// `k_out × r`
    pub a: Matrix,
    /// `r × k_in`
    pub b: Matrix,
}

impl LowRankPair {
    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    pub fn product(&self) -> Matrix {
        self.a.matmul(&self.b).expect("factor shapes agree by construction")
    }

    pub fn param_count(&self) -> usize {
        self.a.len() + self.b.len()
    }
}

/// Best rank-`r` factorization, splitting the singular values evenly:
/// `a = U √S`, `b = √S Vᵀ`.
pub fn factorize_matrix(w: &Matrix, r: usize) -> Result<LowRankPair> {
    let svd = truncated_svd(w, r)?;
    let root: Vec<f64> = svd.singular_values.iter().map(|s| s.sqrt()).collect();
    let a = Matrix::from_fn(w.rows(), r, |i, j| svd.u.get(i, j) * root[j]);
    let b = Matrix::from_fn(r, w.cols(), |i, j| root[i] * svd.vt.get(i, j));
    Ok(LowRankPair { a, b })
}

/// How the factors of a newly factored component are initialized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorInit {
    /// Fresh uniform weights in `[-scale, scale]`, to be trained from scratch.
    Random { scale: f64 },
    /// Truncated SVD of the existing dense weights.
    Svd,
}

impl Default for FactorInit {
    fn default() -> Self {
        FactorInit::Random { scale: 0.1 }
    }
}

/// A transformed network plus any warnings raised on the way.
#[derive(Clone, Debug)]
pub struct LrOutcome {
    pub network: Network,
    pub warnings: Vec<String>,
}

fn dense_mat(l: &Linear, what: &str) -> Result<Matrix> {
    l.as_dense()
        .cloned()
        .ok_or_else(|| Error::Config(format!("{what} is already in TT format")))
}

fn mul_t(m: &Matrix, p: &Matrix) -> Matrix {
    m.matmul(&transpose(p)).expect("projection width equals matrix width")
}

/// Low-rank RNN layer: `m = P tanh(W x + U^a m_prev + b)`.
pub fn lr_rnn_random(rng: &mut Rng, input: usize, hidden: usize, r: usize, scale: f64) -> RnnCell {
    RnnCell {
        in_proj: None,
        w: Linear::Dense(Matrix::random(rng, hidden, input, scale)),
        u: Linear::Dense(Matrix::random(rng, hidden, r, scale)),
        b: vec![0.0; hidden],
        proj: Some(Matrix::random(rng, r, hidden, scale)),
    }
}

/// Low-rank LSTM layer with all eight gate matrices acting on `r`-dim inputs
/// (for `input == r`) and one shared projection.
pub fn lr_lstm_random(rng: &mut Rng, input: usize, hidden: usize, r: usize, scale: f64) -> LstmCell {
    LstmCell {
        in_proj: None,
        w: std::array::from_fn(|_| Linear::Dense(Matrix::random(rng, hidden, input, scale))),
        u: std::array::from_fn(|_| Linear::Dense(Matrix::random(rng, hidden, r, scale))),
        b: std::array::from_fn(|_| vec![0.0; hidden]),
        proj: Some(Matrix::random(rng, r, hidden, scale)),
    }
}

/// Low-rank GRU layer: gates and state in `r` dims, proposal in `hidden`
/// dims, projected back by `P` before blending.
pub fn lr_gru_random(
    rng: &mut Rng,
    input: usize,
    hidden: usize,
    r: usize,
    scale: f64,
    bias: bool,
    blend: GruBlend,
) -> Result<GruCell> {
    if blend == GruBlend::Input && input != r {
        return Err(Error::Config(format!(
            "input-blended GRU needs input dim {input} to equal rank {r}"
        )));
    }
    let rows = [r, r, hidden];
    let cols = [r, r, r];
    Ok(GruCell {
        in_proj: None,
        w: std::array::from_fn(|g| Linear::Dense(Matrix::random(rng, rows[g], input, scale))),
        u: std::array::from_fn(|g| Linear::Dense(Matrix::random(rng, rows[g], cols[g], scale))),
        b: bias.then(|| std::array::from_fn(|g| vec![0.0; rows[g]])),
        proj: Some(Matrix::random(rng, r, hidden, scale)),
        blend,
    })
}

/// Express a dense GRU in the state space spanned by the rows of `p`
/// (`r × k`): gates `P W_z`, `P U_z Pᵀ`, proposal `W_h`, `U_h Pᵀ`, projection
/// `P`. Exact when `p` is a permutation, an approximation otherwise (the
/// gate nonlinearity does not commute with a general rotation).
pub fn lr_gru_from_dense(cell: &GruCell, p: &Matrix) -> Result<GruCell> {
    if cell.proj.is_some() || cell.in_proj.is_some() {
        return Err(Error::Config("GRU layer is already factored".into()));
    }
    let k = cell.state_dim();
    if p.cols() != k || p.rows() > k {
        return Err(Error::shape("lr_gru_from_dense", format!("projection {}x{} for state {k}", p.rows(), p.cols())));
    }
    let w: Vec<Matrix> = (0..3).map(|g| dense_mat(&cell.w[g], "GRU input weight")).collect::<Result<_>>()?;
    let u: Vec<Matrix> = (0..3).map(|g| dense_mat(&cell.u[g], "GRU recurrent weight")).collect::<Result<_>>()?;
    let gate_w = |m: &Matrix| p.matmul(m).expect("shapes checked");
    let new_w = [gate_w(&w[0]), gate_w(&w[1]), w[2].clone()];
    let new_u = [mul_t(&gate_w(&u[0]), p), mul_t(&gate_w(&u[1]), p), mul_t(&u[2], p)];
    if cell.blend == GruBlend::Input && w[0].cols() != p.rows() {
        return Err(Error::Config("input-blended GRU needs input dim equal to the rank".into()));
    }
    let b = cell.b.as_ref().map(|b| {
        let proj = |v: &Vec<f64>| p.matvec(v).expect("shapes checked");
        [proj(&b[0]), proj(&b[1]), b[2].clone()]
    });
    Ok(GruCell {
        in_proj: None,
        w: new_w.map(Linear::Dense),
        u: new_u.map(Linear::Dense),
        b,
        proj: Some(p.clone()),
        blend: cell.blend,
    })
}

fn recurrent_mats(layer: &Layer) -> Result<Vec<Matrix>> {
    match layer {
        Layer::Rnn(c) => Ok(vec![dense_mat(&c.u, "recurrent weight")?]),
        Layer::Lstm(c) => c.u.iter().map(|u| dense_mat(u, "recurrent weight")).collect(),
        Layer::Gru(c) => c.u.iter().map(|u| dense_mat(u, "recurrent weight")).collect(),
    }
}

fn input_mats(layer: &Layer) -> Result<Vec<Matrix>> {
    match layer {
        Layer::Rnn(c) => Ok(vec![dense_mat(&c.w, "input weight")?]),
        Layer::Lstm(c) => c.w.iter().map(|w| dense_mat(w, "input weight")).collect(),
        Layer::Gru(c) => c.w.iter().map(|w| dense_mat(w, "input weight")).collect(),
    }
}

/// Replace `W` by `W Pᵀ` in every input matrix of `layer`.
fn fold_input(layer: &mut Layer, p: &Matrix) -> Result<()> {
    let fold = |l: &mut Linear| -> Result<()> {
        let m = dense_mat(l, "input weight")?;
        *l = Linear::Dense(mul_t(&m, p));
        Ok(())
    };
    match layer {
        Layer::Rnn(c) => fold(&mut c.w),
        Layer::Lstm(c) => c.w.iter_mut().try_for_each(fold),
        Layer::Gru(c) => c.w.iter_mut().try_for_each(fold),
    }
}

fn check_rank(r: usize, k: usize, what: &str, warnings: &mut Vec<String>) -> Result<()> {
    if r == 0 || r > k {
        return Err(Error::Param(format!("rank {r} outside 1..={k} for {what}")));
    }
    if r == k {
        let msg = format!("rank {r} equals the full size of {what}; factorization adds parameters");
        warn!("{msg}");
        warnings.push(msg);
    }
    Ok(())
}

/// Replace every recurrent layer by its low-rank variant with rank `r`.
///
/// The top layer's emitted vector becomes `r`-dimensional, so the output
/// layer (or its adapter) is narrowed to `r` columns as well.
pub fn lr_cells(net: &Network, r: usize, init: FactorInit, rng: &mut Rng) -> Result<LrOutcome> {
    let mut warnings = Vec::new();
    for (l, layer) in net.layers.iter().enumerate() {
        if layer.family() != Family::Dense {
            return Err(Error::Config(format!("layer {l} is already {:?}", layer.family())));
        }
        check_rank(r, layer.hidden_dim(), &format!("layer {l}"), &mut warnings)?;
    }
    let mut out = net.clone();
    match init {
        FactorInit::Random { scale } => {
            let mut input = net.embedding.cols();
            for layer in out.layers.iter_mut() {
                let k = layer.hidden_dim();
                *layer = match &*layer {
                    Layer::Rnn(_) => Layer::Rnn(lr_rnn_random(rng, input, k, r, scale)),
                    Layer::Lstm(_) => Layer::Lstm(lr_lstm_random(rng, input, k, r, scale)),
                    Layer::Gru(c) => {
                        let blend = c.blend;
                        Layer::Gru(lr_gru_random(rng, input, k, r, scale, c.b.is_some(), blend)?)
                    }
                };
                input = r;
            }
            match &mut out.output.adapter {
                Some(a) => *a = Matrix::random(rng, a.rows(), r, scale),
                None => {
                    let v = out.output.w.rows();
                    out.output.w = Linear::Dense(Matrix::random(rng, v, r, scale));
                }
            }
        }
        FactorInit::Svd => {
            let top_out = match &net.output.adapter {
                Some(a) => a.clone(),
                None => dense_mat(&net.output.w, "output weight")?,
            };
            for l in 0..net.layers.len() {
                let k = net.layers[l].hidden_dim();
                let mut stack = recurrent_mats(&net.layers[l])?;
                match net.layers.get(l + 1) {
                    Some(next) => stack.extend(input_mats(next)?),
                    None => stack.push(top_out.clone()),
                }
                let p = if r == k {
                    Matrix::identity(k)
                } else {
                    let refs: Vec<&Matrix> = stack.iter().collect();
                    truncated_svd(&Matrix::vstack(&refs)?, r)?.vt
                };
                out.layers[l] = match &out.layers[l] {
                    Layer::Rnn(c) => Layer::Rnn(RnnCell {
                        u: Linear::Dense(mul_t(&dense_mat(&c.u, "recurrent weight")?, &p)),
                        proj: Some(p.clone()),
                        ..c.clone()
                    }),
                    Layer::Lstm(c) => {
                        let u = c.u.iter().map(|u| Ok(Linear::Dense(mul_t(&dense_mat(u, "recurrent weight")?, &p))));
                        let u: Vec<Linear> = u.collect::<Result<_>>()?;
                        Layer::Lstm(LstmCell {
                            u: u.try_into().expect("four gates"),
                            proj: Some(p.clone()),
                            ..c.clone()
                        })
                    }
                    Layer::Gru(c) => Layer::Gru(lr_gru_from_dense(c, &p)?),
                };
                match out.layers.get_mut(l + 1) {
                    Some(next) => fold_input(next, &p)?,
                    None => match &mut out.output.adapter {
                        Some(a) => *a = mul_t(a, &p),
                        None => out.output.w = Linear::Dense(mul_t(&top_out, &p)),
                    },
                }
            }
        }
    }
    out.validate()?;
    Ok(LrOutcome { network: out, warnings })
}

/// Factor the embedding into `|V| × r` and the output layer into an
/// `|V| × r` matrix plus an `r × d` adapter.
///
/// The embedding's right factor is absorbed into the first layer's input
/// matrices when they are dense, otherwise it is kept as that layer's input
/// projection. When the top layer already emits `r` values the output layer
/// is left alone: the top projection then plays the adapter's role.
pub fn lr_io(net: &Network, r: usize, init: FactorInit, rng: &mut Rng) -> Result<LrOutcome> {
    let mut warnings = Vec::new();
    let (v, e) = net.embedding.shape();
    check_rank(r, v.min(e), "embedding", &mut warnings)?;
    let d = net.output.input_dim();
    if net.output.adapter.is_some() || net.output.w.is_tt() {
        return Err(Error::Config("output layer is already factored".into()));
    }
    if r > d {
        let msg = format!("output layer already reads {d} < {r} values; left unfactored");
        warn!("{msg}");
        warnings.push(msg);
    }
    if net.layers[0].in_proj().is_some() {
        return Err(Error::Config("first layer already has an input projection".into()));
    }
    let mut out = net.clone();
    let first = &mut out.layers[0];
    let can_fold = first.family() != Family::TensorTrain
        && !matches!(first, Layer::Gru(c) if c.blend == GruBlend::Input);
    match init {
        FactorInit::Random { scale } => {
            out.embedding = Matrix::random(rng, v, r, scale);
            if can_fold {
                let rebuild = |l: &mut Linear, rng: &mut Rng| *l = Linear::Dense(Matrix::random(rng, l.rows(), r, scale));
                match first {
                    Layer::Rnn(c) => rebuild(&mut c.w, rng),
                    Layer::Lstm(c) => c.w.iter_mut().for_each(|l| rebuild(l, rng)),
                    Layer::Gru(c) => c.w.iter_mut().for_each(|l| rebuild(l, rng)),
                }
            } else {
                set_in_proj(first, Matrix::random(rng, e, r, scale));
            }
            if r < d {
                out.output.w = Linear::Dense(Matrix::random(rng, v, r, scale));
                out.output.adapter = Some(Matrix::random(rng, r, d, scale));
            }
        }
        FactorInit::Svd => {
            let pair = factorize_matrix(&net.embedding, r)?;
            out.embedding = pair.a;
            if can_fold {
                fold_input(first, &pair.b)?;
            } else {
                set_in_proj(first, transpose(&pair.b));
            }
            if r < d {
                let pair = factorize_matrix(&dense_mat(&net.output.w, "output weight")?, r)?;
                out.output.w = Linear::Dense(pair.a);
                out.output.adapter = Some(pair.b);
            }
        }
    }
    out.validate()?;
    Ok(LrOutcome { network: out, warnings })
}

fn set_in_proj(layer: &mut Layer, p: Matrix) {
    match layer {
        Layer::Rnn(c) => c.in_proj = Some(p),
        Layer::Lstm(c) => c.in_proj = Some(p),
        Layer::Gru(c) => c.in_proj = Some(p),
    }
}

/// [`lr_cells`] with rank `r_cells` followed by [`lr_io`] with rank `r_io`.
pub fn compress_model_lr(net: &Network, r_cells: usize, r_io: usize, init: FactorInit, rng: &mut Rng) -> Result<LrOutcome> {
    let cells = lr_cells(net, r_cells, init, rng)?;
    let mut io = lr_io(&cells.network, r_io, init, rng)?;
    let mut warnings = cells.warnings;
    warnings.append(&mut io.warnings);
    Ok(LrOutcome {
        network: io.network,
        warnings,
    })
}

fn require_projected(has_proj: bool, op: &'static str) -> Result<()> {
    if has_proj {
        Ok(())
    } else {
        Err(Error::shape(op, "layer has no state projection"))
    }
}

/// One step of a low-rank RNN layer; returns the projected state.
pub fn lr_rnn_step(cell: &RnnCell, x: &[f64], m_prev: &[f64]) -> Result<Vec<f64>> {
    require_projected(cell.proj.is_some(), "lr_rnn_step")?;
    Ok(cell.step(x, m_prev, &mut 0)?.0)
}

/// One step of a low-rank LSTM layer; returns `(m, c)`.
pub fn lr_lstm_step(cell: &LstmCell, x: &[f64], m_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    require_projected(cell.proj.is_some(), "lr_lstm_step")?;
    let (m, c, _) = cell.step(x, m_prev, c_prev, &mut 0)?;
    Ok((m, c))
}

/// One step of a low-rank GRU layer; returns the `r`-dim state.
pub fn lr_gru_step(cell: &GruCell, x: &[f64], s_prev: &[f64]) -> Result<Vec<f64>> {
    require_projected(cell.proj.is_some(), "lr_gru_step")?;
    Ok(cell.step(x, s_prev, &mut 0)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{ArchConfig, CellKind};

    fn rank3(rng: &mut Rng) -> Matrix {
        let a = Matrix::random(rng, 8, 3, 1.0);
        let b = Matrix::random(rng, 3, 6, 1.0);
        a.matmul(&b).unwrap()
    }

    #[test]
    fn exact_rank_recovered() {
        let mut rng = Rng::new(4);
        let w = rank3(&mut rng);
        let pair = factorize_matrix(&w, 3).unwrap();
        assert!(pair.product().sub(&w).unwrap().frobenius_norm() < 1e-8);
        let full = factorize_matrix(&w, 6).unwrap();
        assert!(full.product().sub(&w).unwrap().frobenius_norm() < 1e-10);
        assert!(factorize_matrix(&w, 7).is_err());
    }

    #[test]
    fn pair_param_count() {
        let pair = LowRankPair {
            a: Matrix::zeros(650, 128),
            b: Matrix::zeros(128, 650),
        };
        assert_eq!(pair.param_count(), 166_400);
        assert!((166_400.0 / 422_500.0 - 0.394f64).abs() < 1e-3);
    }

    #[test]
    fn reconstruction_monotone_in_rank() {
        let mut rng = Rng::new(5);
        let w = Matrix::random(&mut rng, 7, 9, 1.0);
        let errs: Vec<f64> = (1..=7)
            .map(|r| factorize_matrix(&w, r).unwrap().product().sub(&w).unwrap().frobenius_norm())
            .collect();
        assert!(errs.windows(2).all(|p| p[1] <= p[0] + 1e-12));
        assert!(errs[6] < 1e-10);
    }

    #[test]
    fn lstm_shared_projection_matches_dense() {
        let mut rng = Rng::new(6);
        let dense = LstmCell::dense_random(&mut rng, 5, 4, 0.7);
        let stack: Vec<&Matrix> = dense.u.iter().map(|u| u.as_dense().unwrap()).collect();
        let pair = factorize_matrix(&Matrix::vstack(&stack).unwrap(), 4).unwrap();
        let lr = LstmCell {
            u: std::array::from_fn(|g| Linear::Dense(pair.a.row_block(4 * g, 4 * g + 4))),
            proj: Some(pair.b.clone()),
            ..dense.clone()
        };
        let x: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let h: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let c: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (h1, c1, _) = dense.step(&x, &h, &c, &mut 0).unwrap();
        let m = pair.b.matvec(&h).unwrap();
        let (m1, c1_lr) = lr_lstm_step(&lr, &x, &m, &c).unwrap();
        let expect = pair.b.matvec(&h1).unwrap();
        for (a, b) in m1.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in c1.iter().zip(&c1_lr) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn gru_permuted_state_matches_dense() {
        let mut rng = Rng::new(7);
        let dense = GruCell::dense_random(&mut rng, 4, 4, 0.8, true);
        let perm = [2, 0, 3, 1];
        let p = Matrix::from_fn(4, 4, |i, j| if perm[i] == j { 1.0 } else { 0.0 });
        let lr = lr_gru_from_dense(&dense, &p).unwrap();
        let x: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let s: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (s1, _) = dense.step(&x, &s, &mut 0).unwrap();
        let out = lr_gru_step(&lr, &x, &p.matvec(&s).unwrap()).unwrap();
        let expect = p.matvec(&s1).unwrap();
        for (a, b) in out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_factors_degenerate_like_dense() {
        let mut rng = Rng::new(8);
        let lr = lr_lstm_random(&mut rng, 3, 6, 3, 0.5).zeros_like();
        let (m, c) = lr_lstm_step(&lr, &[0.3, 0.1, -0.4], &[0.0; 3], &[0.0; 6]).unwrap();
        assert!(m.iter().chain(&c).all(|v| *v == 0.0));
        assert!(lr_lstm_step(&LstmCell::dense_random(&mut rng, 3, 3, 0.1), &[0.0; 3], &[0.0; 3], &[0.0; 3]).is_err());
    }

    #[test]
    fn lr_lstm_macs_below_dense() {
        let mut rng = Rng::new(1);
        let dense = LstmCell::dense_random(&mut rng, 650, 650, 0.1).mac_count();
        let lr = lr_lstm_random(&mut rng, 128, 650, 128, 0.1).mac_count();
        assert_eq!(dense, 3_380_000);
        assert_eq!(lr, 748_800);
    }

    fn net(kind: CellKind, v: usize, k: usize, layers: usize, seed: u64) -> Network {
        let mut cfg = ArchConfig::new(kind, v, k, layers);
        cfg.init_scale = 0.6;
        Network::dense(&cfg, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn full_rank_svd_init_is_exact() {
        for kind in [CellKind::Rnn, CellKind::Lstm, CellKind::Gru] {
            let dense = net(kind, 9, 5, 2, 3);
            let lr = lr_cells(&dense, 5, FactorInit::Svd, &mut Rng::new(0)).unwrap();
            assert_eq!(lr.warnings.len(), 2);
            let ids = [1, 4, 8, 0];
            let a = dense.forward_sequence(&ids, None, None).unwrap();
            let b = lr.network.forward_sequence(&ids, None, None).unwrap();
            for (p, q) in a.probs.iter().zip(&b.probs) {
                for (x, y) in p.iter().zip(q) {
                    assert!((x - y).abs() < 1e-10, "{kind}");
                }
            }
        }
    }

    #[test]
    fn truncated_svd_init_keeps_shapes_and_approximates() {
        let dense = net(CellKind::Lstm, 12, 6, 2, 4);
        let lr = compress_model_lr(&dense, 3, 4, FactorInit::Svd, &mut Rng::new(0)).unwrap().network;
        assert_eq!(lr.embedding.shape(), (12, 4));
        assert_eq!(lr.layers[0].input_dim(), 4);
        assert_eq!(lr.layers[1].output_dim(), 3);
        assert!(lr.output.adapter.is_none() || lr.output.input_dim() == 3);
        let pass = lr.forward_sequence(&[1, 2, 3], None, None).unwrap();
        assert!(pass.probs.iter().all(|p| (p.iter().sum::<f64>() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn lr_io_adds_adapter_when_top_is_wide() {
        let dense = net(CellKind::Gru, 10, 6, 1, 5);
        let out = lr_io(&dense, 3, FactorInit::Svd, &mut Rng::new(0)).unwrap().network;
        assert_eq!(out.output.adapter.as_ref().unwrap().shape(), (3, 6));
        assert_eq!(out.output.w.cols(), 3);
        assert!(lr_io(&out, 3, FactorInit::Svd, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn rank_validation() {
        let dense = net(CellKind::Rnn, 10, 6, 1, 5);
        assert!(lr_cells(&dense, 7, FactorInit::Svd, &mut Rng::new(0)).is_err());
        assert!(lr_cells(&dense, 0, FactorInit::default(), &mut Rng::new(0)).is_err());
        let once = lr_cells(&dense, 3, FactorInit::default(), &mut Rng::new(0)).unwrap().network;
        assert!(lr_cells(&once, 3, FactorInit::default(), &mut Rng::new(0)).is_err());
    }
}
