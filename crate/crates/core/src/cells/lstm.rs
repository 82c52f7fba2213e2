use super::rnn::{push_linear, push_linear_mut};
use super::{check_len, Linear, ParamKind, ParamMut, ParamRef};
use crate::error::Result;
use crate::numkit::{sigmoid, Matrix, Rng};

pub const GATES: [&str; 4] = ["i", "f", "c", "o"];

/// LSTM layer. Gate order is input, forget, cell candidate, output.
///
/// With `proj = Some(P)` the layer is the shared-projection low-rank
/// variant: the recurrent input is `m_prev = P h_prev`, the emitted vector
/// is `m = P h`, and the next layer reads `m`. One `P` per layer realizes
/// every tied `b` factor at once.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub in_proj: Option<Matrix>,
    pub w: [Linear; 4],
    pub u: [Linear; 4],
    pub b: [Vec<f64>; 4],
    pub proj: Option<Matrix>,
}

#[derive(Clone, Debug)]
pub struct LstmCache {
    x: Vec<f64>,
    xi: Vec<f64>,
    m_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: [Vec<f64>; 4],
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

impl LstmCell {
    pub fn dense_random(rng: &mut Rng, input: usize, hidden: usize, scale: f64) -> Self {
        let w = std::array::from_fn(|_| Linear::Dense(Matrix::random(rng, hidden, input, scale)));
        let u = std::array::from_fn(|_| Linear::Dense(Matrix::random(rng, hidden, hidden, scale)));
        Self {
            in_proj: None,
            w,
            u,
            b: std::array::from_fn(|_| vec![0.0; hidden]),
            proj: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.in_proj.as_ref().map_or(self.w[0].cols(), Matrix::cols)
    }

    pub fn hidden_dim(&self) -> usize {
        self.w[0].rows()
    }

    /// Dimension of the emitted / recurrent vector `m`.
    pub fn state_dim(&self) -> usize {
        self.proj.as_ref().map_or(self.hidden_dim(), Matrix::rows)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            in_proj: self.in_proj.as_ref().map(|m| Matrix::zeros(m.rows(), m.cols())),
            w: std::array::from_fn(|g| self.w[g].zeros_like()),
            u: std::array::from_fn(|g| self.u[g].zeros_like()),
            b: std::array::from_fn(|g| vec![0.0; self.b[g].len()]),
            proj: self.proj.as_ref().map(|m| Matrix::zeros(m.rows(), m.cols())),
        }
    }

    /// One time step. Returns `(m, c, cache)`.
    pub fn step(
        &self,
        x: &[f64],
        m_prev: &[f64],
        c_prev: &[f64],
        macs: &mut u64,
    ) -> Result<(Vec<f64>, Vec<f64>, LstmCache)> {
        check_len("lstm_step input", x, self.input_dim())?;
        check_len("lstm_step state", m_prev, self.state_dim())?;
        check_len("lstm_step cell", c_prev, self.hidden_dim())?;
        let xi = match &self.in_proj {
            Some(p) => {
                let mut v = vec![0.0; p.rows()];
                *macs += p.matvec_acc(x, &mut v);
                v
            }
            None => x.to_vec(),
        };
        let gates: [Vec<f64>; 4] = std::array::from_fn(|g| {
            let mut a = self.b[g].clone();
            *macs += self.w[g].forward_acc(&xi, &mut a);
            *macs += self.u[g].forward_acc(m_prev, &mut a);
            if g == 2 {
                a.iter_mut().for_each(|v| *v = v.tanh());
            } else {
                a.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            a
        });
        let k = self.hidden_dim();
        let mut c = vec![0.0; k];
        let mut tanh_c = vec![0.0; k];
        let mut h = vec![0.0; k];
        for j in 0..k {
            c[j] = gates[1][j] * c_prev[j] + gates[0][j] * gates[2][j];
            tanh_c[j] = c[j].tanh();
            h[j] = gates[3][j] * tanh_c[j];
        }
        let m = match &self.proj {
            Some(p) => {
                let mut v = vec![0.0; p.rows()];
                *macs += p.matvec_acc(&h, &mut v);
                v
            }
            None => h.clone(),
        };
        let cache = LstmCache {
            x: x.to_vec(),
            xi,
            m_prev: m_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates,
            tanh_c,
            h,
        };
        Ok((m, c.clone(), cache))
    }

    /// Hidden vector `h = o ⊙ tanh(c)` of a cached step (before projection).
    pub fn cached_hidden(cache: &LstmCache) -> &[f64] {
        &cache.h
    }

    /// Gate activations `[i, f, c̃, o]` of a cached step.
    pub fn cached_gates(cache: &LstmCache) -> &[Vec<f64>; 4] {
        &cache.gates
    }

    /// `dm`, `dc` are the total gradients on this step's emitted vector and
    /// cell state. Returns `(dx, dm_prev, dc_prev)`.
    pub fn backward(
        &self,
        cache: &LstmCache,
        dm: &[f64],
        dc: &[f64],
        grad: &mut LstmCell,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let dh = match (&self.proj, &mut grad.proj) {
            (Some(p), Some(gp)) => {
                gp.add_outer(dm, &cache.h);
                let mut dh = vec![0.0; p.cols()];
                p.matvec_t_acc(dm, &mut dh);
                dh
            }
            _ => dm.to_vec(),
        };
        let [i, f, g, o] = &cache.gates;
        let k = dh.len();
        let mut da: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; k]);
        let mut dc_prev = vec![0.0; k];
        for j in 0..k {
            let tc = cache.tanh_c[j];
            let d_o = dh[j] * tc;
            let d_c = dh[j] * o[j] * (1.0 - tc * tc) + dc[j];
            let d_i = d_c * g[j];
            let d_g = d_c * i[j];
            let d_f = d_c * cache.c_prev[j];
            dc_prev[j] = d_c * f[j];
            da[0][j] = d_i * i[j] * (1.0 - i[j]);
            da[1][j] = d_f * f[j] * (1.0 - f[j]);
            da[2][j] = d_g * (1.0 - g[j] * g[j]);
            da[3][j] = d_o * o[j] * (1.0 - o[j]);
        }
        let mut dxi = vec![0.0; cache.xi.len()];
        let mut dm_prev = vec![0.0; cache.m_prev.len()];
        let grad_w = &mut grad.w;
        let grad_u = &mut grad.u;
        for gate in 0..4 {
            for (gb, d) in grad.b[gate].iter_mut().zip(&da[gate]) {
                *gb += d;
            }
            self.w[gate].backward_acc(&cache.xi, &da[gate], &mut dxi, &mut grad_w[gate]);
            self.u[gate].backward_acc(&cache.m_prev, &da[gate], &mut dm_prev, &mut grad_u[gate]);
        }
        let dx = match (&self.in_proj, &mut grad.in_proj) {
            (Some(p), Some(gp)) => {
                gp.add_outer(&dxi, &cache.x);
                let mut dx = vec![0.0; p.cols()];
                p.matvec_t_acc(&dxi, &mut dx);
                dx
            }
            _ => dxi,
        };
        (dx, dm_prev, dc_prev)
    }

    pub fn mac_count(&self) -> u64 {
        self.in_proj.as_ref().map_or(0, |m| m.len() as u64)
            + self.w.iter().chain(&self.u).map(Linear::mac_count).sum::<u64>()
            + self.proj.as_ref().map_or(0, |m| m.len() as u64)
    }

    pub(crate) fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        if let Some(p) = &self.in_proj {
            out.push(ParamRef::matrix(format!("{prefix}.in_proj"), p));
        }
        for (g, name) in GATES.iter().enumerate() {
            push_linear(out, prefix, &format!("w_{name}"), &self.w[g]);
            push_linear(out, prefix, &format!("u_{name}"), &self.u[g]);
        }
        for (g, name) in GATES.iter().enumerate() {
            out.push(ParamRef::new(format!("{prefix}.b_{name}"), ParamKind::Bias, &self.b[g]));
        }
        if let Some(p) = &self.proj {
            out.push(ParamRef::matrix(format!("{prefix}.proj"), p));
        }
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        if let Some(p) = &mut self.in_proj {
            out.push(ParamMut::new(format!("{prefix}.in_proj"), ParamKind::Matrix, p.data_mut()));
        }
        for (g, (w, u)) in self.w.iter_mut().zip(self.u.iter_mut()).enumerate() {
            push_linear_mut(out, prefix, &format!("w_{}", GATES[g]), w);
            push_linear_mut(out, prefix, &format!("u_{}", GATES[g]), u);
        }
        for (g, b) in self.b.iter_mut().enumerate() {
            out.push(ParamMut::new(format!("{prefix}.b_{}", GATES[g]), ParamKind::Bias, b));
        }
        if let Some(p) = &mut self.proj {
            out.push(ParamMut::new(format!("{prefix}.proj"), ParamKind::Matrix, p.data_mut()));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(w: [f64; 4], u: [f64; 4], b: [f64; 4]) -> LstmCell {
        let one = |v: f64| Linear::Dense(Matrix::new(1, 1, vec![v]).unwrap());
        LstmCell {
            in_proj: None,
            w: w.map(one),
            u: u.map(one),
            b: b.map(|v| vec![v]),
            proj: None,
        }
    }

    #[test]
    fn zero_weights_zero_cell() {
        let mut rng = Rng::new(1);
        let cell = LstmCell::dense_random(&mut rng, 3, 4, 0.1).zeros_like();
        let (h, c, cache) = cell.step(&[1.0, -1.0, 0.5], &[0.2; 4], &[0.0; 4], &mut 0).unwrap();
        assert_eq!(h, vec![0.0; 4]);
        assert_eq!(c, vec![0.0; 4]);
        for g in [0, 1, 3] {
            assert!(LstmCell::cached_gates(&cache)[g].iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn zero_weights_halve_cell() {
        let mut rng = Rng::new(1);
        let cell = LstmCell::dense_random(&mut rng, 2, 3, 0.1).zeros_like();
        let c0 = [0.8, -2.0, 4.0];
        let (h, c, _) = cell.step(&[0.3, 0.3], &[0.0; 3], &c0, &mut 0).unwrap();
        for j in 0..3 {
            assert_eq!(c[j], 0.5 * c0[j]);
            assert!((h[j] - 0.5 * (0.5 * c0[j]).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_matches_direct_evaluation() {
        let w = [0.3, -0.7, 1.1, 0.4];
        let u = [0.5, 0.2, -0.9, 0.8];
        let b = [0.1, 0.6, -0.2, 0.05];
        let (x, hp, cp) = (0.9, -0.4, 0.25);
        let cell = scalar(w, u, b);
        let (h, c, _) = cell.step(&[x], &[hp], &[cp], &mut 0).unwrap();
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let i = s(w[0] * x + u[0] * hp + b[0]);
        let f = s(w[1] * x + u[1] * hp + b[1]);
        let g = (w[2] * x + u[2] * hp + b[2]).tanh();
        let o = s(w[3] * x + u[3] * hp + b[3]);
        let c_ref = f * cp + i * g;
        let h_ref = o * c_ref.tanh();
        assert!((c[0] - c_ref).abs() < 1e-14);
        assert!((h[0] - h_ref).abs() < 1e-14);
    }

    #[test]
    fn closed_input_gate_keeps_forget_path() {
        let cell = scalar([0.0; 4], [0.0; 4], [-1e4, 0.3, 0.7, 0.0]);
        let c_prev = 1.7;
        let (_, c, cache) = cell.step(&[2.0], &[1.0], &[c_prev], &mut 0).unwrap();
        let f = LstmCell::cached_gates(&cache)[1][0];
        assert_eq!(LstmCell::cached_gates(&cache)[0][0], 0.0);
        assert_eq!(c[0], f * c_prev);
    }
}
