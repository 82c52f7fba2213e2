use serde::{Deserialize, Serialize};

use super::rnn::{push_linear, push_linear_mut};
use super::{check_len, Linear, ParamKind, ParamMut, ParamRef};
use crate::error::{Error, Result};
use crate::numkit::{sigmoid, Matrix, Rng};

pub const GATES: [&str; 3] = ["z", "r", "h"];

/// What the update gate blends the proposal with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GruBlend {
    /// `(1 − z) ⊙ s_prev + z ⊙ x̃`, the usual GRU.
    #[default]
    Recurrent,
    /// `(1 − z) ⊙ x_in + z ⊙ x̃`, literally mixing in the layer input.
    Input,
}

/// GRU layer with optional gate biases and an optional post-proposal projection.
///
/// Gates `z`, `r` and the state `s` live in the state space; the proposal
/// `x̃ = tanh(W_h x + U_h (r ⊙ s) + b_h)` lives in the hidden space and is
/// mapped back by `P` when present (the low-rank variant).
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub in_proj: Option<Matrix>,
    pub w: [Linear; 3],
    pub u: [Linear; 3],
    pub b: Option<[Vec<f64>; 3]>,
    pub proj: Option<Matrix>,
    pub blend: GruBlend,
}

#[derive(Clone, Debug)]
pub struct GruCache {
    x: Vec<f64>,
    xi: Vec<f64>,
    s_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    rs: Vec<f64>,
    proposal: Vec<f64>,
    p: Vec<f64>,
}

impl GruCell {
    pub fn dense_random(rng: &mut Rng, input: usize, hidden: usize, scale: f64, bias: bool) -> Self {
        let w = std::array::from_fn(|_| Linear::Dense(Matrix::random(rng, hidden, input, scale)));
        let u = std::array::from_fn(|_| Linear::Dense(Matrix::random(rng, hidden, hidden, scale)));
        Self {
            in_proj: None,
            w,
            u,
            b: bias.then(|| std::array::from_fn(|_| vec![0.0; hidden])),
            proj: None,
            blend: GruBlend::Recurrent,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.in_proj.as_ref().map_or(self.w[0].cols(), Matrix::cols)
    }

    /// Size of the proposal vector.
    pub fn hidden_dim(&self) -> usize {
        self.w[2].rows()
    }

    pub fn state_dim(&self) -> usize {
        self.w[0].rows()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            in_proj: self.in_proj.as_ref().map(|m| Matrix::zeros(m.rows(), m.cols())),
            w: std::array::from_fn(|g| self.w[g].zeros_like()),
            u: std::array::from_fn(|g| self.u[g].zeros_like()),
            b: self
                .b
                .as_ref()
                .map(|b| std::array::from_fn(|g| vec![0.0; b[g].len()])),
            proj: self.proj.as_ref().map(|m| Matrix::zeros(m.rows(), m.cols())),
            blend: self.blend,
        }
    }

    pub fn step(&self, x: &[f64], s_prev: &[f64], macs: &mut u64) -> Result<(Vec<f64>, GruCache)> {
        check_len("gru_step input", x, self.input_dim())?;
        check_len("gru_step state", s_prev, self.state_dim())?;
        let xi = match &self.in_proj {
            Some(p) => {
                let mut v = vec![0.0; p.rows()];
                *macs += p.matvec_acc(x, &mut v);
                v
            }
            None => x.to_vec(),
        };
        if self.blend == GruBlend::Input && xi.len() != self.state_dim() {
            return Err(Error::shape(
                "gru_step",
                format!(
                    "input blending needs input dim {} to equal state dim {}",
                    xi.len(),
                    self.state_dim()
                ),
            ));
        }
        let ns = self.state_dim();
        let pre = |g: usize, macs: &mut u64, rhs: &[f64]| {
            let mut a = match &self.b {
                Some(b) => b[g].clone(),
                None => vec![0.0; self.w[g].rows()],
            };
            *macs += self.w[g].forward_acc(&xi, &mut a);
            *macs += self.u[g].forward_acc(rhs, &mut a);
            a
        };
        let z: Vec<f64> = pre(0, macs, s_prev).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = pre(1, macs, s_prev).into_iter().map(sigmoid).collect();
        let rs: Vec<f64> = r.iter().zip(s_prev).map(|(a, b)| a * b).collect();
        let proposal: Vec<f64> = pre(2, macs, &rs).into_iter().map(f64::tanh).collect();
        let p = match &self.proj {
            Some(pm) => {
                let mut v = vec![0.0; pm.rows()];
                *macs += pm.matvec_acc(&proposal, &mut v);
                v
            }
            None => proposal.clone(),
        };
        let base = match self.blend {
            GruBlend::Recurrent => s_prev,
            GruBlend::Input => &xi,
        };
        let s: Vec<f64> = (0..ns).map(|j| (1.0 - z[j]) * base[j] + z[j] * p[j]).collect();
        let cache = GruCache {
            x: x.to_vec(),
            xi,
            s_prev: s_prev.to_vec(),
            z,
            r,
            rs,
            proposal,
            p,
        };
        Ok((s, cache))
    }

    pub fn cached_gates(cache: &GruCache) -> (&[f64], &[f64]) {
        (&cache.z, &cache.r)
    }

    pub fn cached_proposal(cache: &GruCache) -> &[f64] {
        &cache.p
    }

    /// `ds` is the total gradient on the emitted state. Returns `(dx, ds_prev)`.
    pub fn backward(&self, cache: &GruCache, ds: &[f64], grad: &mut GruCell) -> (Vec<f64>, Vec<f64>) {
        let ns = ds.len();
        let base: &[f64] = match self.blend {
            GruBlend::Recurrent => &cache.s_prev,
            GruBlend::Input => &cache.xi,
        };
        let mut dz = vec![0.0; ns];
        let mut dp = vec![0.0; ns];
        let mut dbase = vec![0.0; ns];
        for j in 0..ns {
            dz[j] = ds[j] * (cache.p[j] - base[j]);
            dp[j] = ds[j] * cache.z[j];
            dbase[j] = ds[j] * (1.0 - cache.z[j]);
        }
        let dprop = match (&self.proj, &mut grad.proj) {
            (Some(pm), Some(gp)) => {
                gp.add_outer(&dp, &cache.proposal);
                let mut v = vec![0.0; pm.cols()];
                pm.matvec_t_acc(&dp, &mut v);
                v
            }
            _ => dp,
        };
        let dah: Vec<f64> = dprop
            .iter()
            .zip(&cache.proposal)
            .map(|(g, x)| g * (1.0 - x * x))
            .collect();
        let mut dxi = vec![0.0; cache.xi.len()];
        let mut ds_prev = vec![0.0; ns];
        let mut drs = vec![0.0; ns];
        self.w[2].backward_acc(&cache.xi, &dah, &mut dxi, &mut grad.w[2]);
        self.u[2].backward_acc(&cache.rs, &dah, &mut drs, &mut grad.u[2]);
        let mut dar = vec![0.0; ns];
        let mut daz = vec![0.0; ns];
        for j in 0..ns {
            ds_prev[j] += drs[j] * cache.r[j];
            let dr = drs[j] * cache.s_prev[j];
            dar[j] = dr * cache.r[j] * (1.0 - cache.r[j]);
            daz[j] = dz[j] * cache.z[j] * (1.0 - cache.z[j]);
        }
        self.w[0].backward_acc(&cache.xi, &daz, &mut dxi, &mut grad.w[0]);
        self.u[0].backward_acc(&cache.s_prev, &daz, &mut ds_prev, &mut grad.u[0]);
        self.w[1].backward_acc(&cache.xi, &dar, &mut dxi, &mut grad.w[1]);
        self.u[1].backward_acc(&cache.s_prev, &dar, &mut ds_prev, &mut grad.u[1]);
        if let Some(gb) = &mut grad.b {
            for (g, da) in [&daz, &dar, &dah].into_iter().enumerate() {
                for (b, d) in gb[g].iter_mut().zip(da) {
                    *b += d;
                }
            }
        }
        match self.blend {
            GruBlend::Recurrent => ds_prev.iter_mut().zip(&dbase).for_each(|(a, b)| *a += b),
            GruBlend::Input => dxi.iter_mut().zip(&dbase).for_each(|(a, b)| *a += b),
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
        (dx, ds_prev)
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
        if let Some(b) = &self.b {
            for (g, name) in GATES.iter().enumerate() {
                out.push(ParamRef::new(format!("{prefix}.b_{name}"), ParamKind::Bias, &b[g]));
            }
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
        if let Some(b) = &mut self.b {
            for (g, v) in b.iter_mut().enumerate() {
                out.push(ParamMut::new(format!("{prefix}.b_{}", GATES[g]), ParamKind::Bias, v));
            }
        }
        if let Some(p) = &mut self.proj {
            out.push(ParamMut::new(format!("{prefix}.proj"), ParamKind::Matrix, p.data_mut()));
        }
    }
}
