use super::{check_len, Linear, ParamKind, ParamMut, ParamRef};
use crate::error::Result;
use crate::numkit::{Matrix, Rng};

/// Vanilla tanh RNN layer, optionally with a low-rank input/state factorization.
///
/// `a = W (P_in x) + U s_prev + b`, `h = tanh(a)`, `s = P h` (or `h` without `P`).
/// The emitted vector and the recurrent state are both `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnCell {
    pub in_proj: Option<Matrix>,
    pub w: Linear,
    pub u: Linear,
    pub b: Vec<f64>,
    pub proj: Option<Matrix>,
}

#[derive(Clone, Debug)]
pub struct RnnCache {
    x: Vec<f64>,
    xi: Vec<f64>,
    s_prev: Vec<f64>,
    h: Vec<f64>,
}

impl RnnCell {
    pub fn dense_random(rng: &mut Rng, input: usize, hidden: usize, scale: f64) -> Self {
        Self {
            in_proj: None,
            w: Linear::Dense(Matrix::random(rng, hidden, input, scale)),
            u: Linear::Dense(Matrix::random(rng, hidden, hidden, scale)),
            b: vec![0.0; hidden],
            proj: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.in_proj.as_ref().map_or(self.w.cols(), Matrix::cols)
    }

    pub fn hidden_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn state_dim(&self) -> usize {
        self.proj.as_ref().map_or(self.hidden_dim(), Matrix::rows)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            in_proj: self.in_proj.as_ref().map(|m| Matrix::zeros(m.rows(), m.cols())),
            w: self.w.zeros_like(),
            u: self.u.zeros_like(),
            b: vec![0.0; self.b.len()],
            proj: self.proj.as_ref().map(|m| Matrix::zeros(m.rows(), m.cols())),
        }
    }

    pub fn step(&self, x: &[f64], s_prev: &[f64], macs: &mut u64) -> Result<(Vec<f64>, RnnCache)> {
        check_len("rnn_step input", x, self.input_dim())?;
        check_len("rnn_step state", s_prev, self.state_dim())?;
        let xi = match &self.in_proj {
            Some(p) => {
                let mut v = vec![0.0; p.rows()];
                *macs += p.matvec_acc(x, &mut v);
                v
            }
            None => x.to_vec(),
        };
        let mut a = self.b.clone();
        *macs += self.w.forward_acc(&xi, &mut a);
        *macs += self.u.forward_acc(s_prev, &mut a);
        let h: Vec<f64> = a.iter().map(|v| v.tanh()).collect();
        let s = match &self.proj {
            Some(p) => {
                let mut v = vec![0.0; p.rows()];
                *macs += p.matvec_acc(&h, &mut v);
                v
            }
            None => h.clone(),
        };
        Ok((
            s,
            RnnCache {
                x: x.to_vec(),
                xi,
                s_prev: s_prev.to_vec(),
                h,
            },
        ))
    }

    /// `ds` is the total gradient on the emitted state. Returns `(dx, ds_prev)`.
    pub fn backward(&self, cache: &RnnCache, ds: &[f64], grad: &mut RnnCell) -> (Vec<f64>, Vec<f64>) {
        let dh = match (&self.proj, &mut grad.proj) {
            (Some(p), Some(gp)) => {
                gp.add_outer(ds, &cache.h);
                let mut dh = vec![0.0; p.cols()];
                p.matvec_t_acc(ds, &mut dh);
                dh
            }
            _ => ds.to_vec(),
        };
        let da: Vec<f64> = dh.iter().zip(&cache.h).map(|(g, h)| g * (1.0 - h * h)).collect();
        for (gb, d) in grad.b.iter_mut().zip(&da) {
            *gb += d;
        }
        let mut dxi = vec![0.0; cache.xi.len()];
        let mut ds_prev = vec![0.0; cache.s_prev.len()];
        self.w.backward_acc(&cache.xi, &da, &mut dxi, &mut grad.w);
        self.u.backward_acc(&cache.s_prev, &da, &mut ds_prev, &mut grad.u);
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
            + self.w.mac_count()
            + self.u.mac_count()
            + self.proj.as_ref().map_or(0, |m| m.len() as u64)
    }

    pub(crate) fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        if let Some(p) = &self.in_proj {
            out.push(ParamRef::matrix(format!("{prefix}.in_proj"), p));
        }
        push_linear(out, prefix, "w", &self.w);
        push_linear(out, prefix, "u", &self.u);
        out.push(ParamRef::new(format!("{prefix}.b"), ParamKind::Bias, &self.b));
        if let Some(p) = &self.proj {
            out.push(ParamRef::matrix(format!("{prefix}.proj"), p));
        }
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        if let Some(p) = &mut self.in_proj {
            out.push(ParamMut::new(format!("{prefix}.in_proj"), ParamKind::Matrix, p.data_mut()));
        }
        push_linear_mut(out, prefix, "w", &mut self.w);
        push_linear_mut(out, prefix, "u", &mut self.u);
        out.push(ParamMut::new(format!("{prefix}.b"), ParamKind::Bias, &mut self.b));
        if let Some(p) = &mut self.proj {
            out.push(ParamMut::new(format!("{prefix}.proj"), ParamKind::Matrix, p.data_mut()));
        }
    }
}

pub(crate) fn push_linear<'a>(out: &mut Vec<ParamRef<'a>>, prefix: &str, name: &str, l: &'a Linear) {
    for (suffix, data, shape) in l.tensors() {
        out.push(ParamRef::new(format!("{prefix}.{name}{suffix}"), ParamKind::Matrix, data).with_shape(shape));
    }
}

pub(crate) fn push_linear_mut<'a>(out: &mut Vec<ParamMut<'a>>, prefix: &str, name: &str, l: &'a mut Linear) {
    for (suffix, data) in l.tensors_mut() {
        out.push(ParamMut::new(format!("{prefix}.{name}{suffix}"), ParamKind::Matrix, data));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(w: f64, u: f64, b: f64) -> RnnCell {
        RnnCell {
            in_proj: None,
            w: Linear::Dense(Matrix::new(1, 1, vec![w]).unwrap()),
            u: Linear::Dense(Matrix::new(1, 1, vec![u]).unwrap()),
            b: vec![b],
            proj: None,
        }
    }

    #[test]
    fn zero_weights_give_zero() {
        let mut rng = Rng::new(1);
        let cell = RnnCell::dense_random(&mut rng, 3, 4, 0.1).zeros_like();
        let (h, _) = cell.step(&[0.3, -0.2, 0.9], &[0.1; 4], &mut 0).unwrap();
        assert_eq!(h, vec![0.0; 4]);
    }

    #[test]
    fn scalar_tanh() {
        let cell = scalar(1.0, 0.0, 0.0);
        let (h, _) = cell.step(&[0.5], &[0.0], &mut 0).unwrap();
        assert!((h[0] - 0.46211715726).abs() < 1e-10);
        assert!((h[0] - 0.5f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn output_bounded() {
        let mut rng = Rng::new(2);
        let cell = RnnCell::dense_random(&mut rng, 5, 6, 2.0);
        for _ in 0..50 {
            let x: Vec<f64> = (0..5).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let s: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let (h, _) = cell.step(&x, &s, &mut 0).unwrap();
            assert!(h.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn shape_checked() {
        let cell = scalar(1.0, 1.0, 0.0);
        assert!(cell.step(&[1.0, 2.0], &[0.0], &mut 0).is_err());
    }
}
