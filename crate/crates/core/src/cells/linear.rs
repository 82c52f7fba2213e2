use crate::numkit::Matrix;
use crate::tensortrain::TtMatrix;

/// A weight matrix used as a linear map inside a cell, stored densely or in TT format.
#[derive(Clone, Debug, PartialEq)]
pub enum Linear {
    Dense(Matrix),
    Tt(TtMatrix),
}

impl Linear {
    pub fn rows(&self) -> usize {
        match self {
            Linear::Dense(m) => m.rows(),
            Linear::Tt(t) => t.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Linear::Dense(m) => m.cols(),
            Linear::Tt(t) => t.cols(),
        }
    }

    pub fn is_tt(&self) -> bool {
        matches!(self, Linear::Tt(_))
    }

    pub fn as_dense(&self) -> Option<&Matrix> {
        match self {
            Linear::Dense(m) => Some(m),
            Linear::Tt(_) => None,
        }
    }

    /// Dense materialization (a copy for dense weights).
    pub fn to_dense(&self) -> Matrix {
        match self {
            Linear::Dense(m) => m.clone(),
            Linear::Tt(t) => t.to_dense(),
        }
    }

    pub fn zeros_like(&self) -> Linear {
        match self {
            Linear::Dense(m) => Linear::Dense(Matrix::zeros(m.rows(), m.cols())),
            Linear::Tt(t) => Linear::Tt(t.zeros_like()),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Linear::Dense(m) => m.len(),
            Linear::Tt(t) => t.param_count(),
        }
    }

    pub fn mac_count(&self) -> u64 {
        match self {
            Linear::Dense(m) => m.len() as u64,
            Linear::Tt(t) => t.mac_count(),
        }
    }

    /// `out += W x`; returns executed multiply-accumulates.
    pub fn forward_acc(&self, x: &[f64], out: &mut [f64]) -> u64 {
        match self {
            Linear::Dense(m) => m.matvec_acc(x, out),
            Linear::Tt(t) => t.matvec_acc(x, out),
        }
    }

    /// Accumulate `∂L/∂W` into `grad` and `Wᵀ gy` into `gx`.
    pub fn backward_acc(&self, x: &[f64], gy: &[f64], gx: &mut [f64], grad: &mut Linear) {
        match (self, grad) {
            (Linear::Dense(m), Linear::Dense(g)) => {
                g.add_outer(gy, x);
                m.matvec_t_acc(gy, gx);
            }
            (Linear::Tt(t), Linear::Tt(g)) => {
                t.backward(x, gy, gx, g);
            }
            _ => panic!("gradient buffer structure differs from weights"),
        }
    }

    /// Flat views of the stored tensors, with a suffix naming each and a
    /// matrix shape (`r_m · k_m × r_{m+1}` for a TT core).
    pub fn tensors(&self) -> Vec<(String, &[f64], (usize, usize))> {
        match self {
            Linear::Dense(m) => vec![(String::new(), m.data(), m.shape())],
            Linear::Tt(t) => t
                .cores()
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let r = t.ranks()[i + 1];
                    (format!(".core{i}"), c.as_slice(), (c.len() / r, r))
                })
                .collect(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        match self {
            Linear::Dense(m) => vec![(String::new(), m.data_mut())],
            Linear::Tt(t) => t
                .cores_mut()
                .iter_mut()
                .enumerate()
                .map(|(i, c)| (format!(".core{i}"), c.as_mut_slice()))
                .collect(),
        }
    }
}
