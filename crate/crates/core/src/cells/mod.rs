//! Recurrent cells (RNN, LSTM, GRU), the softmax output layer, and the
//! stacked network with forward pass and backpropagation through time.
//!
//! Each cell optionally carries an input projection and a state projection;
//! without them it is the plain dense cell, with them it is the low-rank
//! variant built by [`crate::lowrank`]. Weight matrices are [`Linear`] maps
//! so a cell can equally hold TT-format weights.

mod gru;
mod linear;
mod lstm;
mod network;
mod rnn;

pub use gru::{GruBlend, GruCache, GruCell};
pub use linear::Linear;
pub use lstm::{LstmCache, LstmCell};
pub use network::{softmax_output, ArchConfig, Dropout, ForwardPass, LayerState, Network, OutputLayer, StepCache};
pub use rnn::{RnnCache, RnnCell};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Rnn,
    Lstm,
    Gru,
}

impl std::str::FromStr for CellKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rnn" => Ok(CellKind::Rnn),
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            other => Err(Error::Config(format!("unknown cell kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CellKind::Rnn => "rnn",
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        })
    }
}

/// How a layer's weights are represented.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Dense,
    LowRank,
    TensorTrain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Matrix,
    Bias,
}

/// Named read-only view of one parameter tensor.
#[derive(Debug)]
pub struct ParamRef<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub data: &'a [f64],
    /// Matrix shape; biases are `1 × n`.
    pub shape: (usize, usize),
}

impl<'a> ParamRef<'a> {
    pub(crate) fn new(name: String, kind: ParamKind, data: &'a [f64]) -> Self {
        Self {
            name,
            kind,
            shape: (1, data.len()),
            data,
        }
    }

    pub(crate) fn matrix(name: String, m: &'a Matrix) -> Self {
        Self::new(name, ParamKind::Matrix, m.data()).with_shape(m.shape())
    }

    pub(crate) fn with_shape(mut self, shape: (usize, usize)) -> Self {
        self.shape = shape;
        self
    }
}

/// Named mutable view of one parameter tensor.
#[derive(Debug)]
pub struct ParamMut<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub data: &'a mut [f64],
}

impl<'a> ParamMut<'a> {
    pub(crate) fn new(name: String, kind: ParamKind, data: &'a mut [f64]) -> Self {
        Self { name, kind, data }
    }
}

pub(crate) fn check_len(op: &'static str, v: &[f64], expect: usize) -> Result<()> {
    if v.len() != expect {
        return Err(Error::shape(op, format!("length {} where {expect} is required", v.len())));
    }
    Ok(())
}

/// One recurrent layer of any kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Rnn(RnnCell),
    Lstm(LstmCell),
    Gru(GruCell),
}

#[derive(Clone, Debug)]
pub enum LayerCache {
    Rnn(RnnCache),
    Lstm(LstmCache),
    Gru(GruCache),
}

impl Layer {
    pub fn kind(&self) -> CellKind {
        match self {
            Layer::Rnn(_) => CellKind::Rnn,
            Layer::Lstm(_) => CellKind::Lstm,
            Layer::Gru(_) => CellKind::Gru,
        }
    }

    pub fn family(&self) -> Family {
        let (linears, projected): (Vec<&Linear>, bool) = match self {
            Layer::Rnn(c) => (vec![&c.w, &c.u], c.proj.is_some()),
            Layer::Lstm(c) => (c.w.iter().chain(&c.u).collect(), c.proj.is_some()),
            Layer::Gru(c) => (c.w.iter().chain(&c.u).collect(), c.proj.is_some()),
        };
        if linears.iter().any(|l| l.is_tt()) {
            Family::TensorTrain
        } else if projected {
            Family::LowRank
        } else {
            Family::Dense
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Layer::Rnn(c) => c.input_dim(),
            Layer::Lstm(c) => c.input_dim(),
            Layer::Gru(c) => c.input_dim(),
        }
    }

    /// Size of the emitted vector fed to the next layer.
    pub fn output_dim(&self) -> usize {
        match self {
            Layer::Rnn(c) => c.state_dim(),
            Layer::Lstm(c) => c.state_dim(),
            Layer::Gru(c) => c.state_dim(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            Layer::Rnn(c) => c.hidden_dim(),
            Layer::Lstm(c) => c.hidden_dim(),
            Layer::Gru(c) => c.hidden_dim(),
        }
    }

    pub fn in_proj(&self) -> Option<&Matrix> {
        match self {
            Layer::Rnn(c) => c.in_proj.as_ref(),
            Layer::Lstm(c) => c.in_proj.as_ref(),
            Layer::Gru(c) => c.in_proj.as_ref(),
        }
    }

    pub fn zero_state(&self) -> LayerState {
        LayerState {
            h: vec![0.0; self.output_dim()],
            c: match self {
                Layer::Lstm(c) => vec![0.0; c.hidden_dim()],
                _ => Vec::new(),
            },
        }
    }

    pub fn zeros_like(&self) -> Layer {
        match self {
            Layer::Rnn(c) => Layer::Rnn(c.zeros_like()),
            Layer::Lstm(c) => Layer::Lstm(c.zeros_like()),
            Layer::Gru(c) => Layer::Gru(c.zeros_like()),
        }
    }

    pub fn step(&self, x: &[f64], state: &LayerState, macs: &mut u64) -> Result<(LayerState, LayerCache)> {
        Ok(match self {
            Layer::Rnn(c) => {
                let (h, cache) = c.step(x, &state.h, macs)?;
                (LayerState { h, c: Vec::new() }, LayerCache::Rnn(cache))
            }
            Layer::Lstm(cell) => {
                let (h, c, cache) = cell.step(x, &state.h, &state.c, macs)?;
                (LayerState { h, c }, LayerCache::Lstm(cache))
            }
            Layer::Gru(c) => {
                let (h, cache) = c.step(x, &state.h, macs)?;
                (LayerState { h, c: Vec::new() }, LayerCache::Gru(cache))
            }
        })
    }

    /// `d` holds the total gradients on this step's output state. Returns
    /// the gradient on the layer input and on the previous state.
    pub fn backward(&self, cache: &LayerCache, d: &LayerState, grad: &mut Layer) -> (Vec<f64>, LayerState) {
        match (self, cache, grad) {
            (Layer::Rnn(c), LayerCache::Rnn(k), Layer::Rnn(g)) => {
                let (dx, dh) = c.backward(k, &d.h, g);
                (dx, LayerState { h: dh, c: Vec::new() })
            }
            (Layer::Lstm(c), LayerCache::Lstm(k), Layer::Lstm(g)) => {
                let (dx, dh, dc) = c.backward(k, &d.h, &d.c, g);
                (dx, LayerState { h: dh, c: dc })
            }
            (Layer::Gru(c), LayerCache::Gru(k), Layer::Gru(g)) => {
                let (dx, dh) = c.backward(k, &d.h, g);
                (dx, LayerState { h: dh, c: Vec::new() })
            }
            _ => panic!("layer, cache and gradient kinds differ"),
        }
    }

    pub fn mac_count(&self) -> u64 {
        match self {
            Layer::Rnn(c) => c.mac_count(),
            Layer::Lstm(c) => c.mac_count(),
            Layer::Gru(c) => c.mac_count(),
        }
    }

    pub(crate) fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        match self {
            Layer::Rnn(c) => c.params(prefix, out),
            Layer::Lstm(c) => c.params(prefix, out),
            Layer::Gru(c) => c.params(prefix, out),
        }
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        match self {
            Layer::Rnn(c) => c.params_mut(prefix, out),
            Layer::Lstm(c) => c.params_mut(prefix, out),
            Layer::Gru(c) => c.params_mut(prefix, out),
        }
    }
}
