use serde::{Deserialize, Serialize};

use crate::cells::{CellKind, ParamKind};
use crate::langmodel::LanguageModel;

/// Matrix parameters of a dense model: `g·L·k² + 2|V|k` with `g` = 8 for
/// LSTM, 6 for GRU and 2 for RNN. Biases are not included.
pub fn param_count_dense(cell: CellKind, layers: usize, hidden: usize, vocab: usize) -> u64 {
    let (l, k, v) = (layers as u64, hidden as u64, vocab as u64);
    gates(cell) * 2 * l * k * k + 2 * v * k
}

fn gates(cell: CellKind) -> u64 {
    match cell {
        CellKind::Rnn => 1,
        CellKind::Lstm => 4,
        CellKind::Gru => 3,
    }
}

/// The terms of [`param_count_dense`] separately.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseBreakdown {
    pub per_layer: u64,
    pub layers: u64,
    pub embedding: u64,
    pub output: u64,
    pub total: u64,
}

pub fn dense_breakdown(cell: CellKind, layers: usize, hidden: usize, vocab: usize) -> DenseBreakdown {
    let k = hidden as u64;
    let per_layer = 2 * gates(cell) * k * k;
    let embedding = vocab as u64 * k;
    DenseBreakdown {
        per_layer,
        layers: per_layer * layers as u64,
        embedding,
        output: embedding,
        total: param_count_dense(cell, layers, hidden, vocab),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentStats {
    /// `embedding`, `layerN` or `output`.
    pub name: String,
    pub matrix_params: usize,
    pub bias_params: usize,
    /// Parameters not removed by a pruning mask.
    pub nonzero_params: usize,
    pub stored_bytes: usize,
}

/// Parameter, size and cost accounting of a model.
///
/// `dense_bytes` counts every parameter as 4 bytes. `stored_bytes` counts
/// surviving weights of pruned tensors at 4 bytes, quantized tensors at one
/// byte per surviving code plus 8 bytes for the range, and everything else
/// at 4 bytes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelStats {
    pub components: Vec<ComponentStats>,
    pub matrix_params: usize,
    pub bias_params: usize,
    pub total_params: usize,
    pub nonzero_params: usize,
    pub dense_bytes: usize,
    pub stored_bytes: usize,
    /// Multiply-accumulates of one inference step.
    pub macs: u64,
}

impl ModelStats {
    pub fn of(model: &LanguageModel) -> Self {
        let mut components: Vec<ComponentStats> = Vec::new();
        for p in model.net.params() {
            let head = p.name.split('.').next().unwrap_or(&p.name).to_string();
            if components.last().is_none_or(|c| c.name != head) {
                components.push(ComponentStats {
                    name: head,
                    matrix_params: 0,
                    bias_params: 0,
                    nonzero_params: 0,
                    stored_bytes: 0,
                });
            }
            let c = components.last_mut().expect("pushed above");
            let n = p.data.len();
            let nnz = model.masks.get(&p.name).map_or(n, |m| n - m.zeros());
            match p.kind {
                ParamKind::Matrix => c.matrix_params += n,
                ParamKind::Bias => c.bias_params += n,
            }
            c.nonzero_params += nnz;
            c.stored_bytes += match model.quant.get(&p.name) {
                Some(q) => q.size_bytes() - n + nnz,
                None => 4 * nnz,
            };
        }
        let sum = |f: fn(&ComponentStats) -> usize| components.iter().map(f).sum::<usize>();
        let matrix_params = sum(|c| c.matrix_params);
        let bias_params = sum(|c| c.bias_params);
        let total_params = matrix_params + bias_params;
        Self {
            matrix_params,
            bias_params,
            total_params,
            nonzero_params: sum(|c| c.nonzero_params),
            dense_bytes: 4 * total_params,
            stored_bytes: sum(|c| c.stored_bytes),
            macs: model.net.mac_count(),
            components,
        }
    }

    /// Stored size in units of 10⁶ bytes.
    pub fn size_mb(&self) -> f64 {
        self.stored_bytes as f64 / 1e6
    }

    pub fn component(&self, name: &str) -> Option<&ComponentStats> {
        self.components.iter().find(|c| c.name == name)
    }
}
