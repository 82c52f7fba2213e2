//! Magnitude pruning with masks that survive fine-tuning, and 8-bit linear
//! quantization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cells::{Network, ParamKind};
use crate::error::{Error, Result};
use crate::langmodel::{train, Corpus, LanguageModel, TrainConfig, TrainHistory};
use crate::numkit::Matrix;

/// Keep-mask for one weight tensor (`true` = weight survives).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneMask {
    pub keep: Vec<bool>,
    pub target_sparsity: f64,
}

impl PruneMask {
    pub fn numel(&self) -> usize {
        self.keep.len()
    }

    pub fn zeros(&self) -> usize {
        self.keep.iter().filter(|k| !**k).count()
    }

    pub fn sparsity(&self) -> f64 {
        self.zeros() as f64 / self.numel() as f64
    }

    /// Zero every masked entry of `w`.
    pub fn apply(&self, w: &mut [f64]) {
        for (v, k) in w.iter_mut().zip(&self.keep) {
            if !k {
                *v = 0.0;
            }
        }
    }
}

/// Masks keyed by parameter name.
pub type MaskSet = BTreeMap<String, PruneMask>;

/// Mask the `round(sparsity · n)` entries of smallest magnitude; equal
/// magnitudes are pruned in index order.
pub fn prune(w: &[f64], target_sparsity: f64) -> Result<PruneMask> {
    if !(0.0..1.0).contains(&target_sparsity) {
        return Err(Error::Param(format!("sparsity {target_sparsity} outside [0, 1)")));
    }
    let n_zero = (target_sparsity * w.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs()).then(a.cmp(&b)));
    let mut keep = vec![true; w.len()];
    for &i in &order[..n_zero] {
        keep[i] = false;
    }
    Ok(PruneMask { keep, target_sparsity })
}

/// Which weight tensors a component name selects.
///
/// `all`, `cells` (every recurrent layer), `layerN`, `embedding`, `output`.
pub fn component_matches(component: &str, param: &str) -> bool {
    let head = param.split('.').next().unwrap_or(param);
    match component {
        "all" => true,
        "cells" => head.starts_with("layer"),
        c => head == c,
    }
}

/// Prune every matrix of `component` in `net` to `sparsity`, each with its
/// own threshold. The weights are zeroed and the masks returned.
pub fn prune_component(net: &mut Network, component: &str, sparsity: f64) -> Result<MaskSet> {
    let mut masks = MaskSet::new();
    for p in net.params_mut() {
        if p.kind != ParamKind::Matrix || !component_matches(component, &p.name) {
            continue;
        }
        let mask = prune(p.data, sparsity)?;
        mask.apply(p.data);
        masks.insert(p.name, mask);
    }
    if masks.is_empty() {
        return Err(Error::Config(format!("component {component:?} selects no weight matrices")));
    }
    Ok(masks)
}

/// Zero masked entries of every masked tensor.
pub fn apply_masks(net: &mut Network, masks: &MaskSet) {
    for p in net.params_mut() {
        if let Some(m) = masks.get(&p.name) {
            m.apply(p.data);
        }
    }
}

/// Masked training: ordinary training with masked weights forced back to
/// zero after every update.
pub fn finetune_pruned(model: &LanguageModel, masks: &MaskSet, corpus: &Corpus, cfg: &TrainConfig) -> Result<(LanguageModel, TrainHistory)> {
    let mut m = model.clone();
    for (name, mask) in masks {
        m.masks.insert(name.clone(), mask.clone());
    }
    apply_masks(&mut m.net, &m.masks);
    train(&m, corpus, cfg)
}

/// 8-bit codes over 256 equal intervals spanning `[min_val, max_val]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizedMatrix {
    pub rows: usize,
    pub cols: usize,
    pub min_val: f64,
    pub max_val: f64,
    pub codes: Vec<u8>,
}

impl QuantizedMatrix {
    fn step(&self) -> f64 {
        (self.max_val - self.min_val) / 256.0
    }

    /// Midpoint of the interval with code `c`.
    pub fn level(&self, c: u8) -> f64 {
        self.min_val + (c as f64 + 0.5) * self.step()
    }

    pub fn dequantize_into(&self, out: &mut [f64]) {
        if self.max_val == self.min_val {
            out.fill(self.min_val);
            return;
        }
        for (o, &c) in out.iter_mut().zip(&self.codes) {
            *o = self.level(c);
        }
    }

    /// Stored bytes: one per code plus the two range endpoints as f32.
    pub fn size_bytes(&self) -> usize {
        self.codes.len() + 8
    }
}

/// Quantize a flat tensor viewed as `rows × cols`.
pub fn quantize_slice(data: &[f64], rows: usize, cols: usize) -> Result<QuantizedMatrix> {
    if data.len() != rows * cols || data.is_empty() {
        return Err(Error::shape("quantize", format!("{} values for {rows}x{cols}", data.len())));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Param("cannot quantize non-finite values".into()));
    }
    let min_val = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_val = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let codes = if max_val == min_val {
        vec![0; data.len()]
    } else {
        let step = (max_val - min_val) / 256.0;
        data.iter()
            .map(|&x| ((x - min_val) / step - 0.5).round_ties_even().clamp(0.0, 255.0) as u8)
            .collect()
    };
    Ok(QuantizedMatrix {
        rows,
        cols,
        min_val,
        max_val,
        codes,
    })
}

pub fn quantize(w: &Matrix) -> QuantizedMatrix {
    quantize_slice(w.data(), w.rows(), w.cols()).expect("matrix entries are finite")
}

pub fn dequantize(q: &QuantizedMatrix) -> Matrix {
    let mut data = vec![0.0; q.rows * q.cols];
    q.dequantize_into(&mut data);
    Matrix::new(q.rows, q.cols, data).expect("shape stored with the codes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;

    #[test]
    fn keeps_largest_half() {
        let m = prune(&[-0.5, 0.01, 0.3, -0.02], 0.5).unwrap();
        assert_eq!(m.keep, vec![true, false, true, false]);
        assert!(prune(&[1.0, 2.0], 0.0).unwrap().keep.iter().all(|k| *k));
        assert!(prune(&[1.0], 1.0).is_err());
    }

    #[test]
    fn exact_count_on_random_matrix() {
        let mut rng = Rng::new(3);
        let w = Matrix::random(&mut rng, 100, 100, 1.0);
        let m = prune(w.data(), 0.9).unwrap();
        assert_eq!(m.zeros(), 9000);
        let mut sorted: Vec<f64> = w.data().iter().map(|v| v.abs()).collect();
        sorted.sort_by(f64::total_cmp);
        let threshold = sorted[9000];
        for (v, k) in w.data().iter().zip(&m.keep) {
            assert_eq!(*k, v.abs() >= threshold);
        }
    }

    #[test]
    fn ties_pruned_in_index_order() {
        let m = prune(&[0.1, -0.1, 0.1, 0.5], 0.5).unwrap();
        assert_eq!(m.keep, vec![false, false, true, true]);
    }

    #[test]
    fn constant_matrix_quantizes_exactly() {
        let w = Matrix::new(2, 2, vec![0.7; 4]).unwrap();
        let q = quantize(&w);
        assert!(q.codes.iter().all(|c| *c == 0));
        assert_eq!(dequantize(&q), w);
    }

    #[test]
    fn unit_range_error_bound() {
        let mut rng = Rng::new(5);
        let mut w = Matrix::random(&mut rng, 30, 30, 1.0);
        w.set(0, 0, -1.0);
        w.set(0, 1, 1.0);
        let back = dequantize(&quantize(&w));
        for (a, b) in w.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.00390625 + 1e-15);
        }
    }

    #[test]
    fn extremes_get_end_codes() {
        let q = quantize_slice(&[-2.0, 0.0, 2.0], 1, 3).unwrap();
        assert_eq!(q.codes[0], 0);
        assert_eq!(q.codes[2], 255);
    }
}
