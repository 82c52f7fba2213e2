use serde::{Deserialize, Serialize};

use super::{check_len, CellKind, GruBlend, GruCell, Layer, LayerCache, Linear, LstmCell, ParamKind, ParamMut, ParamRef, RnnCell};
use super::rnn::{push_linear, push_linear_mut};
use crate::error::{Error, Result};
use crate::numkit::{Matrix, Rng};

/// Per-layer recurrent state: the emitted vector `h` and, for LSTM layers,
/// the cell vector `c` (empty otherwise).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct LayerState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

/// Softmax output layer: `y = softmax(W (A h) + b)` with optional adapter `A`.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputLayer {
    pub adapter: Option<Matrix>,
    pub w: Linear,
    pub b: Vec<f64>,
}

impl OutputLayer {
    pub fn input_dim(&self) -> usize {
        self.adapter.as_ref().map_or(self.w.cols(), Matrix::cols)
    }

    pub fn vocab_size(&self) -> usize {
        self.w.rows()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            adapter: self.adapter.as_ref().map(|m| Matrix::zeros(m.rows(), m.cols())),
            w: self.w.zeros_like(),
            b: vec![0.0; self.b.len()],
        }
    }

    pub fn mac_count(&self) -> u64 {
        self.adapter.as_ref().map_or(0, |m| m.len() as u64) + self.w.mac_count()
    }

    /// Returns `(adapted input, logits)`.
    fn logits(&self, h: &[f64], macs: &mut u64) -> (Vec<f64>, Vec<f64>) {
        let a = match &self.adapter {
            Some(m) => {
                let mut v = vec![0.0; m.rows()];
                *macs += m.matvec_acc(h, &mut v);
                v
            }
            None => h.to_vec(),
        };
        let mut z = self.b.clone();
        *macs += self.w.forward_acc(&a, &mut z);
        (a, z)
    }
}

/// Numerically stable softmax of a logit vector.
pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

/// Next-token distribution from the top layer's output.
pub fn softmax_output(layer: &OutputLayer, h: &[f64]) -> Result<Vec<f64>> {
    check_len("softmax_output", h, layer.input_dim())?;
    let (_, mut z) = layer.logits(h, &mut 0);
    softmax_in_place(&mut z);
    Ok(z)
}

/// Shape of a freshly built dense network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub cell: CellKind,
    pub vocab: usize,
    pub hidden: usize,
    pub layers: usize,
    #[serde(default = "default_true")]
    pub gru_bias: bool,
    #[serde(default)]
    pub gru_blend: GruBlend,
    #[serde(default = "default_scale")]
    pub init_scale: f64,
}

fn default_true() -> bool {
    true
}

fn default_scale() -> f64 {
    0.1
}

impl ArchConfig {
    pub fn new(cell: CellKind, vocab: usize, hidden: usize, layers: usize) -> Self {
        Self {
            cell,
            vocab,
            hidden,
            layers,
            gru_bias: true,
            gru_blend: GruBlend::Recurrent,
            init_scale: default_scale(),
        }
    }
}

/// Embedding, stacked recurrent layers and softmax output.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    /// `|V| × e` lookup table; row `w` is the input vector of token `w`.
    pub embedding: Matrix,
    pub layers: Vec<Layer>,
    pub output: OutputLayer,
}

/// Everything a step of the forward pass keeps for backpropagation.
#[derive(Clone, Debug)]
pub struct StepCache {
    id: usize,
    layers: Vec<LayerCache>,
    /// Inverted-dropout masks on the input of each layer and of the output layer.
    masks: Vec<Option<Vec<f64>>>,
    top: Vec<f64>,
    adapted: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub probs: Vec<Vec<f64>>,
    pub steps: Vec<StepCache>,
    pub final_state: Vec<LayerState>,
    pub macs: u64,
}

/// Inverted dropout applied to every inter-layer connection during training.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut Rng,
}

impl Dropout<'_> {
    fn mask(&mut self, n: usize) -> Option<Vec<f64>> {
        if self.rate <= 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - self.rate);
        Some((0..n).map(|_| if self.rng.unit() < self.rate { 0.0 } else { keep }).collect())
    }
}

fn apply_mask(v: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        v.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
    }
}

impl Network {
    /// Dense network with uniform random weights and zero biases.
    pub fn dense(cfg: &ArchConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.vocab == 0 || cfg.hidden == 0 || cfg.layers == 0 {
            return Err(Error::Config("vocab, hidden and layers must be positive".into()));
        }
        if !(cfg.init_scale.is_finite() && cfg.init_scale >= 0.0) {
            return Err(Error::Config(format!("init scale {} is invalid", cfg.init_scale)));
        }
        let (v, k, s) = (cfg.vocab, cfg.hidden, cfg.init_scale);
        let embedding = Matrix::random(rng, v, k, s);
        let layers = (0..cfg.layers)
            .map(|_| match cfg.cell {
                CellKind::Rnn => Layer::Rnn(RnnCell::dense_random(rng, k, k, s)),
                CellKind::Lstm => Layer::Lstm(LstmCell::dense_random(rng, k, k, s)),
                CellKind::Gru => {
                    let mut c = GruCell::dense_random(rng, k, k, s, cfg.gru_bias);
                    c.blend = cfg.gru_blend;
                    Layer::Gru(c)
                }
            })
            .collect();
        let output = OutputLayer {
            adapter: None,
            w: Linear::Dense(Matrix::random(rng, v, k, s)),
            b: vec![0.0; v],
        };
        let net = Self {
            embedding,
            layers,
            output,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    /// Check that the layer dimensions chain together.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network has no recurrent layers".into()));
        }
        let mut dim = self.embedding.cols();
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.input_dim() != dim {
                return Err(Error::shape(
                    "network",
                    format!("layer {l} expects input {} but receives {dim}", layer.input_dim()),
                ));
            }
            dim = layer.output_dim();
        }
        if self.output.input_dim() != dim {
            return Err(Error::shape(
                "network",
                format!("output layer expects {} but top layer emits {dim}", self.output.input_dim()),
            ));
        }
        if self.output.vocab_size() != self.vocab_size() || self.output.b.len() != self.vocab_size() {
            return Err(Error::shape("network", "output layer rows differ from vocabulary size"));
        }
        Ok(())
    }

    pub fn zero_state(&self) -> Vec<LayerState> {
        self.layers.iter().map(Layer::zero_state).collect()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embedding: Matrix::zeros(self.embedding.rows(), self.embedding.cols()),
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
            output: self.output.zeros_like(),
        }
    }

    /// Multiply-accumulates of one inference step (the embedding is a lookup).
    pub fn mac_count(&self) -> u64 {
        self.layers.iter().map(Layer::mac_count).sum::<u64>() + self.output.mac_count()
    }

    /// All parameter tensors in a fixed order.
    pub fn params(&self) -> Vec<ParamRef<'_>> {
        let mut out = vec![ParamRef::matrix("embedding".into(), &self.embedding)];
        for (l, layer) in self.layers.iter().enumerate() {
            layer.params(&format!("layer{l}"), &mut out);
        }
        if let Some(a) = &self.output.adapter {
            out.push(ParamRef::matrix("output.adapter".into(), a));
        }
        push_linear(&mut out, "output", "w", &self.output.w);
        out.push(ParamRef::new("output.b".into(), ParamKind::Bias, &self.output.b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = vec![ParamMut::new("embedding".into(), ParamKind::Matrix, self.embedding.data_mut())];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.params_mut(&format!("layer{l}"), &mut out);
        }
        if let Some(a) = &mut self.output.adapter {
            out.push(ParamMut::new("output.adapter".into(), ParamKind::Matrix, a.data_mut()));
        }
        push_linear_mut(&mut out, "output", "w", &mut self.output.w);
        out.push(ParamMut::new("output.b".into(), ParamKind::Bias, &mut self.output.b));
        out
    }

    /// `(matrix parameters, bias parameters)`.
    pub fn param_counts(&self) -> (usize, usize) {
        self.params().iter().fold((0, 0), |(m, b), p| match p.kind {
            ParamKind::Matrix => (m + p.data.len(), b),
            ParamKind::Bias => (m, b + p.data.len()),
        })
    }

    fn check_id(&self, id: usize) -> Result<()> {
        if id >= self.vocab_size() {
            return Err(Error::TokenOutOfRange {
                id,
                vocab: self.vocab_size(),
            });
        }
        Ok(())
    }

    /// One inference step: advances `state` and returns the next-token distribution.
    pub fn step(&self, id: usize, state: &mut [LayerState], macs: &mut u64) -> Result<Vec<f64>> {
        self.check_id(id)?;
        let mut x = self.embedding.row(id).to_vec();
        for (layer, s) in self.layers.iter().zip(state.iter_mut()) {
            let (next, _) = layer.step(&x, s, macs)?;
            x.clone_from(&next.h);
            *s = next;
        }
        let (_, mut z) = self.output.logits(&x, macs);
        softmax_in_place(&mut z);
        Ok(z)
    }

    /// Run the network over `ids` from `init` (zero state if `None`), keeping
    /// every intermediate needed by [`Network::backward_sequence`].
    pub fn forward_sequence(
        &self,
        ids: &[usize],
        init: Option<&[LayerState]>,
        mut dropout: Option<Dropout<'_>>,
    ) -> Result<ForwardPass> {
        for &id in ids {
            self.check_id(id)?;
        }
        let mut state = match init {
            Some(s) if s.len() == self.layers.len() => s.to_vec(),
            Some(s) => {
                return Err(Error::shape(
                    "forward_sequence",
                    format!("{} initial states for {} layers", s.len(), self.layers.len()),
                ))
            }
            None => self.zero_state(),
        };
        let mut macs = 0u64;
        let mut probs = Vec::with_capacity(ids.len());
        let mut steps = Vec::with_capacity(ids.len());
        for &id in ids {
            let mut x = self.embedding.row(id).to_vec();
            let mut masks = Vec::with_capacity(self.layers.len() + 1);
            let mut caches = Vec::with_capacity(self.layers.len());
            for (layer, s) in self.layers.iter().zip(state.iter_mut()) {
                let mask = dropout.as_mut().and_then(|d| d.mask(x.len()));
                apply_mask(&mut x, &mask);
                masks.push(mask);
                let (next, cache) = layer.step(&x, s, &mut macs)?;
                x.clone_from(&next.h);
                *s = next;
                caches.push(cache);
            }
            let mask = dropout.as_mut().and_then(|d| d.mask(x.len()));
            apply_mask(&mut x, &mask);
            masks.push(mask);
            let (adapted, mut z) = self.output.logits(&x, &mut macs);
            softmax_in_place(&mut z);
            probs.push(z);
            steps.push(StepCache {
                id,
                layers: caches,
                masks,
                top: x,
                adapted,
            });
        }
        Ok(ForwardPass {
            probs,
            steps,
            final_state: state,
            macs,
        })
    }

    /// Mean cross-entropy (nats) of `pass` against `targets`, accumulating its
    /// gradient into `grad` (a structure from [`Network::zeros_like`]).
    pub fn backward_sequence(&self, pass: &ForwardPass, targets: &[usize], grad: &mut Network) -> Result<f64> {
        if pass.steps.is_empty() {
            return Ok(0.0);
        }
        let scale = 1.0 / pass.steps.len() as f64;
        Ok(self.backward_scaled(pass, targets, scale, grad)? * scale)
    }

    /// Like [`Network::backward_sequence`] with every step's loss weighted by
    /// `scale`; returns the unweighted summed cross-entropy.
    pub fn backward_scaled(&self, pass: &ForwardPass, targets: &[usize], scale: f64, grad: &mut Network) -> Result<f64> {
        if targets.len() != pass.steps.len() {
            return Err(Error::shape(
                "backward_sequence",
                format!("{} targets for {} steps", targets.len(), pass.steps.len()),
            ));
        }
        for &t in targets {
            self.check_id(t)?;
        }
        let mut loss = 0.0;
        let mut carry = self.zero_state();
        for (t, step) in pass.steps.iter().enumerate().rev() {
            let p = &pass.probs[t];
            loss -= p[targets[t]].max(f64::MIN_POSITIVE).ln();
            let mut dz: Vec<f64> = p.iter().map(|v| v * scale).collect();
            dz[targets[t]] -= scale;
            grad.output.b.iter_mut().zip(&dz).for_each(|(g, d)| *g += d);
            let mut da = vec![0.0; step.adapted.len()];
            self.output.w.backward_acc(&step.adapted, &dz, &mut da, &mut grad.output.w);
            let mut dx = match (&self.output.adapter, &mut grad.output.adapter) {
                (Some(a), Some(ga)) => {
                    ga.add_outer(&da, &step.top);
                    let mut v = vec![0.0; a.cols()];
                    a.matvec_t_acc(&da, &mut v);
                    v
                }
                _ => da,
            };
            apply_mask(&mut dx, &step.masks[self.layers.len()]);
            for l in (0..self.layers.len()).rev() {
                let mut d = std::mem::take(&mut carry[l]);
                d.h.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
                let (dxl, dprev) = self.layers[l].backward(&step.layers[l], &d, &mut grad.layers[l]);
                carry[l] = dprev;
                dx = dxl;
                apply_mask(&mut dx, &step.masks[l]);
            }
            grad.embedding
                .row_mut(step.id)
                .iter_mut()
                .zip(&dx)
                .for_each(|(g, d)| *g += d);
        }
        Ok(loss)
    }

    /// Add `other`'s parameters (same structure) scaled by `s` into `self`.
    pub fn axpy(&mut self, s: f64, other: &Network) {
        for (a, b) in self.params_mut().into_iter().zip(other.params()) {
            a.data.iter_mut().zip(b.data).for_each(|(x, y)| *x += s * y);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: CellKind, seed: u64) -> Network {
        let mut rng = Rng::new(seed);
        let mut cfg = ArchConfig::new(kind, 7, 4, 2);
        cfg.init_scale = 0.5;
        Network::dense(&cfg, &mut rng).unwrap()
    }

    #[test]
    fn softmax_known_values() {
        let layer = OutputLayer {
            adapter: None,
            w: Linear::Dense(Matrix::zeros(3, 1)),
            b: vec![1.0, 2.0, 3.0],
        };
        let p = softmax_output(&layer, &[0.0]).unwrap();
        let expect = [0.09003057, 0.24472847, 0.66524096];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-8);
        }
        let shifted = OutputLayer {
            b: vec![101.0, 102.0, 103.0],
            ..layer
        };
        let q = softmax_output(&shifted, &[0.0]).unwrap();
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_model_predicts_uniform() {
        let net = tiny(CellKind::Lstm, 3).zeros_like();
        let pass = net.forward_sequence(&[2], None, None).unwrap();
        for p in &pass.probs[0] {
            assert!((p - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn probabilities_normalized() {
        for kind in [CellKind::Rnn, CellKind::Lstm, CellKind::Gru] {
            let net = tiny(kind, 5);
            let pass = net.forward_sequence(&[0, 3, 6, 1, 1], None, None).unwrap();
            for p in &pass.probs {
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(p.iter().all(|v| *v > 0.0));
            }
        }
    }

    #[test]
    fn stacked_forward_is_composition() {
        let net = tiny(CellKind::Lstm, 9);
        let ids = [1, 4, 2];
        let pass = net.forward_sequence(&ids, None, None).unwrap();
        let (Layer::Lstm(l0), Layer::Lstm(l1)) = (&net.layers[0], &net.layers[1]) else {
            unreachable!()
        };
        let (mut m0, mut c0, mut m1, mut c1) = (vec![0.0; 4], vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]);
        for (t, &id) in ids.iter().enumerate() {
            let (a, b, _) = l0.step(net.embedding.row(id), &m0, &c0, &mut 0).unwrap();
            (m0, c0) = (a, b);
            let (a, b, _) = l1.step(&m0, &m1, &c1, &mut 0).unwrap();
            (m1, c1) = (a, b);
            let p = softmax_output(&net.output, &m1).unwrap();
            assert_eq!(p, pass.probs[t]);
        }
    }

    #[test]
    fn out_of_range_id() {
        let net = tiny(CellKind::Rnn, 1);
        assert!(matches!(
            net.forward_sequence(&[7], None, None),
            Err(Error::TokenOutOfRange { id: 7, vocab: 7 })
        ));
    }

    #[test]
    fn empty_sequence_gives_zero_gradient() {
        let net = tiny(CellKind::Gru, 2);
        let pass = net.forward_sequence(&[], None, None).unwrap();
        let mut grad = net.zeros_like();
        assert_eq!(net.backward_sequence(&pass, &[], &mut grad).unwrap(), 0.0);
        assert!(grad.params().iter().all(|p| p.data.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn output_bias_gradient_identity() {
        let net = tiny(CellKind::Lstm, 4);
        let ids = [0, 1, 2, 3, 4];
        let targets = [1, 2, 3, 4, 5];
        let pass = net.forward_sequence(&ids, None, None).unwrap();
        let mut grad = net.zeros_like();
        net.backward_sequence(&pass, &targets, &mut grad).unwrap();
        for v in 0..7 {
            let expect: f64 = (0..5)
                .map(|t| pass.probs[t][v] - if targets[t] == v { 1.0 } else { 0.0 })
                .sum::<f64>()
                / 5.0;
            assert!((grad.output.b[v] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn step_matches_forward() {
        let net = tiny(CellKind::Gru, 8);
        let ids = [3, 3, 0, 6];
        let pass = net.forward_sequence(&ids, None, None).unwrap();
        let mut state = net.zero_state();
        let mut macs = 0;
        for (t, &id) in ids.iter().enumerate() {
            assert_eq!(net.step(id, &mut state, &mut macs).unwrap(), pass.probs[t]);
        }
        assert_eq!(macs, pass.macs);
        assert_eq!(macs, net.mac_count() * ids.len() as u64);
        assert_eq!(state, pass.final_state);
    }
}
