use log::info;
use serde::{Deserialize, Serialize};

use super::eval::evaluate;
use super::{Corpus, LanguageModel};
use crate::cells::{Dropout, LayerState, Network};
use crate::error::{Error, Result};
use crate::numkit::Rng;
use crate::sparse::apply_masks;

/// Adam stage settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamStage {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamStage {
    fn default() -> Self {
        Self {
            epochs: 6,
            lr: 0.003,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Plain gradient descent stage with a per-epoch multiplicative decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdStage {
    pub epochs: usize,
    pub lr: f64,
    pub decay: f64,
}

impl Default for SgdStage {
    fn default() -> Self {
        Self {
            epochs: 4,
            lr: 0.5,
            decay: 0.7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Number of parallel token streams per update.
    pub batch_size: usize,
    /// BPTT window length.
    pub unroll: usize,
    pub stage1: AdamStage,
    pub stage2: SgdStage,
    /// Inverted-dropout rate on every inter-layer connection.
    pub dropout: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Epochs without validation improvement before a stage ends.
    pub patience: usize,
    pub seed: u64,
    /// Stop each epoch after this many updates.
    pub max_batches: Option<usize>,
    /// Segments used for validation perplexity.
    pub eval_segments: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 20,
            unroll: 35,
            stage1: AdamStage::default(),
            stage2: SgdStage::default(),
            dropout: 0.0,
            clip_norm: 5.0,
            patience: 2,
            seed: 1,
            max_batches: None,
            eval_segments: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.batch_size == 0 || self.unroll == 0 {
            return bad("batch_size and unroll must be positive");
        }
        if !(self.stage1.lr > 0.0 && self.stage2.lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.stage2.decay > 0.0 && self.stage2.decay <= 1.0) {
            return bad("stage2 decay must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.stage1.beta1) || !(0.0..1.0).contains(&self.stage1.beta2) || self.stage1.eps <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and eps be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if self.patience == 0 || self.eval_segments == 0 {
            return bad("patience and eval_segments must be positive");
        }
        if self.max_batches == Some(0) {
            return bad("max_batches must be positive when set");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1 = Adam, 2 = gradient descent.
    pub stage: u8,
    pub epoch: usize,
    pub lr: f64,
    pub train_ppl: f64,
    pub valid_ppl: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub initial_valid_ppl: f64,
    pub epochs: Vec<EpochRecord>,
    /// Index in `epochs` of the first gradient-descent epoch.
    pub stage_switch: usize,
    pub best_valid_ppl: f64,
    /// Epoch of the returned checkpoint (0 = the starting model).
    pub best_epoch: usize,
    pub stopped_early: [bool; 2],
}

enum Optimizer {
    Adam {
        cfg: AdamStage,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
        t: i32,
    },
    Sgd {
        lr: f64,
    },
}

impl Optimizer {
    fn adam(cfg: &AdamStage, net: &Network) -> Self {
        let zeros: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.data.len()]).collect();
        Optimizer::Adam {
            cfg: cfg.clone(),
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn lr(&self) -> f64 {
        match self {
            Optimizer::Adam { cfg, .. } => cfg.lr,
            Optimizer::Sgd { lr } => *lr,
        }
    }

    fn update(&mut self, net: &mut Network, grad: &Network) {
        match self {
            Optimizer::Adam { cfg, m, v, t } => {
                *t += 1;
                let c1 = 1.0 - cfg.beta1.powi(*t);
                let c2 = 1.0 - cfg.beta2.powi(*t);
                let step = cfg.lr * c2.sqrt() / c1;
                for (((p, g), m), v) in net.params_mut().into_iter().zip(grad.params()).zip(m).zip(v) {
                    for i in 0..p.data.len() {
                        let gi = g.data[i];
                        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                        p.data[i] -= step * m[i] / (v[i].sqrt() + cfg.eps);
                    }
                }
            }
            Optimizer::Sgd { lr } => net.axpy(-*lr, grad),
        }
    }
}

fn zero_grad(grad: &mut Network) {
    for p in grad.params_mut() {
        p.data.fill(0.0);
    }
}

fn clip(grad: &mut Network, max_norm: f64) -> f64 {
    let norm = grad
        .params()
        .iter()
        .flat_map(|p| p.data.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for p in grad.params_mut() {
            p.data.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

fn params_finite(net: &Network) -> bool {
    net.params().iter().all(|p| p.data.iter().all(|v| v.is_finite()))
}

struct EpochCtx<'a> {
    cfg: &'a TrainConfig,
    streams: Vec<&'a [usize]>,
    model: &'a LanguageModel,
}

/// One pass over the batched training streams. Returns the mean loss.
fn run_epoch(ctx: &EpochCtx<'_>, net: &mut Network, opt: &mut Optimizer, rng: &mut Rng, grad: &mut Network) -> std::result::Result<f64, String> {
    let cfg = ctx.cfg;
    let n = ctx.streams[0].len();
    let mut states: Vec<Vec<LayerState>> = vec![net.zero_state(); ctx.streams.len()];
    let mut total = 0.0;
    let mut tokens = 0usize;
    let mut batches = 0usize;
    let mut i = 0;
    while i + 1 < n {
        let len = cfg.unroll.min(n - 1 - i);
        zero_grad(grad);
        let scale = 1.0 / (ctx.streams.len() * len) as f64;
        let mut loss = 0.0;
        for (b, s) in ctx.streams.iter().enumerate() {
            let dropout = if cfg.dropout > 0.0 {
                Some(Dropout {
                    rate: cfg.dropout,
                    rng: &mut *rng,
                })
            } else {
                None
            };
            let pass = net
                .forward_sequence(&s[i..i + len], Some(&states[b]), dropout)
                .map_err(|e| e.to_string())?;
            loss += net
                .backward_scaled(&pass, &s[i + 1..i + 1 + len], scale, grad)
                .map_err(|e| e.to_string())?;
            states[b] = pass.final_state;
        }
        if !loss.is_finite() {
            return Err(format!("non-finite training loss at batch {batches}"));
        }
        clip(grad, cfg.clip_norm);
        opt.update(net, grad);
        apply_masks(net, &ctx.model.masks);
        if !params_finite(net) {
            return Err(format!("non-finite weights after batch {batches}"));
        }
        total += loss;
        tokens += ctx.streams.len() * len;
        batches += 1;
        i += len;
        if cfg.max_batches.is_some_and(|m| batches >= m) {
            break;
        }
    }
    Ok(total / tokens as f64)
}

/// Two-stage training: Adam, then plain gradient descent from the best
/// Adam checkpoint. Each stage stops once validation perplexity has not
/// improved for `patience` epochs. The returned model is the best
/// checkpoint seen, the starting model included.
///
/// Masks in `model.masks` are re-applied after every update.
pub fn train(model: &LanguageModel, corpus: &Corpus, cfg: &TrainConfig) -> Result<(LanguageModel, TrainHistory)> {
    cfg.validate()?;
    if model.is_quantized() {
        return Err(Error::Config("quantized models are storage-only and cannot be trained".into()));
    }
    if corpus.vocab.len() != model.net.vocab_size() {
        return Err(Error::Config(format!(
            "corpus vocabulary has {} tokens but the model {}",
            corpus.vocab.len(),
            model.net.vocab_size()
        )));
    }
    model.check_masks()?;
    let n = corpus.train.len() / cfg.batch_size;
    if n < 2 {
        return Err(Error::Empty(format!(
            "training split of {} tokens is too short for {} streams",
            corpus.train.len(),
            cfg.batch_size
        )));
    }
    let ctx = EpochCtx {
        cfg,
        streams: (0..cfg.batch_size).map(|b| &corpus.train[b * n..(b + 1) * n]).collect(),
        model,
    };
    let mut net = model.net.clone();
    apply_masks(&mut net, &model.masks);
    let mut grad = net.zeros_like();
    let mut rng = Rng::new(cfg.seed).fork(1);

    let initial = evaluate(&net, &corpus.valid, cfg.eval_segments)?.perplexity;
    let mut history = TrainHistory {
        initial_valid_ppl: initial,
        best_valid_ppl: initial,
        ..Default::default()
    };
    let mut best = net.clone();
    let mut epoch = 0;

    for stage in [1u8, 2] {
        let (epochs, mut opt) = match stage {
            1 => (cfg.stage1.epochs, Optimizer::adam(&cfg.stage1, &net)),
            _ => {
                history.stage_switch = history.epochs.len();
                net = best.clone();
                (cfg.stage2.epochs, Optimizer::Sgd { lr: cfg.stage2.lr })
            }
        };
        let mut bad = 0;
        for _ in 0..epochs {
            epoch += 1;
            let lr = opt.lr();
            let loss = run_epoch(&ctx, &mut net, &mut opt, &mut rng, &mut grad).map_err(|msg| Error::Divergence {
                epoch,
                stage: stage as usize,
                msg,
                checkpoint: Some(Box::new(LanguageModel {
                    net: best.clone(),
                    ..model.clone()
                })),
            })?;
            let valid = evaluate(&net, &corpus.valid, cfg.eval_segments)?.perplexity;
            info!("stage {stage} epoch {epoch}: lr {lr:.4} train ppl {:.3} valid ppl {valid:.3}", loss.exp());
            history.epochs.push(EpochRecord {
                stage,
                epoch,
                lr,
                train_ppl: loss.exp(),
                valid_ppl: valid,
            });
            if valid < history.best_valid_ppl {
                history.best_valid_ppl = valid;
                history.best_epoch = epoch;
                best = net.clone();
                bad = 0;
            } else {
                bad += 1;
                if bad >= cfg.patience {
                    history.stopped_early[stage as usize - 1] = true;
                    break;
                }
            }
            if let Optimizer::Sgd { lr } = &mut opt {
                *lr *= cfg.stage2.decay;
            }
        }
    }
    if cfg.stage2.epochs == 0 {
        history.stage_switch = history.epochs.len();
    }
    Ok((
        LanguageModel {
            net: best,
            ..model.clone()
        },
        history,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{ArchConfig, CellKind};
    use crate::langmodel::Vocabulary;

    fn toy_corpus() -> Corpus {
        let line = "the cat sat on the mat\nthe dog sat on the rug\n";
        let train = line.repeat(40);
        let valid = line.repeat(4);
        Corpus::from_texts(&train, &valid, &valid, None, None).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            unroll: 8,
            stage1: AdamStage {
                epochs: 3,
                lr: 0.02,
                ..Default::default()
            },
            stage2: SgdStage {
                epochs: 2,
                lr: 0.2,
                decay: 0.5,
            },
            patience: 5,
            ..Default::default()
        }
    }

    fn model(vocab: &Vocabulary, kind: CellKind) -> LanguageModel {
        let cfg = ArchConfig::new(kind, vocab.len(), 8, 1);
        LanguageModel::dense(vocab.clone(), &cfg, &mut Rng::new(3)).unwrap()
    }

    #[test]
    fn same_seed_same_history() {
        let corpus = toy_corpus();
        let m = model(&corpus.vocab, CellKind::Lstm);
        let cfg = TrainConfig { dropout: 0.2, ..small_cfg() };
        let (a, ha) = train(&m, &corpus, &cfg).unwrap();
        let (b, hb) = train(&m, &corpus, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
    }

    #[test]
    fn validation_perplexity_drops() {
        let corpus = toy_corpus();
        for kind in [CellKind::Rnn, CellKind::Lstm, CellKind::Gru] {
            let m = model(&corpus.vocab, kind);
            let (trained, h) = train(&m, &corpus, &small_cfg()).unwrap();
            assert!(h.best_valid_ppl < 0.6 * h.initial_valid_ppl, "{kind}: {h:?}");
            let ppl = trained.perplexity(&corpus.valid).unwrap();
            assert!((ppl - h.best_valid_ppl).abs() < 1e-9);
            assert_eq!(h.stage_switch, h.epochs.iter().position(|e| e.stage == 2).unwrap());
        }
    }

    #[test]
    fn returned_checkpoint_is_best_seen() {
        let corpus = toy_corpus();
        let m = model(&corpus.vocab, CellKind::Gru);
        let mut cfg = small_cfg();
        cfg.stage2.lr = 50.0;
        cfg.patience = 1;
        match train(&m, &corpus, &cfg) {
            Ok((_, h)) => {
                let min = h.epochs.iter().map(|e| e.valid_ppl).fold(h.initial_valid_ppl, f64::min);
                assert_eq!(h.best_valid_ppl, min);
            }
            Err(Error::Divergence { checkpoint, .. }) => assert!(checkpoint.is_some()),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn sgd_lr_decays_per_epoch() {
        let corpus = toy_corpus();
        let m = model(&corpus.vocab, CellKind::Rnn);
        let mut cfg = small_cfg();
        cfg.patience = 10;
        let (_, h) = train(&m, &corpus, &cfg).unwrap();
        let sgd: Vec<f64> = h.epochs.iter().filter(|e| e.stage == 2).map(|e| e.lr).collect();
        assert_eq!(sgd, vec![0.2, 0.1]);
    }

    #[test]
    fn masks_survive_training() {
        let corpus = toy_corpus();
        let mut m = model(&corpus.vocab, CellKind::Lstm);
        m.masks = crate::sparse::prune_component(&mut m.net, "output", 0.5).unwrap();
        let (t, _) = train(&m, &corpus, &small_cfg()).unwrap();
        let w = t.net.params().into_iter().find(|p| p.name == "output.w").unwrap();
        let mask = &m.masks["output.w"];
        for (v, k) in w.data.iter().zip(&mask.keep) {
            if !k {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn bad_configs_rejected() {
        let corpus = toy_corpus();
        let m = model(&corpus.vocab, CellKind::Rnn);
        let cfg = TrainConfig { batch_size: 0, ..small_cfg() };
        assert!(matches!(train(&m, &corpus, &cfg), Err(Error::Config(_))));
        let other = Vocabulary::build("x y", None, 1).unwrap();
        let wrong = model(&other, CellKind::Rnn);
        assert!(train(&wrong, &corpus, &small_cfg()).is_err());
    }
}
