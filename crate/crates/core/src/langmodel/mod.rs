//! Vocabulary and corpus handling, the two-stage training loop, and
//! perplexity evaluation.

mod eval;
mod train;
mod vocab;

pub use eval::{evaluate, perplexity, word_accuracy, EvalResult};
pub use train::{train, AdamStage, EpochRecord, SgdStage, TrainConfig, TrainHistory};
pub use vocab::{Corpus, Split, Vocabulary, EOS, UNK};


use std::collections::BTreeMap;

use crate::cells::{ArchConfig, Network};
use crate::error::{Error, Result};
use crate::numkit::Rng;
use crate::sparse::{MaskSet, QuantizedMatrix};

/// A network together with its vocabulary, pruning masks and quantization
/// state.
#[derive(Clone, Debug, PartialEq)]
pub struct LanguageModel {
    pub vocab: Vocabulary,
    pub net: Network,
    /// Pruning masks by parameter name.
    pub masks: MaskSet,
    /// Quantized tensors by parameter name. The network holds their
    /// dequantized values.
    pub quant: BTreeMap<String, QuantizedMatrix>,
}

impl LanguageModel {
    pub fn new(vocab: Vocabulary, net: Network) -> Result<Self> {
        if vocab.len() != net.vocab_size() {
            return Err(Error::Config(format!(
                "vocabulary of {} tokens for a network over {}",
                vocab.len(),
                net.vocab_size()
            )));
        }
        net.validate()?;
        Ok(Self {
            vocab,
            net,
            masks: MaskSet::new(),
            quant: BTreeMap::new(),
        })
    }

    /// Fresh dense model; `cfg.vocab` is overridden by the vocabulary size.
    pub fn dense(vocab: Vocabulary, cfg: &ArchConfig, rng: &mut Rng) -> Result<Self> {
        let cfg = ArchConfig {
            vocab: vocab.len(),
            ..cfg.clone()
        };
        Self::new(vocab, Network::dense(&cfg, rng)?)
    }

    pub fn is_quantized(&self) -> bool {
        !self.quant.is_empty()
    }

    pub fn perplexity(&self, stream: &[usize]) -> Result<f64> {
        perplexity(&self.net, stream)
    }

    /// Every mask must name an existing tensor of the same size.
    pub fn check_masks(&self) -> Result<()> {
        let params = self.net.params();
        for (name, mask) in &self.masks {
            match params.iter().find(|p| &p.name == name) {
                Some(p) if p.data.len() == mask.numel() => {}
                Some(p) => {
                    return Err(Error::Config(format!(
                        "mask for {name} has {} entries, tensor has {}",
                        mask.numel(),
                        p.data.len()
                    )))
                }
                None => return Err(Error::Config(format!("mask for unknown tensor {name}"))),
            }
        }
        Ok(())
    }
}
