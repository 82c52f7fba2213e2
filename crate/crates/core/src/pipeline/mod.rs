//! Compression pipeline: recurrent layers first, then the embedding and
//! output layers, then optional pruning and quantization. Also parameter
//! accounting and the model container.

mod container;
mod stats;

pub use container::{blob_index, from_bytes, load_model, save_model, to_bytes, BlobEntry, BlobKind, MAGIC, VERSION};
pub use stats::{dense_breakdown, param_count_dense, ComponentStats, DenseBreakdown, ModelStats};

use std::collections::BTreeMap;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::cells::ParamKind;
use crate::error::{Error, Result};
use crate::langmodel::{train, Corpus, LanguageModel, TrainConfig, TrainHistory};
use crate::lowrank::{lr_cells, lr_io, FactorInit};
use crate::numkit::Rng;
use crate::sparse::{component_matches, prune_component, quantize_slice, PruneMask};
use crate::tensortrain::{tt_cells, tt_output, TtSpec};

/// One transformation of the pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum StepOp {
    /// Low-rank factorization of every recurrent layer.
    LrCells {
        rank: usize,
        #[serde(default)]
        init: FactorInit,
    },
    /// Low-rank factorization of the embedding and output layers.
    LrIo {
        rank: usize,
        #[serde(default)]
        init: FactorInit,
    },
    TtCells {
        #[serde(flatten)]
        tt: TtSpec,
        #[serde(default)]
        init: FactorInit,
    },
    TtOutput {
        #[serde(flatten)]
        tt: TtSpec,
        #[serde(default)]
        init: FactorInit,
    },
    /// Magnitude pruning, sparsity per component name.
    Prune { components: BTreeMap<String, f64> },
    /// 8-bit quantization of the weight matrices of each component.
    Quantize { components: Vec<String> },
}

impl StepOp {
    pub fn name(&self) -> &'static str {
        match self {
            StepOp::LrCells { .. } => "lr_cells",
            StepOp::LrIo { .. } => "lr_io",
            StepOp::TtCells { .. } => "tt_cells",
            StepOp::TtOutput { .. } => "tt_output",
            StepOp::Prune { .. } => "prune",
            StepOp::Quantize { .. } => "quantize",
        }
    }

    fn is_factorization(&self) -> bool {
        !matches!(self, StepOp::Prune { .. } | StepOp::Quantize { .. })
    }

    /// Components a factorization step rewrites.
    fn claims(&self) -> &'static [&'static str] {
        match self {
            StepOp::LrCells { .. } | StepOp::TtCells { .. } => &["cells"],
            StepOp::LrIo { .. } => &["embedding", "output"],
            StepOp::TtOutput { .. } => &["output"],
            _ => &[],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    #[serde(flatten)]
    pub op: StepOp,
    /// Training run after the step; needs a corpus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finetune: Option<TrainConfig>,
}

/// Ordered compression steps, read from TOML:
///
/// ```toml
/// seed = 7
/// [[step]]
/// op = "lr_cells"
/// rank = 128
/// init = { kind = "svd" }
/// [[step]]
/// op = "prune"
/// components = { output = 0.9 }
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompressionSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, rename = "step")]
    pub steps: Vec<Step>,
}

const COMPONENTS: [&str; 4] = ["all", "cells", "embedding", "output"];

fn valid_component(c: &str) -> bool {
    COMPONENTS.contains(&c) || c.strip_prefix("layer").is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}

impl CompressionSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(format!("compression spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("compression spec: {e}")))
    }

    /// Factorizations come before pruning, pruning before quantization, and
    /// each of cells, embedding and output is factored at most once.
    pub fn validate(&self) -> Result<()> {
        let mut claimed: BTreeMap<&str, &str> = BTreeMap::new();
        let mut seen_prune = false;
        let mut seen_quant = false;
        for (i, s) in self.steps.iter().enumerate() {
            let bad = |msg: String| Err(Error::Config(format!("step {i} ({}): {msg}", s.op.name())));
            if s.op.is_factorization() {
                if seen_prune || seen_quant {
                    return bad("factorization steps must precede pruning and quantization".into());
                }
                for c in s.op.claims() {
                    if let Some(prev) = claimed.insert(c, s.op.name()) {
                        return bad(format!("{c} already factored by {prev}"));
                    }
                }
            }
            match &s.op {
                StepOp::LrCells { rank, init } | StepOp::LrIo { rank, init } => {
                    if *rank == 0 {
                        return bad("rank must be positive".into());
                    }
                    check_init(init).or_else(|e| bad(e))?;
                }
                StepOp::TtCells { tt, init } | StepOp::TtOutput { tt, init } => {
                    if tt.d < 2 {
                        return bad("TT format needs at least two cores".into());
                    }
                    if tt.ranks.is_empty() || tt.ranks.contains(&0) {
                        return bad("TT ranks must be positive".into());
                    }
                    check_init(init).or_else(|e| bad(e))?;
                }
                StepOp::Prune { components } => {
                    if seen_quant {
                        return bad("pruning must precede quantization".into());
                    }
                    if components.is_empty() {
                        return bad("no components given".into());
                    }
                    for (c, s) in components {
                        if !valid_component(c) {
                            return bad(format!("unknown component {c:?}"));
                        }
                        if !(0.0..1.0).contains(s) {
                            return bad(format!("sparsity {s} outside [0, 1)"));
                        }
                    }
                    seen_prune = true;
                }
                StepOp::Quantize { components } => {
                    if seen_quant {
                        return bad("quantization may appear only once".into());
                    }
                    if components.is_empty() {
                        return bad("no components given".into());
                    }
                    if let Some(c) = components.iter().find(|c| !valid_component(c)) {
                        return bad(format!("unknown component {c:?}"));
                    }
                    if s.finetune.is_some() {
                        return bad("quantized models cannot be fine-tuned".into());
                    }
                    seen_quant = true;
                }
            }
            if let Some(cfg) = &s.finetune {
                cfg.validate().or_else(|e| bad(e.to_string()))?;
            }
        }
        Ok(())
    }

    fn needs_corpus(&self) -> bool {
        self.steps.iter().any(|s| s.finetune.is_some())
    }
}

fn check_init(init: &FactorInit) -> std::result::Result<(), String> {
    match init {
        FactorInit::Random { scale } if !(scale.is_finite() && *scale >= 0.0) => Err(format!("init scale {scale} is invalid")),
        _ => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub index: usize,
    pub op: String,
    pub stats: ModelStats,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finetune: Option<TrainHistory>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub before: ModelStats,
    pub after: ModelStats,
    pub steps: Vec<StepReport>,
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub model: LanguageModel,
    pub report: PipelineReport,
}

/// Quantize every matrix of the selected components. Masked entries stay
/// zero after dequantization.
fn quantize_model(model: &mut LanguageModel, components: &[String]) -> Result<()> {
    let mut quant = BTreeMap::new();
    for p in model.net.params() {
        if p.kind == ParamKind::Matrix && components.iter().any(|c| component_matches(c, &p.name)) {
            if model.quant.contains_key(&p.name) {
                return Err(Error::Config(format!("{} is already quantized", p.name)));
            }
            quant.insert(p.name.clone(), quantize_slice(p.data, p.shape.0, p.shape.1)?);
        }
    }
    if quant.is_empty() {
        return Err(Error::Config(format!("components {components:?} select no weight matrices")));
    }
    for p in model.net.params_mut() {
        if let Some(q) = quant.get(&p.name) {
            q.dequantize_into(p.data);
            if let Some(m) = model.masks.get(&p.name) {
                m.apply(p.data);
            }
        }
    }
    model.quant.extend(quant);
    Ok(())
}

fn merge_mask(old: Option<&PruneMask>, new: PruneMask) -> PruneMask {
    match old {
        Some(o) => PruneMask {
            keep: o.keep.iter().zip(&new.keep).map(|(a, b)| *a && *b).collect(),
            target_sparsity: o.target_sparsity.max(new.target_sparsity),
        },
        None => new,
    }
}

fn apply_step(model: &mut LanguageModel, op: &StepOp, rng: &mut Rng) -> Result<Vec<String>> {
    if op.is_factorization() && (!model.masks.is_empty() || model.is_quantized()) {
        return Err(Error::Config("cannot factor a pruned or quantized model".into()));
    }
    let (net, warnings) = match op {
        StepOp::LrCells { rank, init } => {
            let o = lr_cells(&model.net, *rank, *init, rng)?;
            (o.network, o.warnings)
        }
        StepOp::LrIo { rank, init } => {
            let o = lr_io(&model.net, *rank, *init, rng)?;
            (o.network, o.warnings)
        }
        StepOp::TtCells { tt, init } => {
            let o = tt_cells(&model.net, tt, *init, rng)?;
            (o.network, o.warnings)
        }
        StepOp::TtOutput { tt, init } => {
            let o = tt_output(&model.net, tt, *init, rng)?;
            (o.network, o.warnings)
        }
        StepOp::Prune { components } => {
            if model.is_quantized() {
                return Err(Error::Config("cannot prune a quantized model".into()));
            }
            for (c, s) in components {
                for (name, mask) in prune_component(&mut model.net, c, *s)? {
                    let merged = merge_mask(model.masks.get(&name), mask);
                    model.masks.insert(name, merged);
                }
            }
            crate::sparse::apply_masks(&mut model.net, &model.masks);
            return Ok(Vec::new());
        }
        StepOp::Quantize { components } => {
            quantize_model(model, components)?;
            return Ok(Vec::new());
        }
    };
    model.net = net;
    Ok(warnings)
}

/// Apply `spec` to `model` step by step, fine-tuning where requested.
///
/// Statistics are recomputed after every step. On failure the error
/// carries the report of the completed steps.
pub fn run_pipeline(model: &LanguageModel, spec: &CompressionSpec, corpus: Option<&Corpus>) -> Result<PipelineOutcome> {
    spec.validate()?;
    if spec.needs_corpus() && corpus.is_none() {
        return Err(Error::Config("fine-tuning steps need a corpus".into()));
    }
    let before = ModelStats::of(model);
    let mut report = PipelineReport {
        after: before.clone(),
        before,
        steps: Vec::new(),
    };
    let mut current = model.clone();
    let root = Rng::new(spec.seed);
    for (i, step) in spec.steps.iter().enumerate() {
        let mut rng = root.fork(i as u64);
        let result = (|| {
            let warnings = apply_step(&mut current, &step.op, &mut rng)?;
            let mut history = None;
            if let (Some(cfg), Some(corpus)) = (&step.finetune, corpus) {
                let (tuned, h) = train(&current, corpus, cfg)?;
                current = tuned;
                history = Some(h);
            }
            Ok::<_, Error>((warnings, history))
        })();
        match result {
            Ok((warnings, finetune)) => {
                let stats = ModelStats::of(&current);
                info!(
                    "step {i} {}: {} params, {} bytes, {} MACs",
                    step.op.name(),
                    stats.total_params,
                    stats.stored_bytes,
                    stats.macs
                );
                report.after = stats.clone();
                report.steps.push(StepReport {
                    index: i,
                    op: step.op.name().to_string(),
                    stats,
                    warnings,
                    finetune,
                });
            }
            Err(e) => {
                return Err(Error::Pipeline {
                    step: i,
                    op: step.op.name().to_string(),
                    source: Box::new(e),
                    report: Box::new(report),
                })
            }
        }
    }
    Ok(PipelineOutcome { model: current, report })
}
