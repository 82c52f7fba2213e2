//! Inference latency harness and multiply-accumulate accounting.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cells::{Family, Network};
use crate::error::{Error, Result};
use crate::langmodel::LanguageModel;
use crate::numkit::Rng;
use crate::pipeline::ModelStats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub warmup: usize,
    pub iters: usize,
    /// Tokens per timed window.
    pub seq_len: usize,
    /// Seed of the random input window.
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup: 100,
            iters: 1000,
            seq_len: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model_id: String,
    pub warmup_iters: usize,
    pub measured_iters: usize,
    pub seq_len: usize,
    /// Latency of one step, in nanoseconds.
    pub mean_ns: f64,
    pub stddev_ns: f64,
    pub min_ns: f64,
    /// Analytic multiply-accumulates per step.
    pub macs: u64,
    /// Multiply-accumulates counted while executing, per step.
    pub counted_macs: u64,
    pub params: usize,
    pub bytes: usize,
}

/// Analytic multiply-accumulates of one inference step. Pruned weights
/// still count: the kernels are dense.
pub fn mac_count(model: &LanguageModel) -> u64 {
    model.net.mac_count()
}

/// Short structural description such as `lstm-2x650-low_rank`.
pub fn model_id(net: &Network) -> String {
    let first = &net.layers[0];
    let family = |f: Family| match f {
        Family::Dense => "dense",
        Family::LowRank => "low_rank",
        Family::TensorTrain => "tt",
    };
    let mut id = format!("{}-{}x{}-{}", first.kind(), net.layers.len(), first.hidden_dim(), family(first.family()));
    if net.embedding.cols() != first.input_dim().max(first.hidden_dim()) || net.output.adapter.is_some() || net.output.w.is_tt() {
        id.push_str("-io");
    }
    id
}

fn window(net: &Network, cfg: &BenchConfig) -> Vec<usize> {
    let mut rng = Rng::new(cfg.seed);
    (0..cfg.seq_len).map(|_| rng.below(net.vocab_size())).collect()
}

/// Runs one window from the zero state; returns elapsed ns and counted MACs.
fn run_once(net: &Network, ids: &[usize]) -> Result<(f64, u64)> {
    let t = Instant::now();
    let pass = net.forward_sequence(ids, None, None)?;
    let ns = t.elapsed().as_nanos() as f64;
    std::hint::black_box(&pass.probs);
    Ok((ns, pass.macs))
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Summary {
    mean: f64,
    stddev: f64,
    min: f64,
}

fn summarize(xs: &[f64]) -> Summary {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Summary {
        mean,
        stddev: var.sqrt(),
        min: xs.iter().cloned().fold(f64::INFINITY, f64::min),
    }
}

fn check(cfg: &BenchConfig) -> Result<()> {
    if cfg.iters == 0 || cfg.seq_len == 0 {
        return Err(Error::Param("iters and seq_len must be positive".into()));
    }
    Ok(())
}

fn report(model: &LanguageModel, cfg: &BenchConfig, warmed: usize, times: &[f64], counted: u64) -> BenchReport {
    let s = summarize(times);
    let stats = ModelStats::of(model);
    let per_step = cfg.seq_len as f64;
    BenchReport {
        model_id: model_id(&model.net),
        warmup_iters: warmed,
        measured_iters: times.len(),
        seq_len: cfg.seq_len,
        mean_ns: s.mean / per_step,
        stddev_ns: s.stddev / per_step,
        min_ns: s.min / per_step,
        macs: mac_count(model),
        counted_macs: counted / cfg.seq_len as u64,
        params: stats.total_params,
        bytes: stats.stored_bytes,
    }
}

/// Time `cfg.iters` forward passes over a fixed random window after
/// `cfg.warmup` untimed ones, on the calling thread.
pub fn run_bench(model: &LanguageModel, cfg: &BenchConfig) -> Result<BenchReport> {
    check(cfg)?;
    let ids = window(&model.net, cfg);
    let mut warmed = 0;
    for _ in 0..cfg.warmup {
        run_once(&model.net, &ids)?;
        warmed += 1;
    }
    let mut times = Vec::with_capacity(cfg.iters);
    let mut counted = 0;
    for _ in 0..cfg.iters {
        let (ns, macs) = run_once(&model.net, &ids)?;
        times.push(ns);
        counted = macs;
    }
    Ok(report(model, cfg, warmed, &times, counted))
}

/// Two models timed in alternating order on the same window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedReport {
    pub a: BenchReport,
    pub b: BenchReport,
    /// Mean of per-iteration `a − b` step latency, ns.
    pub mean_diff_ns: f64,
    pub stddev_diff_ns: f64,
    /// `mean_diff / (stddev_diff / √n)`.
    pub t_statistic: f64,
    /// Share of iterations in which `b` was faster.
    pub b_faster_fraction: f64,
    /// `mean(a) / mean(b)`.
    pub speedup: f64,
}

pub fn compare(a: &LanguageModel, b: &LanguageModel, cfg: &BenchConfig) -> Result<PairedReport> {
    check(cfg)?;
    if a.net.vocab_size() != b.net.vocab_size() {
        return Err(Error::Config("paired models need the same vocabulary".into()));
    }
    let ids = window(&a.net, cfg);
    let mut warmed = 0;
    for _ in 0..cfg.warmup {
        run_once(&a.net, &ids)?;
        run_once(&b.net, &ids)?;
        warmed += 1;
    }
    let (mut ta, mut tb) = (Vec::with_capacity(cfg.iters), Vec::with_capacity(cfg.iters));
    let (mut ca, mut cb) = (0, 0);
    for i in 0..cfg.iters {
        let (x, y) = if i % 2 == 0 {
            let x = run_once(&a.net, &ids)?;
            (x, run_once(&b.net, &ids)?)
        } else {
            let y = run_once(&b.net, &ids)?;
            (run_once(&a.net, &ids)?, y)
        };
        ta.push(x.0);
        tb.push(y.0);
        ca = x.1;
        cb = y.1;
    }
    let diffs: Vec<f64> = ta.iter().zip(&tb).map(|(x, y)| (x - y) / cfg.seq_len as f64).collect();
    let d = summarize(&diffs);
    let ra = report(a, cfg, warmed, &ta, ca);
    let rb = report(b, cfg, warmed, &tb, cb);
    let se = d.stddev / (cfg.iters as f64).sqrt();
    Ok(PairedReport {
        mean_diff_ns: d.mean,
        stddev_diff_ns: d.stddev,
        t_statistic: if se > 0.0 { d.mean / se } else { 0.0 },
        b_faster_fraction: diffs.iter().filter(|x| **x > 0.0).count() as f64 / cfg.iters as f64,
        speedup: ra.mean_ns / rb.mean_ns,
        a: ra,
        b: rb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{ArchConfig, CellKind};
    use crate::langmodel::Vocabulary;
    use crate::lowrank::{lr_cells, FactorInit};

    fn model(cell: CellKind) -> LanguageModel {
        let mut t = vec!["<unk>".to_string(), "<eos>".to_string()];
        t.extend((2..20).map(|i| format!("w{i}")));
        let cfg = ArchConfig::new(cell, 20, 8, 2);
        LanguageModel::dense(Vocabulary::from_tokens(t).unwrap(), &cfg, &mut Rng::new(1)).unwrap()
    }

    #[test]
    fn single_iteration_mean_is_min() {
        let cfg = BenchConfig { warmup: 0, iters: 1, ..Default::default() };
        let r = run_bench(&model(CellKind::Lstm), &cfg).unwrap();
        assert_eq!(r.mean_ns, r.min_ns);
        assert_eq!(r.stddev_ns, 0.0);
    }

    #[test]
    fn counted_macs_match_analytic() {
        for cell in [CellKind::Rnn, CellKind::Lstm, CellKind::Gru] {
            let m = model(cell);
            let cfg = BenchConfig { warmup: 1, iters: 3, seq_len: 4, seed: 2 };
            let r = run_bench(&m, &cfg).unwrap();
            assert_eq!(r.macs, r.counted_macs);
            assert!(r.mean_ns >= r.min_ns);
            let again = run_bench(&m, &cfg).unwrap();
            assert_eq!(again.counted_macs, r.counted_macs);
        }
    }

    #[test]
    fn report_json_round_trip() {
        let r = run_bench(&model(CellKind::Gru), &BenchConfig { warmup: 0, iters: 5, ..Default::default() }).unwrap();
        let back: BenchReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn paired_comparison_runs() {
        let dense = model(CellKind::Lstm);
        let lr = LanguageModel::new(dense.vocab.clone(), lr_cells(&dense.net, 3, FactorInit::Svd, &mut Rng::new(0)).unwrap().network).unwrap();
        let p = compare(&dense, &lr, &BenchConfig { warmup: 2, iters: 20, ..Default::default() }).unwrap();
        assert!(p.a.macs > p.b.macs);
        assert!(p.speedup > 0.0);
        assert!((0.0..=1.0).contains(&p.b_faster_fraction));
        assert_eq!(model_id(&lr.net), "lstm-2x8-low_rank");
    }

    #[test]
    fn zero_iterations_rejected() {
        let cfg = BenchConfig { iters: 0, ..Default::default() };
        assert!(run_bench(&model(CellKind::Rnn), &cfg).is_err());
    }
}
