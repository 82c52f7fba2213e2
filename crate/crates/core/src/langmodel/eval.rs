use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cells::Network;
use crate::error::{Error, Result};

/// Summed log-loss over a token stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub nll_sum: f64,
    pub tokens: usize,
    pub cross_entropy: f64,
    pub perplexity: f64,
}

impl EvalResult {
    fn from_sum(nll_sum: f64, tokens: usize) -> Self {
        let cross_entropy = nll_sum / tokens as f64;
        Self {
            nll_sum,
            tokens,
            cross_entropy,
            perplexity: cross_entropy.exp(),
        }
    }
}

fn segment_nll(net: &Network, inputs: &[usize], targets: &[usize]) -> Result<f64> {
    let mut state = net.zero_state();
    let mut macs = 0;
    let mut sum = 0.0;
    for (&x, &y) in inputs.iter().zip(targets) {
        let p = net.step(x, &mut state, &mut macs)?;
        sum -= p[y].ln();
    }
    Ok(sum)
}

/// Cross-entropy of predicting `stream[t + 1]` from `stream[..=t]`.
///
/// The predictions are cut into `segments` contiguous pieces, each starting
/// from the zero state. Pieces are evaluated in parallel on the current
/// rayon pool and their sums added in segment order, so the result depends
/// on `segments` but never on the number of threads.
pub fn evaluate(net: &Network, stream: &[usize], segments: usize) -> Result<EvalResult> {
    if stream.len() < 2 {
        return Err(Error::Empty("evaluation needs at least two tokens".into()));
    }
    let n = stream.len() - 1;
    let segments = segments.clamp(1, n);
    let bounds: Vec<(usize, usize)> = (0..segments).map(|s| (s * n / segments, (s + 1) * n / segments)).collect();
    let sums: Vec<f64> = bounds
        .par_iter()
        .map(|&(a, b)| segment_nll(net, &stream[a..b], &stream[a + 1..b + 1]))
        .collect::<Result<_>>()?;
    Ok(EvalResult::from_sum(sums.iter().sum(), n))
}

/// `exp` of the mean per-token cross-entropy in nats, evaluated as one stream.
pub fn perplexity(net: &Network, stream: &[usize]) -> Result<f64> {
    Ok(evaluate(net, stream, 1)?.perplexity)
}

/// Word prediction accuracy as the reciprocal of perplexity.
pub fn word_accuracy(perplexity: f64) -> f64 {
    1.0 / perplexity
}
