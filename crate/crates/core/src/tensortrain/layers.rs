use log::warn;
use serde::{Deserialize, Serialize};

use super::{choose_modes, tt_svd, TtMatrix};
use crate::cells::{Family, Layer, Linear, Network};
use crate::error::{Error, Result};
use crate::lowrank::FactorInit;
use crate::numkit::Rng;

/// How to reshape and truncate a weight matrix into TT format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtSpec {
    /// Number of cores.
    pub d: usize,
    /// Internal rank caps `r_1..r_{d-1}`, or a single cap for all.
    pub ranks: Vec<usize>,
    /// Explicit mode sizes; chosen by [`choose_modes`] when absent or when
    /// they do not factor a particular matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_modes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub col_modes: Option<Vec<usize>>,
}

impl TtSpec {
    pub fn new(d: usize, ranks: Vec<usize>) -> Self {
        Self {
            d,
            ranks,
            row_modes: None,
            col_modes: None,
        }
    }

    fn modes_for(&self, rows: usize, cols: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if let (Some(r), Some(c)) = (&self.row_modes, &self.col_modes) {
            if r.len() == self.d
                && c.len() == self.d
                && r.iter().product::<usize>() == rows
                && c.iter().product::<usize>() == cols
            {
                return Ok((r.clone(), c.clone()));
            }
        }
        choose_modes(rows, cols, self.d)
    }

    fn caps(&self) -> Result<Vec<usize>> {
        let need = self.d.saturating_sub(1);
        let caps = match self.ranks.len() {
            1 => vec![self.ranks[0]; need],
            n if n == need => self.ranks.clone(),
            n => return Err(Error::Param(format!("{n} TT ranks for {} cores", self.d))),
        };
        if caps.iter().any(|&r| r == 0) {
            return Err(Error::Param("TT ranks must be positive".into()));
        }
        Ok(caps)
    }
}

/// A network after a TT conversion.
#[derive(Clone, Debug)]
pub struct TtOutcome {
    pub network: Network,
    /// Frobenius norm of everything truncated away (0 for random init).
    pub discarded: f64,
    pub warnings: Vec<String>,
}

/// Convert one dense weight into TT format. Returns the discarded norm².
fn convert(l: &Linear, spec: &TtSpec, init: FactorInit, rng: &mut Rng) -> Result<(Linear, f64)> {
    let dense = l
        .as_dense()
        .ok_or_else(|| Error::Config("weight is already in TT format".into()))?;
    let (rm, cm) = spec.modes_for(dense.rows(), dense.cols())?;
    let caps = spec.caps()?;
    match init {
        FactorInit::Svd => {
            let dec = tt_svd(dense, &rm, &cm, &caps)?;
            Ok((Linear::Tt(dec.tt), dec.discarded * dec.discarded))
        }
        FactorInit::Random { scale } => {
            let ks: Vec<usize> = rm.iter().zip(&cm).map(|(a, b)| a * b).collect();
            let mut ranks = vec![1usize; spec.d + 1];
            for m in 1..spec.d {
                let left: usize = ks[..m].iter().product();
                let right: usize = ks[m..].iter().product();
                ranks[m] = caps[m - 1].min(left).min(right).min(ranks[m - 1] * ks[m - 1]);
            }
            Ok((Linear::Tt(TtMatrix::random(rng, &rm, &cm, &ranks, scale)?), 0.0))
        }
    }
}

/// Replace every weight matrix of every recurrent layer by a TT matrix.
pub fn tt_cells(net: &Network, spec: &TtSpec, init: FactorInit, rng: &mut Rng) -> Result<TtOutcome> {
    let mut out = net.clone();
    let mut discarded2 = 0.0;
    let mut warnings = Vec::new();
    for (l, layer) in out.layers.iter_mut().enumerate() {
        if layer.family() != Family::Dense {
            return Err(Error::Config(format!("layer {l} is already {:?}", layer.family())));
        }
        let linears: Vec<&mut Linear> = match layer {
            Layer::Rnn(c) => vec![&mut c.w, &mut c.u],
            Layer::Lstm(c) => c.w.iter_mut().chain(c.u.iter_mut()).collect(),
            Layer::Gru(c) => c.w.iter_mut().chain(c.u.iter_mut()).collect(),
        };
        for lin in linears {
            let (tt, e2) = convert(lin, spec, init, rng)?;
            if tt.param_count() >= lin.param_count() {
                let msg = format!("layer {l}: TT format with {} parameters does not shrink a {}x{} matrix", tt.param_count(), lin.rows(), lin.cols());
                warn!("{msg}");
                warnings.push(msg);
            }
            *lin = tt;
            discarded2 += e2;
        }
    }
    out.validate()?;
    Ok(TtOutcome {
        network: out,
        discarded: discarded2.sqrt(),
        warnings,
    })
}

/// Replace the output matrix by a TT matrix.
pub fn tt_output(net: &Network, spec: &TtSpec, init: FactorInit, rng: &mut Rng) -> Result<TtOutcome> {
    if net.output.adapter.is_some() {
        return Err(Error::Config("output layer is already low-rank factored".into()));
    }
    let mut out = net.clone();
    let (tt, e2) = convert(&net.output.w, spec, init, rng)?;
    let mut warnings = Vec::new();
    if tt.param_count() >= net.output.w.param_count() {
        let msg = "output TT format does not shrink the output matrix".to_string();
        warn!("{msg}");
        warnings.push(msg);
    }
    out.output.w = tt;
    out.validate()?;
    Ok(TtOutcome {
        network: out,
        discarded: e2.sqrt(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{ArchConfig, CellKind};

    #[test]
    fn full_rank_tt_reproduces_dense_network() {
        for kind in [CellKind::Rnn, CellKind::Lstm, CellKind::Gru] {
            let mut cfg = ArchConfig::new(kind, 8, 16, 1);
            cfg.init_scale = 0.5;
            let dense = Network::dense(&cfg, &mut Rng::new(2)).unwrap();
            let spec = TtSpec::new(2, vec![64]);
            let tt = tt_cells(&dense, &spec, FactorInit::Svd, &mut Rng::new(0)).unwrap();
            assert!(tt.discarded < 1e-9);
            let ids = [1, 3, 7];
            let a = dense.forward_sequence(&ids, None, None).unwrap();
            let b = tt.network.forward_sequence(&ids, None, None).unwrap();
            for (p, q) in a.probs.iter().zip(&b.probs) {
                for (x, y) in p.iter().zip(q) {
                    assert!((x - y).abs() < 1e-9);
                }
            }
            assert_eq!(b.macs, tt.network.mac_count() * 3);
        }
    }

    #[test]
    fn explicit_modes_used_when_they_fit() {
        let mut spec = TtSpec::new(2, vec![2]);
        spec.row_modes = Some(vec![2, 8]);
        spec.col_modes = Some(vec![8, 2]);
        assert_eq!(spec.modes_for(16, 16).unwrap(), (vec![2, 8], vec![8, 2]));
        assert_eq!(spec.modes_for(16, 8).unwrap(), choose_modes(16, 8, 2).unwrap());
    }

    #[test]
    fn double_conversion_rejected() {
        let cfg = ArchConfig::new(CellKind::Lstm, 8, 4, 1);
        let dense = Network::dense(&cfg, &mut Rng::new(2)).unwrap();
        let spec = TtSpec::new(2, vec![2]);
        let once = tt_cells(&dense, &spec, FactorInit::default(), &mut Rng::new(0)).unwrap();
        assert!(tt_cells(&once.network, &spec, FactorInit::default(), &mut Rng::new(0)).is_err());
        let out = tt_output(&dense, &spec, FactorInit::Svd, &mut Rng::new(0)).unwrap();
        assert!(out.network.output.w.is_tt());
    }
}
