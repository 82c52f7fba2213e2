//! Binary model container.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, the JSON
//! header, its `u32` CRC-32, then the blobs back to back. The header
//! describes the network structure and lists every blob with its offset
//! (relative to the first blob), length and CRC-32. All integers are
//! little-endian. Floating-point values live only in blobs, so a
//! save/load/save cycle reproduces the file byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cells::{CellKind, GruBlend, GruCell, Layer, Linear, LstmCell, Network, OutputLayer, RnnCell};
use crate::error::{Error, Result};
use crate::langmodel::{LanguageModel, Vocabulary};
use crate::numkit::Matrix;
use crate::sparse::{apply_masks, PruneMask, QuantizedMatrix};
use crate::tensortrain::TtMatrix;

pub const MAGIC: &[u8; 8] = b"LMCMODEL";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case")]
enum LinearShape {
    Dense {
        rows: usize,
        cols: usize,
    },
    Tt {
        row_modes: Vec<usize>,
        col_modes: Vec<usize>,
        ranks: Vec<usize>,
    },
}

impl LinearShape {
    fn of(l: &Linear) -> Self {
        match l {
            Linear::Dense(m) => LinearShape::Dense {
                rows: m.rows(),
                cols: m.cols(),
            },
            Linear::Tt(t) => LinearShape::Tt {
                row_modes: t.row_modes().to_vec(),
                col_modes: t.col_modes().to_vec(),
                ranks: t.ranks().to_vec(),
            },
        }
    }

    fn build(&self) -> Result<Linear> {
        Ok(match self {
            LinearShape::Dense { rows, cols } => Linear::Dense(Matrix::zeros(*rows, *cols)),
            LinearShape::Tt {
                row_modes,
                col_modes,
                ranks,
            } => Linear::Tt(TtMatrix::zeros(row_modes, col_modes, ranks)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LayerShape {
    cell: CellKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    in_proj: Option<(usize, usize)>,
    w: Vec<LinearShape>,
    u: Vec<LinearShape>,
    bias: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    proj: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    blend: Option<GruBlend>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct NetShape {
    embedding: (usize, usize),
    layers: Vec<LayerShape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_adapter: Option<(usize, usize)>,
    output: LinearShape,
}

fn shape(m: &Option<Matrix>) -> Option<(usize, usize)> {
    m.as_ref().map(Matrix::shape)
}

fn zeros(s: Option<(usize, usize)>) -> Option<Matrix> {
    s.map(|(r, c)| Matrix::zeros(r, c))
}

fn linears<const N: usize>(shapes: &[LinearShape]) -> Result<[Linear; N]> {
    if shapes.len() != N {
        return Err(Error::Format(format!("expected {N} weight shapes, found {}", shapes.len())));
    }
    let v: Vec<Linear> = shapes.iter().map(LinearShape::build).collect::<Result<_>>()?;
    Ok(v.try_into().unwrap_or_else(|_| unreachable!()))
}

fn biases<const N: usize>(w: &[Linear; N]) -> [Vec<f64>; N] {
    std::array::from_fn(|i| vec![0.0; w[i].rows()])
}

impl LayerShape {
    fn of(layer: &Layer) -> Self {
        let shapes = |ls: &[Linear]| ls.iter().map(LinearShape::of).collect::<Vec<_>>();
        match layer {
            Layer::Rnn(c) => Self {
                cell: CellKind::Rnn,
                in_proj: shape(&c.in_proj),
                w: vec![LinearShape::of(&c.w)],
                u: vec![LinearShape::of(&c.u)],
                bias: true,
                proj: shape(&c.proj),
                blend: None,
            },
            Layer::Lstm(c) => Self {
                cell: CellKind::Lstm,
                in_proj: shape(&c.in_proj),
                w: shapes(&c.w),
                u: shapes(&c.u),
                bias: true,
                proj: shape(&c.proj),
                blend: None,
            },
            Layer::Gru(c) => Self {
                cell: CellKind::Gru,
                in_proj: shape(&c.in_proj),
                w: shapes(&c.w),
                u: shapes(&c.u),
                bias: c.b.is_some(),
                proj: shape(&c.proj),
                blend: Some(c.blend),
            },
        }
    }

    fn build(&self) -> Result<Layer> {
        Ok(match self.cell {
            CellKind::Rnn => {
                let [w] = linears::<1>(&self.w)?;
                let [u] = linears::<1>(&self.u)?;
                Layer::Rnn(RnnCell {
                    in_proj: zeros(self.in_proj),
                    b: vec![0.0; w.rows()],
                    w,
                    u,
                    proj: zeros(self.proj),
                })
            }
            CellKind::Lstm => {
                let w = linears::<4>(&self.w)?;
                Layer::Lstm(LstmCell {
                    in_proj: zeros(self.in_proj),
                    b: biases(&w),
                    w,
                    u: linears::<4>(&self.u)?,
                    proj: zeros(self.proj),
                })
            }
            CellKind::Gru => {
                let w = linears::<3>(&self.w)?;
                Layer::Gru(GruCell {
                    in_proj: zeros(self.in_proj),
                    b: self.bias.then(|| biases(&w)),
                    w,
                    u: linears::<3>(&self.u)?,
                    proj: zeros(self.proj),
                    blend: self.blend.unwrap_or_default(),
                })
            }
        })
    }
}

impl NetShape {
    fn of(net: &Network) -> Self {
        Self {
            embedding: net.embedding.shape(),
            layers: net.layers.iter().map(LayerShape::of).collect(),
            output_adapter: shape(&net.output.adapter),
            output: LinearShape::of(&net.output.w),
        }
    }

    fn build(&self) -> Result<Network> {
        let w = self.output.build()?;
        let net = Network {
            embedding: Matrix::zeros(self.embedding.0, self.embedding.1),
            layers: self.layers.iter().map(LayerShape::build).collect::<Result<_>>()?,
            output: OutputLayer {
                adapter: zeros(self.output_adapter),
                b: vec![0.0; w.rows()],
                w,
            },
        };
        net.validate().map_err(|e| Error::Format(format!("inconsistent structure: {e}")))?;
        Ok(net)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlobKind {
    /// Little-endian f64 values.
    F64,
    /// f64 min, f64 max, then one code byte per entry.
    Q8,
    /// f64 target sparsity, then keep bits packed LSB first.
    Mask,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub tensor: String,
    pub kind: BlobKind,
    pub shape: (usize, usize),
    pub offset: u64,
    pub len: u64,
    pub crc32: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    vocab: Vocabulary,
    structure: NetShape,
    blobs: Vec<BlobEntry>,
}

fn push_blob(blobs: &mut Vec<BlobEntry>, body: &mut Vec<u8>, tensor: &str, kind: BlobKind, shape: (usize, usize), bytes: Vec<u8>) {
    blobs.push(BlobEntry {
        tensor: tensor.to_string(),
        kind,
        shape,
        offset: body.len() as u64,
        len: bytes.len() as u64,
        crc32: crc32fast::hash(&bytes),
    });
    body.extend_from_slice(&bytes);
}

/// Serialize a model to container bytes.
pub fn to_bytes(model: &LanguageModel) -> Result<Vec<u8>> {
    model.check_masks()?;
    let mut blobs = Vec::new();
    let mut body = Vec::new();
    for p in model.net.params() {
        if let Some(q) = model.quant.get(&p.name) {
            if q.codes.len() != p.data.len() {
                return Err(Error::Format(format!("quantized codes of {} have the wrong length", p.name)));
            }
            let mut bytes = Vec::with_capacity(16 + q.codes.len());
            bytes.extend_from_slice(&q.min_val.to_le_bytes());
            bytes.extend_from_slice(&q.max_val.to_le_bytes());
            bytes.extend_from_slice(&q.codes);
            push_blob(&mut blobs, &mut body, &p.name, BlobKind::Q8, p.shape, bytes);
        } else {
            let bytes = p.data.iter().flat_map(|v| v.to_le_bytes()).collect();
            push_blob(&mut blobs, &mut body, &p.name, BlobKind::F64, p.shape, bytes);
        }
        if let Some(m) = model.masks.get(&p.name) {
            let mut bytes = m.target_sparsity.to_le_bytes().to_vec();
            let mut packed = vec![0u8; m.keep.len().div_ceil(8)];
            for (i, _) in m.keep.iter().enumerate().filter(|(_, k)| **k) {
                packed[i / 8] |= 1 << (i % 8);
            }
            bytes.extend(packed);
            push_blob(&mut blobs, &mut body, &p.name, BlobKind::Mask, p.shape, bytes);
        }
    }
    let header = Header {
        vocab: model.vocab.clone(),
        structure: NetShape::of(&model.net),
        blobs,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(24 + json.len() + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&crc32fast::hash(&json).to_le_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    let end = at
        .checked_add(n)
        .filter(|e| *e <= bytes.len())
        .ok_or_else(|| Error::Format(format!("file truncated in {what}")))?;
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

fn f64_at(b: &[u8], i: usize) -> f64 {
    f64::from_le_bytes(b[8 * i..8 * i + 8].try_into().expect("8 bytes"))
}

/// Parse container bytes. Every checksum is verified before the model is
/// assembled.
pub fn from_bytes(bytes: &[u8]) -> Result<LanguageModel> {
    let mut at = 0;
    if take(bytes, &mut at, 8, "magic")? != MAGIC {
        return Err(Error::Format("not a model container (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(bytes, &mut at, 4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let hlen = u64::from_le_bytes(take(bytes, &mut at, 8, "header length")?.try_into().expect("8 bytes"));
    let json = take(bytes, &mut at, usize::try_from(hlen).map_err(|_| Error::Format("header too large".into()))?, "header")?;
    let crc = u32::from_le_bytes(take(bytes, &mut at, 4, "header checksum")?.try_into().expect("4 bytes"));
    if crc32fast::hash(json) != crc {
        return Err(Error::Integrity("the header".into()));
    }
    let header: Header = serde_json::from_slice(json)?;
    let body = &bytes[at..];
    let mut end = 0u64;
    for b in &header.blobs {
        let stop = b.offset.checked_add(b.len).filter(|s| *s <= body.len() as u64);
        let Some(stop) = stop else {
            return Err(Error::Format(format!("file truncated in blob {}", b.tensor)));
        };
        if b.offset != end {
            return Err(Error::Format(format!("blob {} is not contiguous", b.tensor)));
        }
        if crc32fast::hash(&body[b.offset as usize..stop as usize]) != b.crc32 {
            return Err(Error::Integrity(format!("blob {}", b.tensor)));
        }
        end = stop;
    }
    if end != body.len() as u64 {
        return Err(Error::Format("trailing bytes after the last blob".into()));
    }

    let vocab = Vocabulary::from_tokens(header.vocab.tokens().to_vec())?;
    let mut net = header.structure.build()?;
    let mut values: BTreeMap<&str, &BlobEntry> = BTreeMap::new();
    let mut mask_blobs: BTreeMap<&str, &BlobEntry> = BTreeMap::new();
    for b in &header.blobs {
        let dst = if b.kind == BlobKind::Mask { &mut mask_blobs } else { &mut values };
        if dst.insert(&b.tensor, b).is_some() {
            return Err(Error::Format(format!("duplicate blob for {}", b.tensor)));
        }
    }
    let mut masks = BTreeMap::new();
    let mut quant = BTreeMap::new();
    let mut filled = 0;
    for p in net.params_mut() {
        let n = p.data.len();
        let b = values
            .get(p.name.as_str())
            .ok_or_else(|| Error::Format(format!("no blob for tensor {}", p.name)))?;
        let raw = &body[b.offset as usize..(b.offset + b.len) as usize];
        if b.shape.0 * b.shape.1 != n {
            return Err(Error::Format(format!("blob shape of {} does not match the structure", p.name)));
        }
        match b.kind {
            BlobKind::F64 => {
                if raw.len() != 8 * n {
                    return Err(Error::Format(format!("blob {} has {} bytes for {n} values", p.name, raw.len())));
                }
                for (i, v) in p.data.iter_mut().enumerate() {
                    *v = f64_at(raw, i);
                }
            }
            BlobKind::Q8 => {
                if raw.len() != 16 + n {
                    return Err(Error::Format(format!("quantized blob {} has {} bytes for {n} codes", p.name, raw.len())));
                }
                let q = QuantizedMatrix {
                    rows: b.shape.0,
                    cols: b.shape.1,
                    min_val: f64_at(raw, 0),
                    max_val: f64_at(raw, 1),
                    codes: raw[16..].to_vec(),
                };
                q.dequantize_into(p.data);
                quant.insert(p.name.clone(), q);
            }
            BlobKind::Mask => unreachable!("masks are kept apart"),
        }
        if let Some(mb) = mask_blobs.get(p.name.as_str()) {
            let raw = &body[mb.offset as usize..(mb.offset + mb.len) as usize];
            if raw.len() != 8 + n.div_ceil(8) {
                return Err(Error::Format(format!("mask blob {} has the wrong length", p.name)));
            }
            let keep = (0..n).map(|i| raw[8 + i / 8] >> (i % 8) & 1 == 1).collect();
            masks.insert(
                p.name.clone(),
                PruneMask {
                    keep,
                    target_sparsity: f64_at(raw, 0),
                },
            );
        }
        filled += 1;
    }
    if filled != values.len() || masks.len() != mask_blobs.len() {
        return Err(Error::Format("container holds blobs for unknown tensors".into()));
    }
    apply_masks(&mut net, &masks);
    let mut model = LanguageModel::new(vocab, net)?;
    model.masks = masks;
    model.quant = quant;
    Ok(model)
}

/// Write a model container. The file is written next to `path` and renamed
/// into place.
pub fn save_model(model: &LanguageModel, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<LanguageModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Blob directory of a container, without assembling the model.
pub fn blob_index(bytes: &[u8]) -> Result<Vec<BlobEntry>> {
    let mut at = 0;
    take(bytes, &mut at, 12, "preamble")?;
    let hlen = u64::from_le_bytes(take(bytes, &mut at, 8, "header length")?.try_into().expect("8 bytes"));
    let json = take(bytes, &mut at, hlen as usize, "header")?;
    let header: Header = serde_json::from_slice(json)?;
    Ok(header.blobs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::ArchConfig;
    use crate::lowrank::{compress_model_lr, FactorInit};
    use crate::numkit::Rng;
    use crate::sparse::{prune_component, quantize_slice};

    fn model(cell: CellKind) -> LanguageModel {
        let mut t = vec!["<unk>".to_string(), "<eos>".to_string()];
        t.extend((0..10).map(|i| format!("t{i}")));
        let vocab = Vocabulary::from_tokens(t).unwrap();
        let cfg = ArchConfig::new(cell, 12, 6, 2);
        LanguageModel::dense(vocab, &cfg, &mut Rng::new(9)).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        for cell in [CellKind::Rnn, CellKind::Lstm, CellKind::Gru] {
            let m = model(cell);
            let bytes = to_bytes(&m).unwrap();
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(to_bytes(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn masks_and_codes_survive() {
        let mut m = model(CellKind::Lstm);
        m.masks = prune_component(&mut m.net, "output", 0.7).unwrap();
        let e = &m.net.embedding;
        let q = quantize_slice(e.data(), e.rows(), e.cols()).unwrap();
        q.dequantize_into(m.net.embedding.data_mut());
        m.quant.insert("embedding".into(), q);
        let bytes = to_bytes(&m).unwrap();
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn shared_projection_stored_once_per_layer() {
        let m = model(CellKind::Lstm);
        let lr = compress_model_lr(&m.net, 3, 3, FactorInit::Svd, &mut Rng::new(0)).unwrap();
        let m = LanguageModel::new(m.vocab.clone(), lr.network).unwrap();
        let bytes = to_bytes(&m).unwrap();
        let index = blob_index(&bytes).unwrap();
        for l in 0..2 {
            let prefix = format!("layer{l}.proj");
            assert_eq!(index.iter().filter(|b| b.tensor == prefix).count(), 1);
        }
        assert_eq!(from_bytes(&bytes).unwrap(), m);
    }

    #[test]
    fn corruption_detected() {
        let bytes = to_bytes(&model(CellKind::Gru)).unwrap();
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 3] ^= 0x40;
        assert!(matches!(from_bytes(&bad), Err(Error::Integrity(_))));
        assert!(matches!(from_bytes(&bytes[..n - 1]), Err(Error::Format(_))));
        let mut v = bytes.clone();
        v[8] = 9;
        assert!(matches!(from_bytes(&v), Err(Error::Version { found: 9, .. })));
        let mut h = bytes.clone();
        h[30] ^= 1;
        assert!(matches!(from_bytes(&h), Err(Error::Integrity(_))));
    }
}
