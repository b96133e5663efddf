use std::io::{Read, Write};

use rand::Rng;

use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named parameter arrays in a fixed order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.push((name.into(), value));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensor(&self, index: usize) -> &Tensor {
        &self.entries[index].1
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Concatenates the named arrays, in the order given.
    pub fn flatten(&self, names: &[String]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for n in names {
            let t = self.get(n).ok_or_else(|| Error::invalid(format!("unknown parameter {n}")))?;
            out.extend_from_slice(t.data());
        }
        Ok(out)
    }

    /// Inverse of [`ParamStore::flatten`].
    pub fn assign(&mut self, names: &[String], flat: &[f64]) -> Result<()> {
        let mut offset = 0;
        for n in names {
            let t = self.get_mut(n).ok_or_else(|| Error::invalid(format!("unknown parameter {n}")))?;
            let len = t.len();
            if offset + len > flat.len() {
                return Err(Error::shape("assign", "flat vector too short"));
            }
            t.data_mut().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        if offset != flat.len() {
            return Err(Error::shape("assign", "flat vector too long"));
        }
        Ok(())
    }

    pub fn all_names(&self) -> Vec<String> {
        self.entries.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape())
    }
}

pub(crate) fn glorot<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-limit..limit)).collect())
        .expect("shape is positive")
}

/// Expected `(name, shape)` pairs for an encoder, in canonical order.
pub fn canonical_layout(cfg: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = vec![
        ("input.weight".to_string(), vec![cfg.d, cfg.d]),
        ("input.bias".to_string(), vec![cfg.d]),
    ];
    for (i, l) in cfg.layers().iter().enumerate() {
        let p = format!("sp{}", i + 1);
        out.push((format!("{p}.query"), vec![l.width, l.width]));
        out.push((format!("{p}.key"), vec![l.width, l.width]));
        out.push((format!("{p}.value"), vec![l.width, l.width]));
        out.push((format!("{p}.proj"), vec![l.width, l.out_width]));
        out.push((format!("{p}.conv.weight"), vec![super::CONV_WIDTH, l.out_width, l.out_width]));
        out.push((format!("{p}.conv.bias"), vec![l.out_width]));
        out.push((format!("{p}.pelu"), vec![1]));
    }
    out.push(("head.weight".to_string(), vec![cfg.num_classes, cfg.repr_width()]));
    out.push(("head.bias".to_string(), vec![cfg.num_classes]));
    out
}

/// Glorot-uniform weights, zero biases and PeLU slopes of 0.25.
pub fn init_params<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> ParamStore {
    let mut store = ParamStore::new();
    for (name, shape) in canonical_layout(cfg) {
        let t = if name.ends_with("bias") {
            Tensor::zeros(&shape)
        } else if name.ends_with("pelu") {
            Tensor::scalar(0.25)
        } else if shape.len() == 3 {
            glorot(rng, &shape, shape[0] * shape[1], shape[0] * shape[2])
        } else {
            glorot(rng, &shape, shape[0], shape[1])
        };
        store.push(name, t);
    }
    store
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MTCA";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Fixed header of a checkpoint file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub d: u32,
    pub max_len: u32,
    pub heads: u32,
    pub n_e: u32,
}

/// Writes `MTCA`, version, d, L, H, n_E, the array count, then each array
/// as name, rank, dims and little-endian `f64` values.
pub fn write_checkpoint<W: Write>(w: &mut W, cfg: &EncoderConfig, params: &ParamStore) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    for v in [CHECKPOINT_VERSION, cfg.d as u32, cfg.max_len as u32, cfg.heads as u32, cfg.n_e as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &s in t.shape() {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(CheckpointHeader, ParamStore)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let header = CheckpointHeader {
        version: read_u32(r)?,
        d: read_u32(r)?,
        max_len: read_u32(r)?,
        heads: read_u32(r)?,
        n_e: read_u32(r)?,
    };
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", header.version)));
    }
    let count = read_u32(r)?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        if len > 1 << 16 {
            return Err(Error::Format("parameter name too long".into()));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        let rank = read_u32(r)? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Format(format!("bad rank {rank} for {name}")));
        }
        let shape = (0..rank).map(|_| read_u32(r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        let data = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        params.push(name, Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))?);
    }
    Ok((header, params))
}

/// Rebuilds the config a checkpoint was written with. `dropout` is a
/// training-time setting and is not stored in the file.
pub fn config_from_checkpoint(header: &CheckpointHeader, params: &ParamStore, dropout: f64) -> Result<EncoderConfig> {
    let layers = params.names().iter().filter(|n| n.ends_with(".pelu")).count();
    let classes = params
        .get("head.bias")
        .ok_or_else(|| Error::Format("checkpoint lacks head.bias".into()))?
        .len();
    let cfg = EncoderConfig {
        d: header.d as usize,
        max_len: header.max_len as usize,
        heads: header.heads as usize,
        n_e: header.n_e as usize,
        num_classes: classes,
        dropout,
        stacked_layers: layers,
    };
    cfg.validate()?;
    let layout = canonical_layout(&cfg);
    let matches = layout.len() == params.len()
        && layout.iter().zip(params.iter()).all(|((n, s), (pn, pt))| n == pn && s.as_slice() == pt.shape());
    if !matches {
        return Err(Error::Format("checkpoint arrays do not match the canonical layout".into()));
    }
    Ok(cfg)
}
