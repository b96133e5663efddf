use std::io::{Read, Write};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{position_encoding, probsparse_attention};
use super::params::{canonical_layout, config_from_checkpoint, init_params, read_checkpoint, write_checkpoint, ParamStore};
use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::tensor::{softmax, Tape, Tensor, Var};

/// Kernel width of the per-layer convolution (same padding).
pub const CONV_WIDTH: usize = 3;

/// Sentence embeddings plus position encodings for one transcript.
///
/// Valid rows form a prefix; padding rows are zero and masked out.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedTranscript {
    e: Tensor,
    mask: Vec<bool>,
}

impl EncodedTranscript {
    pub fn from_sentences<R: AsRef<[f64]>>(sentences: &[R], cfg: &EncoderConfig) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::Empty("transcript has no sentences"));
        }
        if sentences.len() > cfg.max_len {
            return Err(Error::invalid(format!(
                "{} sentences exceed max_len {}",
                sentences.len(),
                cfg.max_len
            )));
        }
        let mut data = Vec::with_capacity(sentences.len() * cfg.d);
        for (pos, s) in sentences.iter().enumerate() {
            let s = s.as_ref();
            if s.len() != cfg.d {
                return Err(Error::shape(
                    "from_sentences",
                    format!("sentence {pos} has width {}, expected {}", s.len(), cfg.d),
                ));
            }
            data.extend(s.iter().zip(position_encoding(pos, cfg.d)).map(|(a, b)| a + b));
        }
        Ok(Self {
            e: Tensor::new(vec![sentences.len(), cfg.d], data)?,
            mask: vec![true; sentences.len()],
        })
    }

    /// Appends zero, masked rows up to `len` rows.
    pub fn padded(mut self, len: usize) -> Result<Self> {
        let (n, d) = self.e.matrix_dims()?;
        if len < n {
            return Err(Error::invalid(format!("cannot pad {n} rows down to {len}")));
        }
        let mut data = self.e.into_data();
        data.resize(len * d, 0.0);
        self.e = Tensor::new(vec![len, d], data)?;
        self.mask.resize(len, false);
        Ok(self)
    }

    pub fn matrix(&self) -> &Tensor {
        &self.e
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Copy with sentence `index` swapped for another raw embedding.
    pub fn with_sentence(&self, index: usize, raw: &[f64]) -> Result<Self> {
        let d = self.e.shape()[1];
        if index >= self.valid_len() {
            return Err(Error::OutOfRange(format!("sentence {index} of {}", self.valid_len())));
        }
        if raw.len() != d {
            return Err(Error::shape("with_sentence", "replacement width differs"));
        }
        let mut out = self.clone();
        let row = &mut out.e.data_mut()[index * d..(index + 1) * d];
        for ((r, v), p) in row.iter_mut().zip(raw).zip(position_encoding(index, d)) {
            *r = v + p;
        }
        Ok(out)
    }
}

/// Forward-pass behaviour: evaluation, or training with dropout drawn from `rng`.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

/// Handles produced by [`forward`].
#[derive(Clone, Debug)]
pub struct Forward {
    /// `[1, num_classes]` pre-softmax scores.
    pub logits: Var,
    /// Pooled transcript representation, `[1, repr_width]`.
    pub repr: Var,
    /// One variable per parameter array, in store order.
    pub params: Vec<Var>,
}

/// One stacked layer: sparse multi-head attention, head projection,
/// convolution, PeLU and stride-2 max-pool. Returns the pooled sequence and
/// its mask.
pub fn sp_layer(
    tape: &mut Tape,
    cfg: &EncoderConfig,
    layer: usize,
    weights: &[Var],
    x: Var,
    mask: &[bool],
) -> Result<(Var, Vec<bool>)> {
    let dims = *cfg
        .layers()
        .get(layer.wrapping_sub(1))
        .ok_or_else(|| Error::OutOfRange(format!("layer {layer} of {}", cfg.stacked_layers)))?;
    let [wq, wk, wv, wh, conv_w, conv_b, slope] = weights[..] else {
        return Err(Error::invalid("sp_layer expects 7 parameter arrays"));
    };
    let valid = mask.iter().filter(|&&m| m).count();
    let n_e = cfg.n_e.min(valid);

    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let v = tape.matmul(x, wv)?;
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let start = h * dims.head_dim;
        let qh = tape.slice_cols(q, start, dims.head_dim)?;
        let kh = tape.slice_cols(k, start, dims.head_dim)?;
        let vh = tape.slice_cols(v, start, dims.head_dim)?;
        heads.push(probsparse_attention(tape, qh, kh, vh, n_e, mask)?.0);
    }
    let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
    let hs = tape.matmul(cat, wh)?;
    let conv = tape.conv1d(hs, conv_w, (CONV_WIDTH - 1) / 2)?;
    let conv = tape.add_row(conv, conv_b)?;
    let conv = tape.mask_rows(conv, mask)?;
    let act = tape.pelu(conv, slope)?;
    tape.maxpool1d(act, Some(mask))
}

/// Records the full encoder on `tape`: input projection, the stacked
/// layers, mean pooling over valid positions and the class head.
pub fn forward(
    tape: &mut Tape,
    cfg: &EncoderConfig,
    params: &ParamStore,
    x: &EncodedTranscript,
    mode: Mode<'_>,
    track_grads: bool,
) -> Result<Forward> {
    let pv = param_leaves(tape, params, track_grads)?;
    forward_with(tape, cfg, pv, x, mode)
}

/// One leaf per parameter array, in store order.
pub fn param_leaves(tape: &mut Tape, params: &ParamStore, track_grads: bool) -> Result<Vec<Var>> {
    params.iter().map(|(_, t)| tape.leaf(t.clone(), track_grads)).collect()
}

/// [`forward`] over parameter leaves that are already on the tape, so that
/// several passes can share them.
pub fn forward_with(
    tape: &mut Tape,
    cfg: &EncoderConfig,
    pv: Vec<Var>,
    x: &EncodedTranscript,
    mut mode: Mode<'_>,
) -> Result<Forward> {
    if x.valid_len() == 0 {
        return Err(Error::Empty("transcript has no sentences"));
    }
    if x.matrix().shape()[1] != cfg.d {
        return Err(Error::shape("forward", "transcript width differs from d"));
    }
    if pv.len() != 4 + 7 * cfg.stacked_layers {
        return Err(Error::invalid("parameter count does not match the encoder layout"));
    }
    let input = tape.constant(x.matrix().clone())?;
    let h = tape.matmul(input, pv[0])?;
    let h = tape.add_row(h, pv[1])?;
    let mut h = tape.mask_rows(h, x.mask())?;
    if let Mode::Train(rng) = &mut mode {
        h = tape.dropout(h, cfg.dropout, &mut **rng)?;
    }
    let mut mask = x.mask().to_vec();
    for layer in 1..=cfg.stacked_layers {
        let base = 2 + (layer - 1) * 7;
        let (out, m) = sp_layer(tape, cfg, layer, &pv[base..base + 7], h, &mask)?;
        h = out;
        mask = m;
    }
    let mut repr = tape.mean_rows(h, &mask)?;
    if let Mode::Train(rng) = &mut mode {
        repr = tape.dropout(repr, cfg.dropout, &mut **rng)?;
    }
    let head_w = pv[pv.len() - 2];
    let head_b = pv[pv.len() - 1];
    let logits = tape.matmul_nt(repr, head_w)?;
    let logits = tape.add_row(logits, head_b)?;
    Ok(Forward { logits, repr, params: pv })
}

/// Class distribution `softmax(W_p · repr + b_p)` for `W_p: [classes, width]`.
pub fn predict(repr: &[f64], w_p: &Tensor, b_p: &[f64]) -> Result<Vec<f64>> {
    let (c, w) = w_p.matrix_dims()?;
    if w != repr.len() || b_p.len() != c {
        return Err(Error::shape("predict", format!("W_p {c}x{w}, repr {}, b_p {}", repr.len(), b_p.len())));
    }
    let logits: Vec<f64> = (0..c)
        .map(|i| w_p.row(i).iter().zip(repr).map(|(a, b)| a * b).sum::<f64>() + b_p[i])
        .collect();
    Ok(softmax(&Tensor::vector(logits)?, 0)?.into_data())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Encoder configuration plus its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    cfg: EncoderConfig,
    params: ParamStore,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let params = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self { cfg, params })
    }

    pub fn from_parts(cfg: EncoderConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let layout = canonical_layout(&cfg);
        let ok = layout.len() == params.len()
            && layout.iter().zip(params.iter()).all(|((n, s), (pn, pt))| n == pn && s.as_slice() == pt.shape());
        if !ok {
            return Err(Error::invalid("parameters do not match the encoder layout"));
        }
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn set_dropout(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout must be in [0, 1), got {rate}")));
        }
        self.cfg.dropout = rate;
        Ok(())
    }

    /// Pooled representation; dropout applies only when `rng` is given.
    pub fn encode(&self, x: &EncodedTranscript, rng: Option<&mut dyn RngCore>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let mode = rng.map_or(Mode::Eval, Mode::Train);
        let f = forward(&mut tape, &self.cfg, &self.params, x, mode, false)?;
        Ok(tape.value(f.repr).data().to_vec())
    }

    pub fn logits(&self, x: &EncodedTranscript) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let f = forward(&mut tape, &self.cfg, &self.params, x, Mode::Eval, false)?;
        Ok(tape.value(f.logits).data().to_vec())
    }

    pub fn predict_proba(&self, x: &EncodedTranscript) -> Result<Vec<f64>> {
        let repr = self.encode(x, None)?;
        let w = self.params.get("head.weight").expect("layout checked");
        let b = self.params.get("head.bias").expect("layout checked");
        predict(&repr, w, b.data())
    }

    pub fn predict_label(&self, x: &EncodedTranscript) -> Result<usize> {
        Ok(argmax(&self.predict_proba(x)?))
    }

    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        write_checkpoint(w, &self.cfg, &self.params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.save(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    pub fn load<R: Read>(r: &mut R, dropout: f64) -> Result<Self> {
        let (header, params) = read_checkpoint(r)?;
        let cfg = config_from_checkpoint(&header, &params, dropout)?;
        Ok(Self { cfg, params })
    }
}
