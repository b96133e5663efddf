//! Sinusoidal positions, query sparsity scoring and top-query sparse attention.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// The `(sin, cos)` pair for frequency index `f` at position `pos`.
pub fn position_pair(pos: usize, f: usize, d: usize, max_len: usize) -> Result<(f64, f64)> {
    if pos >= max_len {
        return Err(Error::OutOfRange(format!("position {pos} >= max_len {max_len}")));
    }
    if d % 2 != 0 || f >= d / 2 {
        return Err(Error::OutOfRange(format!(
            "frequency index {f} invalid for even width {d}"
        )));
    }
    let angle = pos as f64 / 10000f64.powf(2.0 * f as f64 / d as f64);
    Ok(angle.sin_cos())
}

/// Full position encoding of width `d`: even slots hold sines, odd slots cosines.
pub fn position_encoding(pos: usize, d: usize) -> Vec<f64> {
    let mut p = vec![0.0; d];
    for f in 0..d.div_ceil(2) {
        let angle = pos as f64 / 10000f64.powf(2.0 * f as f64 / d as f64);
        let (s, c) = angle.sin_cos();
        p[2 * f] = s;
        if 2 * f + 1 < d {
            p[2 * f + 1] = c;
        }
    }
    p
}

/// Max minus mean of the scaled dot products between `q` and every key row.
pub fn sparsity_score(q: &[f64], keys: &[Vec<f64>], scale: f64) -> Result<f64> {
    if keys.is_empty() {
        return Err(Error::Empty("sparsity_score keys"));
    }
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for k in keys {
        if k.len() != q.len() {
            return Err(Error::shape("sparsity_score", "query and key widths differ"));
        }
        let s = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / scale;
        max = max.max(s);
        sum += s;
    }
    // Rounding can leave max − mean a hair below zero when all dots agree.
    Ok((max - sum / keys.len() as f64).max(0.0))
}

/// Sparsity of every row of a score matrix, using only unmasked keys.
fn row_sparsity(scores: &Tensor, key_mask: &[bool]) -> Vec<f64> {
    let (r, c) = (scores.shape()[0], scores.shape()[1]);
    let valid = key_mask.iter().filter(|&&m| m).count() as f64;
    (0..r)
        .map(|i| {
            let row = &scores.data()[i * c..(i + 1) * c];
            let mut max = f64::NEG_INFINITY;
            let mut sum = 0.0;
            for (v, _) in row.iter().zip(key_mask).filter(|(_, &m)| m) {
                max = max.max(*v);
                sum += v;
            }
            (max - sum / valid).max(0.0)
        })
        .collect()
}

/// Indices of the `n` valid queries with the largest sparsity, ties to the
/// lower index. Returned as a membership mask.
pub fn select_top_queries(sparsity: &[f64], query_mask: &[bool], n: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..sparsity.len()).filter(|&i| query_mask[i]).collect();
    order.sort_by(|&a, &b| sparsity[b].total_cmp(&sparsity[a]).then(a.cmp(&b)));
    let mut keep = vec![false; sparsity.len()];
    for &i in order.iter().take(n) {
        keep[i] = true;
    }
    keep
}

/// One head of top-query sparse attention recorded on `tape`.
///
/// `q`, `k`, `v` are `[n, head_dim]`. The `n_e` valid queries with the
/// highest sparsity score get a softmax over all valid keys; other valid
/// queries return the mean of the valid value rows; masked queries return
/// zeros. Also returns which queries were selected.
pub fn probsparse_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    n_e: usize,
    mask: &[bool],
) -> Result<(Var, Vec<bool>)> {
    let valid = mask.iter().filter(|&&m| m).count();
    if valid == 0 {
        return Err(Error::AllMasked);
    }
    if n_e > valid {
        return Err(Error::invalid(format!(
            "n_e = {n_e} exceeds the {valid} valid query positions"
        )));
    }
    let head_dim = tape.value(q).shape()[1];
    let raw = tape.matmul_nt(q, k)?;
    let scores = tape.scale(raw, 1.0 / (head_dim as f64).sqrt())?;
    let selected = select_top_queries(&row_sparsity(tape.value(scores), mask), mask, n_e);
    let weights = tape.masked_softmax_rows(scores, mask)?;

    let n = mask.len();
    let uniform: Vec<f64> = mask.iter().map(|&m| if m { 1.0 / valid as f64 } else { 0.0 }).collect();
    let fallback = Tensor::new(vec![n, n], uniform.repeat(n))?;
    let weights = tape.select_rows(weights, &selected, &fallback)?;
    let out = tape.matmul(weights, v)?;
    let out = tape.mask_rows(out, mask)?;
    Ok((out, selected))
}

/// Plain dense scaled-dot-product attention over the valid keys.
pub fn dense_attention(q: &Tensor, k: &Tensor, v: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let (n, dh) = q.matrix_dims()?;
    let (_, dv) = v.matrix_dims()?;
    let scale = (dh as f64).sqrt();
    let mut out = vec![0.0; n * dv];
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let logits: Vec<f64> = (0..n)
            .map(|j| q.row(i).iter().zip(k.row(j)).map(|(a, b)| a * b).sum::<f64>() / scale)
            .collect();
        let max = (0..n).filter(|&j| mask[j]).map(|j| logits[j]).fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = (0..n).map(|j| if mask[j] { (logits[j] - max).exp() } else { 0.0 }).collect();
        let z: f64 = w.iter().sum();
        for (j, wj) in w.iter().enumerate() {
            for c in 0..dv {
                out[i * dv + c] += wj / z * v.get2(j, c);
            }
        }
    }
    Tensor::new(vec![n, dv], out)
}
