use rand::RngCore;

use crate::encoder::{forward_with, EncodedTranscript, EncoderConfig, Forward, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

const PROB_FLOOR: f64 = 1e-12;

/// `−Σ_c p(c)·ln q(c)` with `q` clamped at 1e-12.
pub fn cross_entropy(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape("cross_entropy", "prediction and target lengths differ"));
    }
    let ce = -target.iter().zip(pred).map(|(p, q)| p * q.max(PROB_FLOOR).ln()).sum::<f64>();
    if ce.is_finite() {
        Ok(ce)
    } else {
        Err(Error::NonFinite("cross_entropy"))
    }
}

/// `KL(p ‖ q)` with `q` clamped at 1e-12; zero-probability terms of `p` drop out.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("kl_divergence", "lengths differ"));
    }
    Ok(p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a.ln() - b.max(PROB_FLOOR).ln()))
        .sum())
}

/// Cross-entropy of `softmax(logits)` against `target`, recorded on the tape.
pub fn logits_cross_entropy(tape: &mut Tape, logits: Var, target: &[f64]) -> Result<Var> {
    let lp = tape.log_softmax_rows(logits)?;
    let neg: Vec<f64> = target.iter().map(|t| -t).collect();
    tape.weighted_sum(lp, &neg)
}

/// `KL(F₁‖F₂) + KL(F₂‖F₁)` between the softmax outputs of two logit rows.
pub fn symmetric_kl(tape: &mut Tape, logits_a: Var, logits_b: Var) -> Result<Var> {
    let la = tape.log_softmax_rows(logits_a)?;
    let lb = tape.log_softmax_rows(logits_b)?;
    let pa = tape.exp(la)?;
    let pb = tape.exp(lb)?;
    let dp = tape.sub(pa, pb)?;
    let dl = tape.sub(la, lb)?;
    let prod = tape.mul(dp, dl)?;
    tape.sum(prod)
}

/// Scalar pieces of one regularized loss evaluation.
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub ce: f64,
    pub kl: f64,
    /// The first dropout pass.
    pub first: Forward,
}

/// `L + (α/2)·[KL(F₁‖F₂) + KL(F₂‖F₁)]` over two dropout passes sharing the
/// parameter leaves `pv`. The cross-entropy uses the first pass, or the mean
/// of both when `average_ce` is set. With `α = 0` and no averaging only one
/// pass is recorded.
#[allow(clippy::too_many_arguments)]
pub fn kl_regularized_loss(
    tape: &mut Tape,
    cfg: &EncoderConfig,
    pv: &[Var],
    x: &EncodedTranscript,
    target: &[f64],
    alpha: f64,
    average_ce: bool,
    rng: &mut dyn RngCore,
) -> Result<LossTerms> {
    if target.len() != cfg.num_classes {
        return Err(Error::shape("kl_regularized_loss", "target length differs from class count"));
    }
    let first = forward_with(tape, cfg, pv.to_vec(), x, Mode::Train(&mut *rng))?;
    let ce1 = logits_cross_entropy(tape, first.logits, target)?;
    if alpha == 0.0 && !average_ce {
        let ce = tape.value(ce1).data()[0];
        return Ok(LossTerms { total: ce1, ce, kl: 0.0, first });
    }
    let second = forward_with(tape, cfg, pv.to_vec(), x, Mode::Train(&mut *rng))?;
    let ce = if average_ce {
        let ce2 = logits_cross_entropy(tape, second.logits, target)?;
        let both = tape.add(ce1, ce2)?;
        tape.scale(both, 0.5)?
    } else {
        ce1
    };
    let kl = symmetric_kl(tape, first.logits, second.logits)?;
    let reg = tape.scale(kl, alpha / 2.0)?;
    let total = tape.add(ce, reg)?;
    Ok(LossTerms {
        total,
        ce: tape.value(ce).data()[0],
        kl: tape.value(kl).data()[0],
        first,
    })
}
