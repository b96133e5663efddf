//! Supervised rounds with KL-regularized loss, AdamW and checkpoint traces.

mod config;
mod loss;
mod optim;
mod trace;

pub use config::TrainConfig;
pub use loss::{cross_entropy, kl_divergence, kl_regularized_loss, logits_cross_entropy, symmetric_kl, LossTerms};
pub use optim::AdamW;
pub use trace::{Checkpoint, CheckpointTrace};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{argmax, param_leaves, EncodedTranscript, Encoder, EncoderConfig, ParamStore};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, stream};
use crate::tensor::Tape;

/// One training instance: an encoded transcript and its target distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Unique within a pool, e.g. a transcript id or a perturbation key.
    pub key: String,
    pub x: EncodedTranscript,
    pub target: Vec<f64>,
}

impl Sample {
    pub fn labeled(key: impl Into<String>, x: EncodedTranscript, label: usize, classes: usize) -> Self {
        let mut target = vec![0.0; classes];
        target[label] = 1.0;
        Self { key: key.into(), x, target }
    }

    /// The class of a one-hot target.
    pub fn label(&self) -> Option<usize> {
        let hot = self.target.iter().filter(|&&t| t == 1.0).count();
        let zero = self.target.iter().filter(|&&t| t == 0.0).count();
        (hot == 1 && hot + zero == self.target.len()).then(|| argmax(&self.target))
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub round: usize,
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
}

/// Result of [`train_round`].
#[derive(Clone, Debug)]
pub struct RoundOutput {
    pub trace: CheckpointTrace,
    pub metrics: Vec<MetricRecord>,
}

/// Loss and per-array gradients for one sample.
pub fn sample_gradient(
    cfg: &EncoderConfig,
    params: &ParamStore,
    sample: &Sample,
    alpha: f64,
    average_ce: bool,
    seed: u64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let pv = param_leaves(&mut tape, params, true)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let terms = kl_regularized_loss(&mut tape, cfg, &pv, &sample.x, &sample.target, alpha, average_ce, &mut rng)?;
    let loss = tape.value(terms.total).data()[0];
    let grads = tape.backward(terms.total)?;
    let per_array = pv.iter().zip(params.iter()).map(|(&v, (_, t))| grads.get_or_zeros(v, t.len())).collect();
    Ok((loss, per_array))
}

/// Mean evaluation-mode cross-entropy over `samples` and accuracy over the
/// one-hot ones (NaN when there are none).
pub fn evaluate_samples(encoder: &Encoder, samples: &[Sample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let rows: Vec<(f64, Option<bool>)> = samples
        .par_iter()
        .map(|s| {
            let p = encoder.predict_proba(&s.x)?;
            Ok((cross_entropy(&p, &s.target)?, s.label().map(|l| argmax(&p) == l)))
        })
        .collect::<Result<_>>()?;
    let loss = rows.iter().map(|r| r.0).sum::<f64>() / rows.len() as f64;
    let judged: Vec<bool> = rows.iter().filter_map(|r| r.1).collect();
    let acc = if judged.is_empty() {
        f64::NAN
    } else {
        judged.iter().filter(|&&c| c).count() as f64 / judged.len() as f64
    };
    Ok((loss, acc))
}

/// Trains `encoder` in place for `cfg.epochs(round)` epochs over `pool`.
///
/// Mini-batches are drawn from a seeded shuffle; per-sample gradients may be
/// computed in parallel but are summed in sample order. A checkpoint is
/// kept every `cfg.checkpoint_every` epochs and after the last epoch.
pub fn train_round(
    encoder: &mut Encoder,
    pool: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    round: usize,
) -> Result<RoundOutput> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::Empty("training pool"));
    }
    let classes = encoder.config().num_classes;
    if let Some(s) = pool.iter().chain(val).find(|s| s.target.len() != classes) {
        return Err(Error::shape("train_round", format!("sample {} has {} targets", s.key, s.target.len())));
    }
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut trace = CheckpointTrace::new();
    let mut metrics = Vec::new();
    let chunk = rayon::current_num_threads().max(1) * 2;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let epochs = cfg.epochs(round);

    for epoch in 1..=epochs {
        order.sort_unstable();
        order.shuffle(&mut stream(cfg.seed, &[round as u64, epoch as u64, 0]));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch) {
            let mut sum: Vec<Vec<f64>> = encoder.params().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            for part in batch.chunks(chunk) {
                let results: Vec<(f64, Vec<Vec<f64>>)> = part
                    .par_iter()
                    .map(|&i| {
                        let seed = derive_seed(cfg.seed, &[round as u64, epoch as u64, 1, i as u64]);
                        sample_gradient(encoder.config(), encoder.params(), &pool[i], cfg.alpha, cfg.average_ce, seed)
                    })
                    .collect::<Result<_>>()?;
                for (loss, grads) in results {
                    if !loss.is_finite() {
                        return Err(Error::Divergence(format!("round {round} epoch {epoch}: loss {loss}")));
                    }
                    epoch_loss += loss;
                    for (acc, g) in sum.iter_mut().zip(grads) {
                        acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                    }
                }
            }
            let n = batch.len() as f64;
            sum.iter_mut().flatten().for_each(|g| *g /= n);
            opt.step(encoder.params_mut(), &sum)?;
        }
        let train_loss = epoch_loss / pool.len() as f64;
        let (_, train_acc) = evaluate_samples(encoder, pool)?;
        log::info!("round {round} epoch {epoch}: loss {train_loss:.4} train acc {train_acc:.4}");
        metrics.push(MetricRecord { round, epoch, split: "train".into(), loss: train_loss, accuracy: train_acc });
        if !val.is_empty() {
            let (loss, accuracy) = evaluate_samples(encoder, val)?;
            metrics.push(MetricRecord { round, epoch, split: "val".into(), loss, accuracy });
        }
        if epoch % cfg.checkpoint_every == 0 || epoch == epochs {
            trace.push(Checkpoint { step: opt.steps(), epoch, lr: cfg.lr, params: encoder.params().clone() })?;
        }
    }
    if trace.is_empty() {
        trace.push(Checkpoint { step: 0, epoch: 0, lr: cfg.lr, params: encoder.params().clone() })?;
    }
    Ok(RoundOutput { trace, metrics })
}
