use rand::seq::index::sample;
use rand::Rng;

use crate::encoder::argmax;
use crate::error::{Error, Result};
use crate::tensor::{softmax, Tensor};

/// Positions of distant-supervision positives and "no topic" negatives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistantSamples {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub warning: Option<String>,
}

/// Top `n_t` ranked documents become positives; `n_t` negatives are drawn
/// without replacement from documents outside the top `5·n_t` of the
/// ranking (or, if that leaves too few, outside the positives). A corpus
/// smaller than `2·n_t` shrinks both sides to half the corpus.
pub fn build_distant_supervision<R: Rng + ?Sized>(
    ranking: &[(usize, f64)],
    corpus_size: usize,
    n_t: usize,
    rng: &mut R,
) -> Result<DistantSamples> {
    if ranking.is_empty() {
        return Err(Error::Empty("topic ranking"));
    }
    if ranking.iter().any(|r| r.0 >= corpus_size) {
        return Err(Error::OutOfRange("ranked document outside the corpus".into()));
    }
    let mut warning = None;
    let mut n = n_t;
    if corpus_size < 2 * n_t {
        n = corpus_size / 2;
        warning = Some(format!("corpus of {corpus_size} is smaller than 2·{n_t}; using {n} per side"));
    }
    let positives: Vec<usize> = ranking.iter().take(n).map(|r| r.0).collect();
    let n = positives.len();
    let mut excluded = vec![false; corpus_size];
    for r in ranking.iter().take(5 * n) {
        excluded[r.0] = true;
    }
    let mut pool: Vec<usize> = (0..corpus_size).filter(|&i| !excluded[i]).collect();
    if pool.len() < n {
        excluded.iter_mut().for_each(|e| *e = false);
        positives.iter().for_each(|&p| excluded[p] = true);
        pool = (0..corpus_size).filter(|&i| !excluded[i]).collect();
    }
    let take = n.min(pool.len());
    let mut negatives: Vec<usize> = sample(rng, pool.len(), take).into_iter().map(|i| pool[i]).collect();
    negatives.sort_unstable();
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok(DistantSamples { positives, negatives, warning })
}

/// Linear softmax classifier over sentence embeddings; the last label means
/// "no topic".
#[derive(Clone, Debug, PartialEq)]
pub struct TopicHead {
    weight: Tensor,
    bias: Vec<f64>,
}

impl TopicHead {
    pub fn zeros(labels: usize, d: usize) -> Result<Self> {
        if labels < 2 || d == 0 {
            return Err(Error::invalid("topic head needs ≥ 2 labels and positive width"));
        }
        Ok(Self { weight: Tensor::zeros(&[labels, d]), bias: vec![0.0; labels] })
    }

    pub fn from_parts(weight: Tensor, bias: Vec<f64>) -> Result<Self> {
        let (l, _) = weight.matrix_dims()?;
        if bias.len() != l || weight.rank() != 2 {
            return Err(Error::shape("topic head", "bias length differs from label count"));
        }
        Ok(Self { weight, bias })
    }

    pub fn num_labels(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::shape("topic head", format!("embedding width {} vs {}", x.len(), self.dim())));
        }
        let logits: Vec<f64> = (0..self.num_labels())
            .map(|c| self.weight.row(c).iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[c])
            .collect();
        Ok(softmax(&Tensor::vector(logits)?, 0)?.into_data())
    }

    /// Most likely label (lowest on ties) and its probability.
    pub fn assign(&self, x: &[f64]) -> Result<(usize, f64)> {
        let p = self.probabilities(x)?;
        let l = argmax(&p);
        Ok((l, p[l]))
    }
}

/// Full-batch gradient descent on mean cross-entropy.
pub fn train_topic_head(samples: &[(Vec<f64>, usize)], labels: usize, epochs: usize, lr: f64) -> Result<TopicHead> {
    let first = samples.first().ok_or(Error::Empty("topic samples"))?;
    let d = first.0.len();
    let mut present: Vec<usize> = samples.iter().map(|s| s.1).collect();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::invalid("topic head training needs at least 2 distinct labels"));
    }
    if let Some(s) = samples.iter().find(|s| s.1 >= labels || s.0.len() != d) {
        return Err(Error::invalid(format!("bad topic sample: label {} width {}", s.1, s.0.len())));
    }
    let mut head = TopicHead::zeros(labels, d)?;
    let n = samples.len() as f64;
    for epoch in 0..epochs {
        let mut gw = vec![0.0; labels * d];
        let mut gb = vec![0.0; labels];
        let mut loss = 0.0;
        for (x, y) in samples {
            let p = head.probabilities(x)?;
            loss -= p[*y].max(1e-300).ln();
            for c in 0..labels {
                let e = p[c] - if c == *y { 1.0 } else { 0.0 };
                gb[c] += e;
                for (g, v) in gw[c * d..(c + 1) * d].iter_mut().zip(x) {
                    *g += e * v;
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("topic head loss at epoch {epoch}")));
        }
        for (w, g) in head.weight.data_mut().iter_mut().zip(&gw) {
            *w -= lr * g / n;
        }
        for (b, g) in head.bias.iter_mut().zip(&gb) {
            *b -= lr * g / n;
        }
        if !head.weight.is_finite() || head.bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Divergence(format!("topic head parameters at epoch {epoch}")));
        }
    }
    Ok(head)
}
