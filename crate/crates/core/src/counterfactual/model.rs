use serde::{Deserialize, Serialize};

use crate::encoder::{forward_with, EncodedTranscript, EncoderConfig, Mode, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};
use crate::training::logits_cross_entropy;

/// A classifier whose loss gradients can be taken at arbitrary parameters.
pub trait LossModel: Sync {
    type Input: Sync + ?Sized;

    /// Names of the parameter arrays gradients are taken over, in order.
    fn tracked(&self, params: &ParamStore) -> Vec<String>;

    /// Fails when `params` cannot drive this model.
    fn check_params(&self, params: &ParamStore) -> Result<()>;

    fn log_probs(&self, params: &ParamStore, x: &Self::Input) -> Result<Vec<f64>>;

    /// Cross-entropy at `label` and its gradient, flattened over [`LossModel::tracked`].
    fn loss_grad(&self, params: &ParamStore, x: &Self::Input, label: usize) -> Result<(f64, Vec<f64>)>;
}

/// Which encoder parameters influence scores are computed over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientSubset {
    /// The class head plus the projection of the last stacked layer.
    HeadAndProjection,
    All,
}

impl std::str::FromStr for GradientSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head_and_projection" => Ok(Self::HeadAndProjection),
            "all" => Ok(Self::All),
            other => Err(Error::invalid(format!("unknown gradient subset {other}"))),
        }
    }
}

/// The transcript encoder seen as a [`LossModel`].
#[derive(Clone, Debug)]
pub struct EncoderModel {
    pub cfg: EncoderConfig,
    pub subset: GradientSubset,
}

impl EncoderModel {
    pub fn new(cfg: EncoderConfig, subset: GradientSubset) -> Self {
        Self { cfg, subset }
    }

    fn is_tracked(&self, name: &str) -> bool {
        match self.subset {
            GradientSubset::All => true,
            GradientSubset::HeadAndProjection => {
                name.starts_with("head.") || name == format!("sp{}.proj", self.cfg.stacked_layers)
            }
        }
    }
}

impl LossModel for EncoderModel {
    type Input = EncodedTranscript;

    fn tracked(&self, params: &ParamStore) -> Vec<String> {
        params.names().into_iter().filter(|n| self.is_tracked(n)).map(str::to_string).collect()
    }

    fn check_params(&self, params: &ParamStore) -> Result<()> {
        let layout = crate::encoder::canonical_layout(&self.cfg);
        let ok = layout.len() == params.len()
            && layout.iter().zip(params.iter()).all(|((n, s), (pn, t))| n == pn && s.as_slice() == t.shape());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("checkpoint does not match the encoder configuration"))
        }
    }

    fn log_probs(&self, params: &ParamStore, x: &EncodedTranscript) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let pv = crate::encoder::param_leaves(&mut tape, params, false)?;
        let f = forward_with(&mut tape, &self.cfg, pv, x, Mode::Eval)?;
        let lp = tape.log_softmax_rows(f.logits)?;
        Ok(tape.value(lp).data().to_vec())
    }

    fn loss_grad(&self, params: &ParamStore, x: &EncodedTranscript, label: usize) -> Result<(f64, Vec<f64>)> {
        if label >= self.cfg.num_classes {
            return Err(Error::OutOfRange(format!("label {label}")));
        }
        let mut tape = Tape::new();
        let pv = params
            .iter()
            .map(|(n, t)| tape.leaf(t.clone(), self.is_tracked(n)))
            .collect::<Result<Vec<_>>>()?;
        let f = forward_with(&mut tape, &self.cfg, pv.clone(), x, Mode::Eval)?;
        let mut target = vec![0.0; self.cfg.num_classes];
        target[label] = 1.0;
        let loss = logits_cross_entropy(&mut tape, f.logits, &target)?;
        let value = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        let mut flat = Vec::new();
        for (v, (n, t)) in pv.iter().zip(params.iter()) {
            if self.is_tracked(n) {
                flat.extend(grads.get_or_zeros(*v, t.len()));
            }
        }
        Ok((value, flat))
    }
}

/// Multinomial logistic regression `softmax(W·x + b)`, parameters `weight`
/// `[classes, dim]` and `bias` `[classes]`.
#[derive(Clone, Copy, Debug)]
pub struct SoftmaxRegression {
    pub classes: usize,
    pub dim: usize,
}

impl SoftmaxRegression {
    pub fn zeros(&self) -> ParamStore {
        let mut p = ParamStore::new();
        p.push("weight", Tensor::zeros(&[self.classes, self.dim]));
        p.push("bias", Tensor::zeros(&[self.classes]));
        p
    }

    pub fn num_params(&self) -> usize {
        self.classes * (self.dim + 1)
    }

    fn probs(&self, params: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        if x.len() != self.dim {
            return Err(Error::shape("softmax regression", "input width differs"));
        }
        let w = params.tensor(0);
        let b = params.tensor(1).data();
        let logits: Vec<f64> = (0..self.classes)
            .map(|c| w.row(c).iter().zip(x).map(|(p, q)| p * q).sum::<f64>() + b[c])
            .collect();
        Ok(crate::tensor::softmax(&Tensor::vector(logits)?, 0)?.into_data())
    }
}

impl LossModel for SoftmaxRegression {
    type Input = [f64];

    fn tracked(&self, _: &ParamStore) -> Vec<String> {
        vec!["weight".into(), "bias".into()]
    }

    fn check_params(&self, params: &ParamStore) -> Result<()> {
        let ok = params.len() == 2
            && params.get("weight").is_some_and(|t| t.shape() == [self.classes, self.dim])
            && params.get("bias").is_some_and(|t| t.shape() == [self.classes]);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("softmax regression needs weight [classes, dim] and bias [classes]"))
        }
    }

    fn log_probs(&self, params: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.probs(params, x)?.into_iter().map(|p| p.max(1e-300).ln()).collect())
    }

    fn loss_grad(&self, params: &ParamStore, x: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
        let p = self.probs(params, x)?;
        let mut gw = Vec::with_capacity(self.classes * self.dim);
        let mut gb = Vec::with_capacity(self.classes);
        for (c, pc) in p.iter().enumerate() {
            let e = pc - if c == label { 1.0 } else { 0.0 };
            gw.extend(x.iter().map(|v| e * v));
            gb.push(e);
        }
        gw.extend(gb);
        Ok((-p[label].max(1e-300).ln(), gw))
    }
}
