//! Accuracy, confusion matrices and the random and ticker-following baselines.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::shape("accuracy", format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::Empty("labels"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Accuracy of predicting `floor(3u)` for uniform `u`, one draw per label.
pub fn random_baseline<R: Rng + ?Sized>(labels: &[usize], classes: usize, rng: &mut R) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("labels"));
    }
    let preds: Vec<usize> = labels
        .iter()
        .map(|_| ((rng.gen::<f64>() * classes as f64) as usize).min(classes - 1))
        .collect();
    accuracy(&preds, labels)
}

/// Accuracy of repeating each ticker's previous label. `history` holds
/// `(ticker, label)` in chronological order; the first observation of each
/// ticker has no prediction and is skipped. `None` when nothing is judged.
pub fn ticker_following_baseline<S: AsRef<str>>(history: &[(S, usize)]) -> Option<f64> {
    let mut last: HashMap<&str, usize> = HashMap::new();
    let (mut hits, mut total) = (0usize, 0usize);
    for (ticker, label) in history {
        if let Some(prev) = last.insert(ticker.as_ref(), *label) {
            total += 1;
            hits += usize::from(prev == *label);
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub random_baseline: Option<f64>,
    pub ticker_following: Option<f64>,
}

impl EvalReport {
    pub fn new(split: impl Into<String>, predictions: &[usize], labels: &[usize], classes: usize) -> Result<Self> {
        let accuracy = accuracy(predictions, labels)?;
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&p, &l) in predictions.iter().zip(labels) {
            if p >= classes || l >= classes {
                return Err(Error::OutOfRange(format!("class {} of {classes}", p.max(l))));
            }
            confusion[l][p] += 1;
        }
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = (0..classes).map(|c| ratio(confusion[c][c], (0..classes).map(|t| confusion[t][c]).sum())).collect();
        let recall = (0..classes).map(|c| ratio(confusion[c][c], confusion[c].iter().sum())).collect();
        Ok(Self {
            split: split.into(),
            accuracy,
            precision,
            recall,
            confusion,
            random_baseline: None,
            ticker_following: None,
        })
    }

    /// Plain-text table with one row per method.
    pub fn table(&self, method: &str) -> String {
        let mut s = String::new();
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |a| format!("{a:.4}"));
        let _ = writeln!(s, "{:<24} {:>10}", "Method", self.split);
        let _ = writeln!(s, "{}", "-".repeat(35));
        let _ = writeln!(s, "{:<24} {:>10}", "RB", fmt(self.random_baseline));
        let _ = writeln!(s, "{:<24} {:>10}", "TFB", fmt(self.ticker_following));
        let _ = writeln!(s, "{:<24} {:>10}", method, fmt(Some(self.accuracy)));
        s
    }
}
