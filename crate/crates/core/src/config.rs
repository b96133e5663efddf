//! `key = value` pipeline configuration files.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::counterfactual::{AugmentConfig, GradientSubset};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::topic::TopicConfig;
use crate::training::TrainConfig;

/// Every setting of a pipeline run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub topic: TopicConfig,
}

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parse { line, msg: format!("bad value {value:?} for {key}") })
}

impl PipelineConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment;
    /// unknown or repeated keys are errors.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| Error::Parse { line, msg: format!("expected key = value, got {body:?}") })?;
            let (key, v) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Parse { line, msg: format!("repeated key {key}") });
            }
            match key {
                "d" => c.encoder.d = parse(line, key, v)?,
                "max_len" => c.encoder.max_len = parse(line, key, v)?,
                "heads" => c.encoder.heads = parse(line, key, v)?,
                "n_e" => c.encoder.n_e = parse(line, key, v)?,
                "num_classes" => c.encoder.num_classes = parse(line, key, v)?,
                "dropout" => c.encoder.dropout = parse(line, key, v)?,
                "stacked_layers" => c.encoder.stacked_layers = parse(line, key, v)?,
                "lr" => c.train.lr = parse(line, key, v)?,
                "batch" => c.train.batch = parse(line, key, v)?,
                "weight_decay" => c.train.weight_decay = parse(line, key, v)?,
                "alpha" => c.train.alpha = parse(line, key, v)?,
                "rounds" => c.train.rounds = parse(line, key, v)?,
                "epochs_per_round" => c.train.epochs_per_round = parse(line, key, v)?,
                "augmented_epochs" => c.train.augmented_epochs = parse(line, key, v)?,
                "seed" => c.train.seed = parse(line, key, v)?,
                "checkpoint_every" => c.train.checkpoint_every = parse(line, key, v)?,
                "average_ce" => c.train.average_ce = parse(line, key, v)?,
                "early_stop" => c.train.early_stop = parse(line, key, v)?,
                "n_c" => c.augment.n_c = parse(line, key, v)?,
                "k_p" => c.augment.k_p = parse(line, key, v)?,
                "k_n" => c.augment.k_n = parse(line, key, v)?,
                "gradient_subset" => c.augment.subset = parse(line, key, v)?,
                "augment_seed" => c.augment.seed = parse(line, key, v)?,
                "n_t" => c.topic.n_t = parse(line, key, v)?,
                "topic_epochs" => c.topic.epochs = parse(line, key, v)?,
                "topic_lr" => c.topic.lr = parse(line, key, v)?,
                "bm25_k1" => c.topic.k1 = parse(line, key, v)?,
                "bm25_b" => c.topic.b = parse(line, key, v)?,
                other => return Err(Error::Parse { line, msg: format!("unknown key {other}") }),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.train.validate()?;
        if self.augment.n_c == 0 {
            return Err(Error::invalid("n_c must be positive"));
        }
        Ok(())
    }

    /// Writes every key; [`PipelineConfig::parse_str`] reads it back unchanged.
    pub fn to_kv(&self) -> String {
        let (e, t, a, p) = (&self.encoder, &self.train, &self.augment, &self.topic);
        let subset = match a.subset {
            GradientSubset::HeadAndProjection => "head_and_projection",
            GradientSubset::All => "all",
        };
        let mut s = String::new();
        let rows: [(&str, String); 28] = [
            ("d", e.d.to_string()),
            ("max_len", e.max_len.to_string()),
            ("heads", e.heads.to_string()),
            ("n_e", e.n_e.to_string()),
            ("num_classes", e.num_classes.to_string()),
            ("dropout", format!("{:?}", e.dropout)),
            ("stacked_layers", e.stacked_layers.to_string()),
            ("lr", format!("{:?}", t.lr)),
            ("batch", t.batch.to_string()),
            ("weight_decay", format!("{:?}", t.weight_decay)),
            ("alpha", format!("{:?}", t.alpha)),
            ("rounds", t.rounds.to_string()),
            ("epochs_per_round", t.epochs_per_round.to_string()),
            ("augmented_epochs", t.augmented_epochs.to_string()),
            ("seed", t.seed.to_string()),
            ("checkpoint_every", t.checkpoint_every.to_string()),
            ("average_ce", t.average_ce.to_string()),
            ("early_stop", t.early_stop.to_string()),
            ("n_c", a.n_c.to_string()),
            ("k_p", a.k_p.to_string()),
            ("k_n", a.k_n.to_string()),
            ("gradient_subset", subset.to_string()),
            ("augment_seed", a.seed.to_string()),
            ("n_t", p.n_t.to_string()),
            ("topic_epochs", p.epochs.to_string()),
            ("topic_lr", format!("{:?}", p.lr)),
            ("bm25_k1", format!("{:?}", p.k1)),
            ("bm25_b", format!("{:?}", p.b)),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_round_trips() {
        let c = PipelineConfig::parse_str("# desk scale\nd = 32\nmax_len = 20 # sentences\n\nlr=0.001\ngradient_subset = all\nearly_stop = true\naugmented_epochs = 7\n").unwrap();
        assert_eq!(c.train.epochs(1), TrainConfig::default().epochs_per_round);
        assert_eq!(c.train.epochs(2), 7);
        assert_eq!(c.encoder.d, 32);
        assert_eq!(c.encoder.max_len, 20);
        assert_eq!(c.train.lr, 0.001);
        assert_eq!(c.augment.subset, GradientSubset::All);
        assert!(c.train.early_stop);
        assert_eq!(c.train.batch, TrainConfig::default().batch);
        assert_eq!(PipelineConfig::parse_str(&c.to_kv()).unwrap(), c);
        assert_eq!(PipelineConfig::parse_str("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn rejects_bad_lines() {
        for (text, line) in [("d = 32\nbogus = 1", 2), ("lr = fast", 1), ("d 32", 1), ("d = 8\nd = 16", 2)] {
            match PipelineConfig::parse_str(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(PipelineConfig::parse_str("heads = 7").is_err());
    }
}
