use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimization settings for the supervised rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub weight_decay: f64,
    /// Weight of the symmetric KL term.
    pub alpha: f64,
    pub rounds: usize,
    pub epochs_per_round: usize,
    /// Epochs of each round after the first; 0 means `epochs_per_round`.
    #[serde(default)]
    pub augmented_epochs: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Average the cross-entropy over both dropout passes instead of using the first.
    pub average_ce: bool,
    /// Stop adding rounds once validation accuracy improves by less than 1e-3.
    pub early_stop: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            batch: 64,
            weight_decay: 0.01,
            alpha: 0.3,
            rounds: 2,
            epochs_per_round: 40,
            augmented_epochs: 0,
            seed: 0,
            checkpoint_every: 5,
            average_ce: false,
            early_stop: false,
        }
    }
}

impl TrainConfig {
    pub fn epochs(&self, round: usize) -> usize {
        if round > 1 && self.augmented_epochs > 0 {
            self.augmented_epochs
        } else {
            self.epochs_per_round
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if self.batch == 0 {
            return bad("batch must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be finite and non-negative");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and non-negative");
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive");
        }
        Ok(())
    }
}
