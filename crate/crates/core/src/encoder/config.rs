use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape and regularization settings of the transcript encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Sentence embedding width.
    pub d: usize,
    /// Maximum sentence count per transcript.
    pub max_len: usize,
    pub heads: usize,
    /// Queries per head that receive full attention.
    pub n_e: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub stacked_layers: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d: 512,
            max_len: 500,
            heads: 8,
            n_e: 10,
            num_classes: 3,
            dropout: 0.2,
            stacked_layers: 2,
        }
    }
}

/// Width bookkeeping for one stacked sparse-attention layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerDims {
    /// Feature width entering the layer.
    pub width: usize,
    pub head_dim: usize,
    /// Feature width after the head projection (and leaving the layer).
    pub out_width: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if self.d == 0 || self.max_len == 0 || self.heads == 0 || self.n_e == 0 {
            return fail(format!("encoder sizes must be positive: {self:?}"));
        }
        if self.stacked_layers == 0 {
            return fail("at least one stacked layer is required".into());
        }
        if self.num_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.n_e > self.max_len {
            return fail(format!("n_e = {} exceeds max_len = {}", self.n_e, self.max_len));
        }
        if self.d % (1 << self.stacked_layers) != 0 {
            return fail(format!(
                "d = {} must be divisible by 2^{} so every layer can halve its width",
                self.d, self.stacked_layers
            ));
        }
        for (i, l) in self.layers().iter().enumerate() {
            if l.width % self.heads != 0 {
                return fail(format!(
                    "layer {} width {} is not divisible by {} heads",
                    i + 1,
                    l.width,
                    self.heads
                ));
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerDims> {
        (0..self.stacked_layers)
            .map(|i| {
                let width = self.d >> i;
                LayerDims {
                    width,
                    head_dim: width / self.heads,
                    out_width: width / 2,
                }
            })
            .collect()
    }

    /// Width of the pooled transcript representation fed to the head.
    pub fn repr_width(&self) -> usize {
        self.d >> self.stacked_layers
    }
}
