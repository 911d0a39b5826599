//! Mixing, optimisation, training and inference.

mod enhance;
mod mix;
mod optim;
mod train;

pub use enhance::{Enhanced, Enhancer};
pub use mix::{load_manifest, materialize, mix_at_snr, MixSpec, Mixture, PEAK_LIMIT};
pub use optim::{lr_schedule, AdamW};
pub use train::{train, LossPoint, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::LossWeights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    /// Pairs per step.
    pub batch_size: usize,
    /// Random crop length for pairs longer than this.
    pub segment_secs: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub gamma: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Abort on the first non-finite activation instead of at the loss.
    pub finite_check: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_max: 0.0034,
            warmup_epochs: 5,
            total_epochs: 100,
            batch_size: 1,
            segment_secs: 2.0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            gamma: 0.5,
            seed: 0,
            checkpoint_every: 0,
            finite_check: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(self.lr_max >= 0.0 && self.lr_max.is_finite()) {
            return bad(format!("lr_max {} must be finite and non-negative", self.lr_max));
        }
        if self.total_epochs == 0 {
            return bad("total_epochs must be at least 1".into());
        }
        if self.warmup_epochs > self.total_epochs {
            return bad(format!(
                "warmup_epochs {} exceeds total_epochs {}",
                self.warmup_epochs, self.total_epochs
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.segment_secs > 0.0 && self.segment_secs.is_finite()) {
            return bad(format!("segment_secs {} must be positive", self.segment_secs));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)".into());
        }
        if self.eps.is_nan() || self.eps <= 0.0 || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("eps must be positive and weight_decay non-negative".into());
        }
        self.loss_weights().validate()
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { gamma: self.gamma }
    }
}
