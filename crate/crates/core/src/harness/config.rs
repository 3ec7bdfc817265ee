use super::data::Augment;
use crate::diffnet::loss::DEFAULT_TRIPLET_MARGIN;
use crate::diffnet::OptimConfig;
use crate::error::{Error, Result};
use crate::event::Micros;
use crate::simulator::DEFAULT_CONTRAST;

/// Loss weights, optimizer and schedule of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the structure-preservation term.
    pub alpha: f64,
    /// Weight of the reconstruction-degradation term.
    pub beta: f64,
    /// Weight of the identity term.
    pub gamma: f64,
    pub optim: OptimConfig,
    pub epochs: usize,
    /// Identities per batch.
    pub ids_per_batch: usize,
    /// Samples per identity in a batch.
    pub samples_per_id: usize,
    pub seed: u64,
    pub window_us: Micros,
    pub bins: usize,
    pub contrast: f64,
    pub margin: f64,
    pub augment: Augment,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            optim: OptimConfig::default(),
            epochs: 60,
            ids_per_batch: 6,
            samples_per_id: 4,
            seed: 7,
            window_us: 40_000,
            bins: 5,
            contrast: DEFAULT_CONTRAST,
            margin: DEFAULT_TRIPLET_MARGIN,
            augment: Augment::Off,
        }
    }
}

impl TrainConfig {
    pub fn batch_size(&self) -> usize {
        self.ids_per_batch * self.samples_per_id
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "{name} must be a finite non-negative weight, got {v}"
                )));
            }
        }
        self.optim.validate()?;
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.ids_per_batch < 2 || self.samples_per_id < 2 {
            return Err(Error::invalid(
                "batches need at least 2 identities with 2 samples each",
            ));
        }
        if self.window_us == 0 || self.bins == 0 {
            return Err(Error::invalid("window and bin count must be positive"));
        }
        if !(self.contrast > 0.0) {
            return Err(Error::invalid("contrast threshold must be positive"));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::invalid("triplet margin must be non-negative"));
        }
        Ok(())
    }
}
