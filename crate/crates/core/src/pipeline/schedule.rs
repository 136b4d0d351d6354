use serde::{Deserialize, Serialize};

/// Base learning rates and decay rules of the three training stages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    /// Initial rate of both pretraining stages.
    pub pretrain: f64,
    /// Rate of the encoder-decoder group during joint training.
    pub alpha1: f64,
    /// Initial rate of the fusion group during joint training; the regressor
    /// group always runs at half of it.
    pub alpha3: f64,
    /// Epochs between decays.
    pub decay_every: usize,
    pub pretrain_decay: f64,
    pub alpha3_decay: f64,
    /// Number of alpha3 decays after which the rate stays fixed.
    pub alpha3_max_decays: usize,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            pretrain: 1e-4,
            alpha1: 1e-5,
            alpha3: 1e-3,
            decay_every: 50,
            pretrain_decay: 0.1,
            alpha3_decay: 0.25,
            alpha3_max_decays: 4,
        }
    }
}

impl LearningRates {
    pub fn pretrain_at(&self, epoch: usize) -> f64 {
        self.pretrain * self.pretrain_decay.powi((epoch / self.decay_every.max(1)) as i32)
    }

    pub fn alpha1_at(&self, _epoch: usize) -> f64 {
        self.alpha1
    }

    pub fn alpha3_at(&self, epoch: usize) -> f64 {
        let decays = (epoch / self.decay_every.max(1)).min(self.alpha3_max_decays);
        self.alpha3 * self.alpha3_decay.powi(decays as i32)
    }

    pub fn alpha2_at(&self, epoch: usize) -> f64 {
        self.alpha3_at(epoch) / 2.0
    }
}
