use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub seed: u64,
    /// Validate every this many steps (and after the last step).
    pub eval_every: usize,
    pub augment: bool,
    /// Probability of replacing a sample's history with copies of its
    /// current frame, as the executor does before a history exists.
    #[serde(default)]
    pub history_dropout: f64,
    /// Condition the decoder on the labelled phase instead of the predicted one.
    pub teacher_forcing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch: 16,
            lr_max: 1e-3,
            lr_min: 0.0,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            eps: 1e-8,
            seed: 0,
            eval_every: 250,
            augment: true,
            history_dropout: 0.5,
            teacher_forcing: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 || self.eval_every == 0 {
            return Err(Error::InvalidConfig(
                "steps, batch and eval_every must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.history_dropout) {
            return Err(Error::InvalidConfig(format!(
                "history_dropout must lie in [0, 1], got {}",
                self.history_dropout
            )));
        }
        if !(self.lr_min >= 0.0 && self.lr_max > self.lr_min) {
            return Err(Error::InvalidConfig(format!(
                "need lr_max > lr_min >= 0, got {} and {}",
                self.lr_max, self.lr_min
            )));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2))
            || !(self.eps > 0.0)
            || !(self.weight_decay >= 0.0)
        {
            return Err(Error::InvalidConfig(
                "invalid optimizer hyperparameters".into(),
            ));
        }
        Ok(())
    }
}

/// `lr_min + (lr_max - lr_min) (1 + cos(pi step / steps)) / 2`
pub fn cosine_lr(step: usize, cfg: &TrainConfig) -> f64 {
    let frac = step.min(cfg.steps) as f64 / cfg.steps as f64;
    cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}
