use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::dataset::sample::ChunkRows;
use crate::error::{Error, Result};
use crate::magsim::PhaseLabel;
use crate::nn::{smooth_l1_value, Mat, Tape, Var};

/// Loss components of one sample or the mean over a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub action: f64,
    pub phase: f64,
}

impl LossParts {
    pub fn accumulate(&mut self, o: &LossParts) {
        self.total += o.total;
        self.action += o.action;
        self.phase += o.phase;
    }

    pub fn scaled(self, s: f64) -> LossParts {
        LossParts {
            total: self.total * s,
            action: self.action * s,
            phase: self.phase * s,
        }
    }
}

/// Mean elementwise smooth-L1 between equally shaped arrays.
pub fn smooth_l1(pred: &[f64], target: &[f64], beta: f64) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "prediction has {} values, target has {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("smooth-L1 of empty arrays"));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "beta must be positive, got {beta}"
        )));
    }
    Ok(smooth_l1_value(pred, target, beta))
}

/// Cross-entropy of a logit vector against a class index.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// `L = L_action + lambda * L_phase` from plain values.
pub fn compute_loss(
    pred: &Mat,
    target: &Mat,
    logits: [f64; 2],
    phase: i64,
    cfg: &ModelConfig,
) -> Result<LossParts> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction is {:?}, target is {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let label = PhaseLabel::try_from(phase)?;
    let action = smooth_l1(&pred.data, &target.data, cfg.beta)?;
    let ph = cross_entropy(&logits, label.index());
    Ok(LossParts {
        total: action + cfg.lambda_phase * ph,
        action,
        phase: ph,
    })
}

/// Tape version of [`compute_loss`].
pub fn joint_loss_on(
    t: &mut Tape,
    chunk: Var,
    logits: Var,
    target: &ChunkRows,
    phase: PhaseLabel,
    cfg: &ModelConfig,
) -> Result<(Var, LossParts)> {
    let target = Mat::from_rows(target);
    if t.value(chunk).shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction is {:?}, target is {:?}",
            t.value(chunk).shape(),
            target.shape()
        )));
    }
    let la = t.smooth_l1(chunk, target, cfg.beta);
    let lp = t.cross_entropy(logits, phase.index());
    let weighted = t.scale(lp, cfg.lambda_phase);
    let total = t.add(la, weighted);
    let parts = LossParts {
        total: t.scalar(total),
        action: t.scalar(la),
        phase: t.scalar(lp),
    };
    Ok((total, parts))
}
