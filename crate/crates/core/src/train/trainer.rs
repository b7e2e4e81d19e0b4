use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{cosine_lr, TrainConfig};
use super::optim::{optimizer_step, AdamHyper, AdamState, StepOutcome};
use crate::dataset::augment::{augment_observation, collapse_history};
use crate::dataset::generate::derive_seed;
use crate::dataset::{all_samples, compute_norm_stats, Dataset, Split, TrainingSample};
use crate::error::{Error, Result};
use crate::nn::Mat;
use crate::policy::{save_policy, LossParts, ModelConfig, Policy};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LAST_CHECKPOINT_FILE: &str = "last.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

/// Mean loss components and phase accuracy over a sample set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub loss_total: f64,
    pub loss_action: f64,
    pub loss_phase: f64,
    pub phase_acc: f64,
    pub n_samples: usize,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_action: f64,
    pub loss_phase: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub skipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<SplitMetrics>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation checkpoint (the final weights when there is no validation split).
    pub checkpoint: PathBuf,
    pub best_step: usize,
    pub log: Vec<LogEntry>,
    /// Policy holding the final weights.
    pub policy: Policy,
    pub skipped_steps: usize,
}

/// Teacher-forced mean losses plus phase accuracy of the predicted phase.
pub fn evaluate_split(policy: &Policy, samples: &[TrainingSample]) -> Result<SplitMetrics> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation samples"));
    }
    let mut sum = LossParts::default();
    let mut correct = 0usize;
    for s in samples {
        sum.accumulate(&policy.loss_value(s)?);
        let out = policy.forward(s.input(), Some(s.phase))?;
        if out.phase.predicted == s.phase {
            correct += 1;
        }
    }
    let n = samples.len() as f64;
    let mean = sum.scaled(1.0 / n);
    Ok(SplitMetrics {
        loss_total: mean.total,
        loss_action: mean.action,
        loss_phase: mean.phase,
        phase_acc: correct as f64 / n,
        n_samples: samples.len(),
    })
}

/// Checks that the stored statistics are those of the training split.
pub fn check_dataset(ds: &Dataset, model: &ModelConfig) -> Result<()> {
    if ds.episodes.len() != ds.meta.episodes.len() {
        return Err(Error::Dataset("episode list disagrees with meta".into()));
    }
    ds.stats.validate()?;
    let train = ds.episodes_in(Split::Train);
    if train.is_empty() {
        return Err(Error::Dataset("dataset has no training episodes".into()));
    }
    let recomputed = compute_norm_stats(train)?;
    if !recomputed.approx_eq(&ds.stats, 1e-9) {
        return Err(Error::Dataset(format!(
            "stored stats {:?} do not match the training split {:?}",
            ds.stats, recomputed
        )));
    }
    if model.use_grid && !ds.meta.with_grid {
        return Err(Error::Dataset(
            "model uses grids but the dataset has none".into(),
        ));
    }
    Ok(())
}

/// Minibatch AdamW training. Writes the training log, the best-validation
/// checkpoint and the final weights to `out_dir`.
pub fn train_loop(
    ds: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    check_dataset(ds, model_cfg)?;
    let train = all_samples(ds.episodes_in(Split::Train), &ds.stats)?;
    let val = all_samples(ds.episodes_in(Split::Val), &ds.stats)?;
    if train.is_empty() {
        return Err(Error::Dataset("training split yields no samples".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join(TRAIN_LOG_FILE);
    let file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log_file = BufWriter::new(file);

    let mut policy = Policy::new(model_cfg.clone())?;
    let mut adam = AdamState::new(policy.params());
    let hyper = AdamHyper::from(cfg);
    let best_path = out_dir.join(CHECKPOINT_FILE);

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut epoch = 0u64;
    let mut best = f64::INFINITY;
    let mut best_step = 0;
    let mut skipped_steps = 0;
    let mut log = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let lr = cosine_lr(step, cfg);
        let mut aug_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1 << 32 | step as u64));
        let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2 << 32 | step as u64));
        let mut grads: Vec<Mat> = policy.params().zeros_like();
        let mut parts = LossParts::default();
        for _ in 0..cfg.batch {
            if cursor == order.len() {
                order = (0..train.len()).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch)));
                epoch += 1;
                cursor = 0;
            }
            let mut base = std::borrow::Cow::Borrowed(&train[order[cursor]]);
            cursor += 1;
            if drop_rng.gen::<f64>() < cfg.history_dropout {
                base = std::borrow::Cow::Owned(collapse_history(&base));
            }
            let augmented;
            let sample = if cfg.augment {
                augmented = TrainingSample {
                    obs_history: base
                        .obs_history
                        .iter()
                        .map(|o| augment_observation(o, &mut aug_rng))
                        .collect(),
                    ..base.as_ref().clone()
                };
                &augmented
            } else {
                base.as_ref()
            };
            let (p, g) = policy.loss_and_grad_with(sample, cfg.teacher_forcing)?;
            parts.accumulate(&p);
            for (acc, gi) in grads.iter_mut().zip(&g) {
                acc.add_assign(gi);
            }
        }
        let inv = 1.0 / cfg.batch as f64;
        grads.iter_mut().for_each(|g| g.scale_assign(inv));
        let parts = parts.scaled(inv);
        let skipped = optimizer_step(policy.params_mut(), &grads, &mut adam, lr, &hyper)
            == StepOutcome::SkippedNonFinite;
        if skipped {
            skipped_steps += 1;
            tracing::warn!(step, "non-finite gradient, update skipped");
        }

        let last = step + 1 == cfg.steps;
        let val_metrics = if !val.is_empty() && ((step + 1) % cfg.eval_every == 0 || last) {
            let m = evaluate_split(&policy, &val)?;
            if m.loss_total < best {
                best = m.loss_total;
                best_step = step + 1;
                save_policy(&best_path, &policy, &ds.stats, step + 1)?;
            }
            tracing::info!(
                step = step + 1,
                val_loss = m.loss_total,
                val_phase_acc = m.phase_acc,
                "validation"
            );
            Some(m)
        } else {
            None
        };
        let entry = LogEntry {
            step,
            lr,
            loss_total: parts.total,
            loss_action: parts.action,
            loss_phase: parts.phase,
            skipped,
            val: val_metrics,
        };
        let line = serde_json::to_string(&entry)?;
        writeln!(log_file, "{line}").map_err(|e| Error::io(&log_path, e))?;
        log.push(entry);
    }
    log_file.flush().map_err(|e| Error::io(&log_path, e))?;

    save_policy(
        &out_dir.join(LAST_CHECKPOINT_FILE),
        &policy,
        &ds.stats,
        cfg.steps,
    )?;
    if val.is_empty() {
        save_policy(&best_path, &policy, &ds.stats, cfg.steps)?;
        best_step = cfg.steps;
    }
    Ok(TrainOutcome {
        checkpoint: best_path,
        best_step,
        log,
        policy,
        skipped_steps,
    })
}
