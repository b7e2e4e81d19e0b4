use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingSample;
use crate::error::Result;
use crate::policy::{ModelConfig, Policy};

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so entries whose true gradient
/// is zero are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-6;
/// Minimum distance kept between any residual and the smooth-L1 transition.
pub const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub name: String,
    pub n: usize,
    pub max_rel_error: f64,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_group: String,
    pub groups: Vec<GroupCheck>,
    pub n_groups_total: usize,
    pub n_scalars: usize,
    pub nudged_targets: usize,
}

impl GradCheckReport {
    pub fn coverage(&self) -> f64 {
        self.groups.len() as f64 / self.n_groups_total as f64
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Moves targets whose residual sits within [`KINK_MARGIN`] of `beta`.
pub fn nudge_targets(policy: &Policy, sample: &TrainingSample) -> Result<(TrainingSample, usize)> {
    let beta = policy.config().beta;
    let pred = policy.forward(sample.input(), Some(sample.phase))?.chunk;
    let mut out = sample.clone();
    let mut n = 0;
    for (row, prow) in out.chunk.iter_mut().zip(&pred.values) {
        for (y, x) in row.iter_mut().zip(prow) {
            let e = x - *y;
            if (e.abs() - beta).abs() < KINK_MARGIN {
                // Pull the residual inside the quadratic zone.
                *y += e.signum() * 4.0 * KINK_MARGIN;
                n += 1;
            }
        }
    }
    Ok((out, n))
}

/// Compares tape gradients with central differences for every scalar of
/// every parameter. The zero-initialized output map is redrawn first so that
/// gradients reach the whole network.
pub fn grad_check(cfg: &ModelConfig, sample: &TrainingSample) -> Result<GradCheckReport> {
    let mut policy = Policy::new(cfg.clone())?;
    policy.randomize_output_head(0.3, &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed));
    let (sample, nudged) = nudge_targets(&policy, sample)?;
    let (_, analytic) = policy.loss_and_grad(&sample)?;

    let ids: Vec<_> = policy.params().ids().collect();
    let mut groups = Vec::with_capacity(ids.len());
    for id in ids {
        let name = policy.params().name(id).to_string();
        let n = policy.params().get(id).len();
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for j in 0..n {
            let orig = policy.params().get(id).data[j];
            policy.params_mut().get_mut(id).data[j] = orig + FD_STEP;
            let plus = policy.loss_value(&sample)?.total;
            policy.params_mut().get_mut(id).data[j] = orig - FD_STEP;
            let minus = policy.loss_value(&sample)?.total;
            policy.params_mut().get_mut(id).data[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[id.0].data[j];
            max_rel = max_rel.max(relative_error(a, numeric));
            max_abs = max_abs.max(a.abs());
        }
        groups.push(GroupCheck {
            name,
            n,
            max_rel_error: max_rel,
            max_abs_grad: max_abs,
        });
    }
    let worst = groups
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("model has parameters");
    Ok(GradCheckReport {
        max_rel_error: worst.max_rel_error,
        worst_group: worst.name.clone(),
        n_groups_total: policy.params().len(),
        n_scalars: policy.params().scalar_count(),
        nudged_targets: nudged,
        groups,
    })
}
