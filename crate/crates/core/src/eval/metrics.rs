use serde::{Deserialize, Serialize};

use crate::dataset::sample::ChunkRows;
use crate::dataset::{NormStats, TrainingSample};
use crate::error::{Error, Result};
use crate::magsim::PhaseLabel;
use crate::policy::Policy;
use crate::CHUNK_LEN;

/// Norm below which a ground-truth action counts as standing still, in ticks.
pub const MOVING_EPS: f64 = 1e-6;
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub overall: f64,
    pub approach: Option<f64>,
    pub transport: Option<f64>,
    /// `x_L, y_L, x_R, y_R`
    pub per_axis: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionMetrics {
    pub accuracy: Option<f64>,
    pub mean_cosine: Option<f64>,
    pub n_moving: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseAccuracy {
    pub overall: f64,
    pub approach: Option<f64>,
    pub transport: Option<f64>,
}

/// Offline action-prediction metrics; lengths in ticks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub format_version: u32,
    pub rmse_overall: f64,
    pub rmse_approach: Option<f64>,
    pub rmse_transport: Option<f64>,
    pub endpoint_mean: f64,
    pub endpoint_median: f64,
    pub rmse_per_axis: [f64; 4],
    pub direction_accuracy: Option<f64>,
    pub mean_cosine: Option<f64>,
    pub phase_acc_overall: f64,
    pub phase_acc_approach: Option<f64>,
    pub phase_acc_transport: Option<f64>,
    pub n_samples: usize,
    pub n_moving: usize,
    /// How direction metrics aggregate chunk steps.
    pub direction_scope: String,
}

fn check_pair(preds: &[ChunkRows], gts: &[ChunkRows]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} targets",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Empty("metric inputs"));
    }
    Ok(())
}

fn denorm(c: &ChunkRows, stats: &NormStats) -> ChunkRows {
    c.map(|r| stats.denormalize(&r))
}

/// RMSE in ticks over every (sample, step, dim), per ground-truth phase
/// subset and per axis.
pub fn rmse_report(
    preds: &[ChunkRows],
    gts: &[ChunkRows],
    phases: &[PhaseLabel],
    stats: &NormStats,
) -> Result<RmseReport> {
    check_pair(preds, gts)?;
    if phases.len() != preds.len() {
        return Err(Error::Shape(format!(
            "{} phases for {} samples",
            phases.len(),
            preds.len()
        )));
    }
    let mut total = 0.0;
    let mut axis = [0.0; 4];
    // (sum of squares, count) per phase
    let mut by_phase = [(0.0, 0usize); 2];
    for ((p, g), ph) in preds.iter().zip(gts).zip(phases) {
        let (p, g) = (denorm(p, stats), denorm(g, stats));
        for k in 0..CHUNK_LEN {
            for d in 0..4 {
                let e2 = (p[k][d] - g[k][d]).powi(2);
                total += e2;
                axis[d] += e2;
                by_phase[ph.index()].0 += e2;
                by_phase[ph.index()].1 += 1;
            }
        }
    }
    let n = preds.len() as f64;
    let sub = |(s, c): (f64, usize)| (c > 0).then(|| (s / c as f64).sqrt());
    Ok(RmseReport {
        overall: (total / (n * CHUNK_LEN as f64 * 4.0)).sqrt(),
        approach: sub(by_phase[0]),
        transport: sub(by_phase[1]),
        per_axis: axis.map(|s| (s / (n * CHUNK_LEN as f64)).sqrt()),
    })
}

/// Mean and median 4-D distance at the last chunk step, in ticks.
pub fn endpoint_error(
    preds: &[ChunkRows],
    gts: &[ChunkRows],
    stats: &NormStats,
) -> Result<(f64, f64)> {
    check_pair(preds, gts)?;
    let mut dists: Vec<f64> = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| {
            let a = stats.denormalize(&p[CHUNK_LEN - 1]);
            let b = stats.denormalize(&g[CHUNK_LEN - 1]);
            a.iter()
                .zip(&b)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let mean = dists.iter().sum::<f64>() / dists.len() as f64;
    dists.sort_by(f64::total_cmp);
    let m = dists.len() / 2;
    let median = if dists.len() % 2 == 1 {
        dists[m]
    } else {
        0.5 * (dists[m - 1] + dists[m])
    };
    Ok((mean, median))
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Direction accuracy (strictly positive cosine) and mean cosine over every
/// moving (sample, step) pair.
pub fn direction_metrics(
    preds: &[ChunkRows],
    gts: &[ChunkRows],
    stats: &NormStats,
    eps: f64,
) -> Result<DirectionMetrics> {
    check_pair(preds, gts)?;
    let mut n_moving = 0usize;
    let mut positive = 0usize;
    let mut cos_sum = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        let (p, g) = (denorm(p, stats), denorm(g, stats));
        for k in 0..CHUNK_LEN {
            let gn = g[k].iter().map(|v| v * v).sum::<f64>().sqrt();
            if gn <= eps {
                continue;
            }
            n_moving += 1;
            let c = cosine(&p[k], &g[k]);
            cos_sum += c;
            if c > 0.0 {
                positive += 1;
            }
        }
    }
    let frac = |x: f64| (n_moving > 0).then(|| x / n_moving as f64);
    Ok(DirectionMetrics {
        accuracy: frac(positive as f64),
        mean_cosine: frac(cos_sum),
        n_moving,
    })
}

/// Argmax accuracy overall and per ground-truth class.
pub fn phase_accuracy(logits: &[[f64; 2]], labels: &[PhaseLabel]) -> Result<PhaseAccuracy> {
    if logits.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logits for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Empty("phase labels"));
    }
    let mut hit = [0usize; 2];
    let mut count = [0usize; 2];
    for (l, y) in logits.iter().zip(labels) {
        let pred = crate::policy::PhaseOutput::from_logits(*l).predicted;
        count[y.index()] += 1;
        if pred == *y {
            hit[y.index()] += 1;
        }
    }
    let per = |c: usize| (count[c] > 0).then(|| hit[c] as f64 / count[c] as f64);
    Ok(PhaseAccuracy {
        overall: (hit[0] + hit[1]) as f64 / labels.len() as f64,
        approach: per(0),
        transport: per(1),
    })
}

pub fn build_report(
    preds: &[ChunkRows],
    gts: &[ChunkRows],
    phases: &[PhaseLabel],
    logits: &[[f64; 2]],
    stats: &NormStats,
) -> Result<MetricReport> {
    let rmse = rmse_report(preds, gts, phases, stats)?;
    let (endpoint_mean, endpoint_median) = endpoint_error(preds, gts, stats)?;
    let dir = direction_metrics(preds, gts, stats, MOVING_EPS)?;
    let pa = phase_accuracy(logits, phases)?;
    Ok(MetricReport {
        format_version: REPORT_VERSION,
        rmse_overall: rmse.overall,
        rmse_approach: rmse.approach,
        rmse_transport: rmse.transport,
        endpoint_mean,
        endpoint_median,
        rmse_per_axis: rmse.per_axis,
        direction_accuracy: dir.accuracy,
        mean_cosine: dir.mean_cosine,
        phase_acc_overall: pa.overall,
        phase_acc_approach: pa.approach,
        phase_acc_transport: pa.transport,
        n_samples: preds.len(),
        n_moving: dir.n_moving,
        direction_scope: "every chunk step".into(),
    })
}

/// Runs the policy in inference mode (predicted phase token) on each sample
/// and scores the chunks against the recorded actions.
pub fn evaluate_offline(
    policy: &Policy,
    samples: &[TrainingSample],
    stats: &NormStats,
) -> Result<MetricReport> {
    let mut preds = Vec::with_capacity(samples.len());
    let mut logits = Vec::with_capacity(samples.len());
    for s in samples {
        let out = policy.forward(s.input(), None)?;
        preds.push(out.chunk.values);
        logits.push(out.phase.logits);
    }
    let gts: Vec<ChunkRows> = samples.iter().map(|s| s.chunk).collect();
    let phases: Vec<PhaseLabel> = samples.iter().map(|s| s.phase).collect();
    build_report(&preds, &gts, &phases, &logits, stats)
}
