//! Scripted-expert dataset generation.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::episode::{
    Dataset, DatasetMeta, EpisodeInfo, EpisodeRecord, Frame, Split, FORMAT_VERSION, FPS,
};
use super::prompts::build_prompt_bank;
use super::stats::compute_norm_stats;
use crate::error::{Error, Result};
use crate::magsim::{
    build_workspace, check_success, expert_action, observe, SimConfig, Simulator, TaskId,
};
use crate::{CHUNK_LEN, HISTORY_LEN};

const PERTURB_STREAM: u64 = 0x9e37;

/// Episodes per split for the 60:9:6 ratio.
pub const SPLIT_RATIO: (usize, usize, usize) = (60, 9, 6);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_episodes: usize,
    pub seed: u64,
    pub max_steps: usize,
    pub with_grid: bool,
    /// Regeneration attempts per episode before giving up.
    pub max_attempts: usize,
    /// Per-step probability of displacing the arms after the expert's step,
    /// so recorded states include off-target arms and the corrections that
    /// follow. Recorded actions stay the expert's.
    pub perturb_prob: f64,
    /// Std (ticks) of each displacement component.
    pub perturb_std: f64,
    pub sim: SimConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_episodes: 75,
            seed: 0,
            max_steps: 600,
            with_grid: false,
            max_attempts: 20,
            perturb_prob: 0.3,
            perturb_std: 30.0,
            sim: SimConfig::default(),
        }
    }
}

/// Random arm displacement injected while recording the expert.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Perturbation {
    pub prob: f64,
    pub std: f64,
}

/// SplitMix64 finalizer; maps a (seed, stream) pair to an independent seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Train/val/test sizes for `n` episodes at the 60:9:6 ratio.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let total = SPLIT_RATIO.0 + SPLIT_RATIO.1 + SPLIT_RATIO.2;
    let val = (n * SPLIT_RATIO.1 + total / 2) / total;
    let test = (n * SPLIT_RATIO.2 + total / 2) / total;
    (n - val - test, val, test)
}

/// Runs the expert in a fresh simulator and records every step until the
/// cargo reaches the goal. Returns `None` when the expert fails.
pub fn record_expert_episode(
    episode_id: usize,
    task: TaskId,
    prompt_id: usize,
    sim_cfg: SimConfig,
    max_steps: usize,
    with_grid: bool,
    perturb: Perturbation,
) -> Result<Option<EpisodeRecord>> {
    let ws = build_workspace(task);
    let mut perturb_rng = ChaCha8Rng::seed_from_u64(derive_seed(sim_cfg.rng_seed, PERTURB_STREAM));
    let mut sim = Simulator::new(ws, sim_cfg)?;
    let mut frames = Vec::new();
    for t in 0..max_steps {
        let obs = observe(&sim.state, &sim.ws, with_grid);
        let (action, phase) = expert_action(&sim.state, &sim.ws, &sim.cfg);
        let state = sim.state.arms;
        let ev = sim.step(&action)?;
        frames.push(Frame {
            t,
            obs,
            state,
            action: ev.applied,
            phase,
        });
        if perturb_rng.gen::<f64>() < perturb.prob {
            let mut d = [0.0; 4];
            for v in &mut d {
                let z: f64 = StandardNormal.sample(&mut perturb_rng);
                *v = perturb.std * z;
            }
            sim.displace_arms(&d);
        }
        if check_success(&sim.state, &sim.ws).transport_done {
            let ep = EpisodeRecord {
                episode_id,
                task_id: task,
                prompt_id,
                frames,
            };
            return Ok((ep.len() >= CHUNK_LEN + HISTORY_LEN).then_some(ep));
        }
    }
    Ok(None)
}

/// Generates the full dataset in memory: episodes cycle through the tasks,
/// each gets a prompt drawn from its task's prompts and a derived simulator
/// seed; failed expert runs are regenerated with the next derived seed.
pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&cfg.perturb_prob)
        || !(cfg.perturb_std >= 0.0 && cfg.perturb_std.is_finite())
    {
        return Err(Error::InvalidConfig(format!(
            "bad perturbation: prob {}, std {}",
            cfg.perturb_prob, cfg.perturb_std
        )));
    }
    if cfg.n_episodes < 10 {
        return Err(Error::InvalidConfig(format!(
            "need at least 10 episodes, got {}",
            cfg.n_episodes
        )));
    }
    cfg.sim.validate()?;
    let bank = build_prompt_bank();
    let mut episodes = Vec::with_capacity(cfg.n_episodes);
    let mut seeds = Vec::with_capacity(cfg.n_episodes);
    let mut regenerated = 0;
    for id in 0..cfg.n_episodes {
        let task = TaskId::ALL[id % TaskId::ALL.len()];
        let mut ep_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, id as u64));
        let prompts = bank.prompts_for(task);
        let prompt_id = prompts[ep_rng.gen_range(0..prompts.len())];
        let mut recorded = None;
        for attempt in 0..cfg.max_attempts {
            let sim_seed = derive_seed(derive_seed(cfg.seed, id as u64), attempt as u64 + 1);
            let sim_cfg = SimConfig {
                rng_seed: sim_seed,
                ..cfg.sim.clone()
            };
            if let Some(ep) = record_expert_episode(
                id,
                task,
                prompt_id,
                sim_cfg,
                cfg.max_steps,
                cfg.with_grid,
                Perturbation {
                    prob: cfg.perturb_prob,
                    std: cfg.perturb_std,
                },
            )? {
                recorded = Some((ep, sim_seed));
                break;
            }
            regenerated += 1;
        }
        let (ep, seed) = recorded.ok_or_else(|| {
            Error::Dataset(format!(
                "expert failed {} times on episode {id}",
                cfg.max_attempts
            ))
        })?;
        episodes.push(ep);
        seeds.push(seed);
    }

    let (n_train, n_val, _) = split_sizes(cfg.n_episodes);
    let mut order: Vec<usize> = (0..cfg.n_episodes).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.seed,
        u64::MAX,
    )));
    let mut splits = vec![Split::Test; cfg.n_episodes];
    for (rank, &id) in order.iter().enumerate() {
        splits[id] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    let stats = compute_norm_stats(
        episodes
            .iter()
            .zip(&splits)
            .filter(|(_, s)| **s == Split::Train)
            .map(|(e, _)| e),
    )?;
    let infos = episodes
        .iter()
        .zip(splits.iter().zip(&seeds))
        .map(|(ep, (split, seed))| EpisodeInfo {
            episode_id: ep.episode_id,
            task_id: ep.task_id,
            prompt_id: ep.prompt_id,
            n_frames: ep.len(),
            split: *split,
            seed: Some(*seed),
            source: "expert".into(),
        })
        .collect();
    let meta = DatasetMeta {
        format_version: FORMAT_VERSION,
        fps: FPS,
        seed: cfg.seed,
        n_episodes: cfg.n_episodes,
        total_frames: episodes.iter().map(|e| e.len()).sum(),
        regenerated,
        chunk_len: CHUNK_LEN,
        history_len: HISTORY_LEN,
        with_grid: cfg.with_grid,
        sim_config: cfg.sim.clone(),
        episodes: infos,
    };
    Ok(Dataset {
        meta,
        stats,
        episodes,
    })
}

/// Generates and writes the dataset to `dir`.
pub fn generate_dataset(cfg: &GenConfig, dir: &Path) -> Result<Dataset> {
    let ds = generate(cfg)?;
    ds.save(dir)?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_follow_ratio() {
        assert_eq!(split_sizes(75), (60, 9, 6));
        assert_eq!(split_sizes(150), (120, 18, 12));
        let (a, b, c) = split_sizes(10);
        assert_eq!(a + b + c, 10);
    }

    #[test]
    fn derived_seeds_differ() {
        let s: std::collections::BTreeSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }

    #[test]
    fn rejects_tiny_request() {
        let cfg = GenConfig {
            n_episodes: 9,
            ..GenConfig::default()
        };
        assert!(generate(&cfg).is_err());
    }

    fn recorded(perturb: Perturbation) -> EpisodeRecord {
        let cfg = SimConfig {
            rng_seed: 21,
            ..SimConfig::default()
        };
        record_expert_episode(0, TaskId::A, 0, cfg, 600, false, perturb)
            .unwrap()
            .unwrap()
    }

    /// Arms that stay in bounds end up exactly where the recorded action put
    /// them unless a displacement was injected.
    fn displaced_steps(ep: &EpisodeRecord) -> usize {
        ep.frames
            .windows(2)
            .filter(|w| {
                (0..4).any(|k| (w[0].state[k] + w[0].action[k] - w[1].state[k]).abs() > 1e-9)
            })
            .count()
    }

    #[test]
    fn clean_recording_has_no_displacements() {
        let ep = recorded(Perturbation::default());
        assert_eq!(displaced_steps(&ep), 0);
    }

    #[test]
    fn perturbed_recording_keeps_expert_labels() {
        let p = Perturbation {
            prob: 0.3,
            std: 30.0,
        };
        let ep = recorded(p);
        let n = displaced_steps(&ep) as f64 / (ep.len() - 1) as f64;
        assert!(n > 0.1 && n < 0.5, "displaced fraction {n}");
        assert_eq!(recorded(p), ep);
        assert!(ep
            .frames
            .iter()
            .all(|f| f.action.iter().all(|a| a.abs() <= 50.0)));
    }

    #[test]
    fn rejects_bad_perturbation() {
        for (prob, std) in [(1.5, 1.0), (0.5, -1.0), (0.5, f64::NAN)] {
            let cfg = GenConfig {
                perturb_prob: prob,
                perturb_std: std,
                ..GenConfig::default()
            };
            assert!(generate(&cfg).is_err());
        }
    }
}
