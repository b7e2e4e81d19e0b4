mod common;

use magchunk::dataset::NormStats;
use magchunk::magsim::{build_workspace, SimConfig, Simulator, TaskId};
use magchunk::policy::{ModelConfig, Policy};
use magchunk::runtime::{
    read_trajectory, run_rollout, ChunkBuffer, ChunkEntry, RolloutConfig, StepRecord,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_policy(seed: u64) -> Policy {
    let mut p = Policy::new(ModelConfig {
        seed,
        ..ModelConfig::tiny()
    })
    .unwrap();
    p.randomize_output_head(1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    p
}

fn stats() -> NormStats {
    NormStats {
        mean: [0.5, -0.25, 0.75, 0.1],
        std: [6.0, 5.0, 7.0, 4.0],
        ..NormStats::default()
    }
}

fn sim(task: TaskId, seed: u64) -> Simulator {
    Simulator::new(
        build_workspace(task),
        SimConfig {
            rng_seed: seed,
            ..SimConfig::default()
        },
    )
    .unwrap()
}

/// Recomputes every executed action from the logged chunks alone.
fn replay_oracle(steps: &[StepRecord], lambda: f64) -> Vec<Option<[f64; 4]>> {
    let chunks: Vec<ChunkEntry> = steps.iter().filter_map(|s| s.pushed).collect();
    steps
        .iter()
        .map(|s| {
            let t = s.t as i64;
            let mut num = [0.0; 4];
            let mut den = 0.0;
            for c in &chunks {
                let i = t - c.t_r;
                if (0..5).contains(&i) {
                    let w = (-lambda * i as f64).exp();
                    for d in 0..4 {
                        num[d] += w * c.chunk[i as usize][d];
                    }
                    den += w;
                }
            }
            (den > 0.0).then(|| num.map(|n| n / den))
        })
        .collect()
}

#[test]
fn executed_actions_match_replay_oracle() {
    for (k, task) in TaskId::ALL.iter().enumerate() {
        let p = random_policy(k as u64);
        let cfg = RolloutConfig {
            max_steps: 30,
            ..RolloutConfig::default()
        };
        let r = run_rollout(&p, &stats(), sim(*task, 10 + k as u64), 0, &cfg, None).unwrap();
        assert_eq!(r.steps.len(), 30);
        for (s, want) in r.steps.iter().zip(replay_oracle(&r.steps, cfg.lambda)) {
            let want = want.expect("every step is covered when replanning each step");
            for d in 0..4 {
                assert!((s.action[d] - want[d]).abs() < 1e-9);
            }
            assert!(s.n_active <= 5 && !s.held);
        }
    }
}

#[test]
fn trajectory_log_round_trip() {
    let p = random_policy(4);
    let cfg = RolloutConfig {
        max_steps: 12,
        ..RolloutConfig::default()
    };
    let mut buf = Vec::new();
    let r = run_rollout(&p, &stats(), sim(TaskId::B, 2), 45, &cfg, Some(&mut buf)).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 12);
    assert_eq!(read_trajectory(&text).unwrap(), r.steps);
}

#[test]
fn open_loop_playback_executes_raw_rows() {
    let p = random_policy(5);
    let cfg = RolloutConfig {
        max_steps: 20,
        replan_every: 5,
        clear_on_replan: true,
        ..RolloutConfig::default()
    };
    let r = run_rollout(&p, &stats(), sim(TaskId::A, 3), 0, &cfg, None).unwrap();
    let mut current = None;
    for s in &r.steps {
        if let Some(c) = s.pushed {
            current = Some(c);
        }
        let c = current.unwrap();
        assert_eq!(s.action, c.chunk[s.t - c.t_r as usize]);
        assert_eq!(s.n_active, 1);
    }
}

#[test]
fn untrained_policy_holds_the_arms() {
    let p = Policy::new(ModelConfig::tiny()).unwrap();
    let s0 = sim(TaskId::C, 8);
    let arms = s0.state.arms;
    let cfg = RolloutConfig {
        max_steps: 25,
        ..RolloutConfig::default()
    };
    let r = run_rollout(&p, &NormStats::default(), s0, 60, &cfg, None).unwrap();
    assert!(r.steps.iter().all(|s| s.action == [0.0; 4]));
    assert_eq!(r.final_state.arms, arms);
    assert!(!r.success.transport_done);
}

#[test]
fn rollout_is_deterministic() {
    let p = random_policy(6);
    let cfg = RolloutConfig {
        max_steps: 15,
        ..RolloutConfig::default()
    };
    let a = run_rollout(&p, &stats(), sim(TaskId::A, 1), 0, &cfg, None).unwrap();
    let b = run_rollout(&p, &stats(), sim(TaskId::A, 1), 0, &cfg, None).unwrap();
    assert_eq!(a, b);
}

fn chunk_strategy() -> impl Strategy<Value = [[f64; 4]; 5]> {
    prop::array::uniform5(prop::array::uniform4(-50.0f64..50.0))
}

proptest! {
    #[test]
    fn ensemble_is_convex(chunks in prop::collection::vec(chunk_strategy(), 1..6), t0 in -100i64..100) {
        let mut b = ChunkBuffer::default();
        let n = chunks.len() as i64;
        for (j, c) in chunks.iter().enumerate() {
            b.push_chunk(t0 + j as i64, *c).unwrap();
        }
        let t = t0 + n - 1;
        b.prune(t);
        let e = b.ensemble_action(t).unwrap();
        prop_assert!(e.n_active <= 5);
        for d in 0..4 {
            let aligned: Vec<f64> = b.entries().iter().map(|en| en.chunk[(t - en.t_r) as usize][d]).collect();
            let lo = aligned.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = aligned.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(e.action[d] >= lo - 1e-12 && e.action[d] <= hi + 1e-12);
        }
    }

    #[test]
    fn weights_depend_only_on_alignment(chunks in prop::collection::vec(chunk_strategy(), 1..6), shift in -1000i64..1000) {
        let mut a = ChunkBuffer::default();
        let mut b = ChunkBuffer::default();
        for (j, c) in chunks.iter().enumerate() {
            a.push_chunk(j as i64, *c).unwrap();
            b.push_chunk(j as i64 + shift, *c).unwrap();
        }
        let t = chunks.len() as i64 - 1;
        prop_assert_eq!(a.ensemble_action(t).unwrap(), b.ensemble_action(t + shift).unwrap());
    }
}
