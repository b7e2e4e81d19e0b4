use std::sync::Arc;

use magchunk::dataset::episode::init_empty;
use magchunk::dataset::{make_sample, Dataset, NormStats, Split};
use magchunk::magsim::{build_workspace, expert_action, PhaseLabel, SimConfig, Simulator, TaskId};
use magchunk::policy::{ModelConfig, Policy};
use magchunk::runtime::{run_rollout, RolloutConfig};
use magchunk::train::{train_loop, TrainConfig};
use magchunk_server::wire::ModeName;
use magchunk_server::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn msg(kind: &str, payload: serde_json::Value, seq: u64) -> String {
    json!({"type": kind, "payload": payload, "seq": seq}).to_string()
}

fn state_of(m: &WireMessage) -> StatePayload {
    assert_eq!(m.kind, MessageType::State, "expected state, got {m:?}");
    m.payload_as().unwrap()
}

fn one(out: Vec<WireMessage>) -> WireMessage {
    assert_eq!(out.len(), 1);
    out.into_iter().next().unwrap()
}

fn opened(task: &str, seed: u64, cfg: SessionConfig) -> Session {
    let mut s = Session::new(cfg);
    let reply = one(s.handle_text(&msg("hello", json!({"task": task, "seed": seed}), 0)));
    state_of(&reply);
    s
}

#[test]
fn handshake_carries_workspace() {
    let mut s = Session::new(SessionConfig::default());
    let reply = one(s.handle_text(&msg("hello", json!({"task": "B", "seed": 4}), 0)));
    assert_eq!(reply.seq, 0);
    let st = state_of(&reply);
    assert_eq!(st.workspace, Some(build_workspace(TaskId::B)));
    assert_eq!(st.task, TaskId::B);
    assert_eq!(st.mode, ModeName::Teleop);
    assert_eq!(st.t, 0);
    assert!(st.recording.is_none());
    // Same start as a simulator seeded the same way.
    let sim = Simulator::new(
        build_workspace(TaskId::B),
        SimConfig {
            rng_seed: 4,
            ..SimConfig::default()
        },
    )
    .unwrap();
    assert_eq!(st.sim.arms, sim.state.arms);
    assert_eq!(st.sim.bead, sim.state.bead);
}

#[test]
fn zero_control_only_moves_the_bead() {
    let mut s = opened("A", 1, SessionConfig::default());
    let before = s.sim_state().unwrap().clone();
    let zero = json!({"dxL": 0.0, "dyL": 0.0, "dxR": 0.0, "dyR": 0.0});
    let st = state_of(&one(s.handle_text(&msg("control", zero, 1))));
    assert_eq!(st.t, 1);
    assert_eq!(st.sim.arms, before.arms);
    assert!(!before.attached);
    assert_eq!(st.sim.cargo, before.cargo);
    assert_ne!(st.sim.bead, before.bead);
    assert!(st.workspace.is_none());
}

#[test]
fn control_is_clipped_server_side() {
    let mut s = opened("A", 2, SessionConfig::default());
    let before = s.sim_state().unwrap().arms;
    let big = json!({"dxL": 500.0, "dyL": -500.0, "dxR": 3.0, "dyR": -4.0});
    let st = state_of(&one(s.handle_text(&msg("control", big, 1))));
    let moved: Vec<f64> = (0..4).map(|k| st.sim.arms[k] - before[k]).collect();
    assert_eq!(moved, vec![50.0, -50.0, 3.0, -4.0]);
}

#[test]
fn malformed_input_gets_error_and_session_continues() {
    let mut s = opened("A", 3, SessionConfig::default());
    let bad = [
        "not json".to_string(),
        msg("teleport", json!({}), 1),
        msg("control", json!({"dxL": 1.0}), 2),
        msg(
            "control",
            json!({"dxL": 0, "dyL": 0, "dxR": 0, "dyR": 0, "z": 1}),
            3,
        ),
        msg("state", json!({}), 4),
        msg("stop_record", json!({}), 5),
        msg("mark_phase", json!({"phase": 1}), 6),
        msg("start_record", json!({"prompt_id": 55}), 7),
        msg("start_record", json!({"prompt_id": 99}), 8),
        msg("start_rollout", json!({}), 9),
        json!({"type": "control", "payload": {}}).to_string(),
    ];
    let mut seqs = vec![0];
    for text in &bad {
        let reply = one(s.handle_text(text));
        assert_eq!(reply.kind, MessageType::Error, "{text}");
        let e: ErrorPayload = reply.payload_as().unwrap();
        assert!(!e.message.is_empty());
        seqs.push(reply.seq);
    }
    // A repeated seq is rejected too.
    let zero = json!({"dxL": 0, "dyL": 0, "dxR": 0, "dyR": 0});
    let reply = one(s.handle_text(&msg("control", zero.clone(), 9)));
    assert_eq!(reply.kind, MessageType::Error);
    seqs.push(reply.seq);
    let reply = one(s.handle_text(&msg("control", zero, 10)));
    assert_eq!(state_of(&reply).t, 1);
    seqs.push(reply.seq);
    assert!(seqs.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn messages_before_hello_are_rejected() {
    let mut s = Session::new(SessionConfig::default());
    let zero = json!({"dxL": 0, "dyL": 0, "dxR": 0, "dyR": 0});
    let reply = one(s.handle_text(&msg("control", zero, 0)));
    assert_eq!(reply.kind, MessageType::Error);
    let e: ErrorPayload = reply.payload_as().unwrap();
    assert_eq!(e.in_reply_to, Some(0));
    let reply = one(s.handle_text(&msg("hello", json!({"task": "C"}), 1)));
    assert_eq!(state_of(&reply).task, TaskId::C);
}

/// Drives the session with the scripted expert through `control` messages
/// until the cargo reaches the goal.
fn record_expert(s: &mut Session, seq: &mut u64, mark_at: Option<usize>) -> Vec<StatePayload> {
    let mut states = Vec::new();
    for step in 0..600 {
        if Some(step) == mark_at {
            let r = one(s.handle_text(&msg("mark_phase", json!({"phase": 1}), *seq)));
            *seq += 1;
            state_of(&r);
        }
        let sim = s.simulator().unwrap();
        let (a, _) = expert_action(&sim.state, &sim.ws, &sim.cfg);
        let p = serde_json::to_value(ControlPayload::from_action(&a)).unwrap();
        let st = state_of(&one(s.handle_text(&msg("control", p, *seq))));
        *seq += 1;
        let done = st.success.transport_done;
        states.push(st);
        if done {
            break;
        }
    }
    states
}

#[test]
fn recorded_phase_follows_attachment_and_override() {
    let mut s = opened("A", 5, SessionConfig::default());
    let mut seq = 1;
    one(s.handle_text(&msg("start_record", json!({"prompt_id": 3}), seq)));
    seq += 1;
    let states = record_expert(&mut s, &mut seq, None);
    assert!(states.last().unwrap().success.transport_done);
    let reply = state_of(&one(s.handle_text(&msg("stop_record", json!({}), seq))));
    seq += 1;
    let rec = reply.recorded.unwrap();
    assert!(!rec.written);
    let ep = &s.kept_episodes()[rec.episode_id];
    assert_eq!(ep.len(), states.len());
    ep.validate().unwrap();
    for (f, st) in ep
        .frames
        .iter()
        .zip(std::iter::once(None).chain(states.iter().map(Some)))
    {
        let attached_before = st.map_or(false, |st| st.sim.attached);
        assert_eq!(f.phase == PhaseLabel::Transport, attached_before);
    }

    // Override from frame 2 on: every later frame is labelled transport.
    one(s.handle_text(&msg("hello", json!({"task": "A", "seed": 6}), seq)));
    seq += 1;
    one(s.handle_text(&msg("start_record", json!({"prompt_id": 0}), seq)));
    seq += 1;
    record_expert(&mut s, &mut seq, Some(2));
    one(s.handle_text(&msg("stop_record", json!({}), seq)));
    let ep = s.kept_episodes().last().unwrap();
    assert_eq!(ep.frames[0].phase, PhaseLabel::Approach);
    assert!(ep.frames[2..]
        .iter()
        .all(|f| f.phase == PhaseLabel::Transport));
}

#[test]
fn short_recording_stays_open() {
    let mut s = opened("A", 7, SessionConfig::default());
    one(s.handle_text(&msg("start_record", json!({"prompt_id": 1}), 1)));
    let zero = json!({"dxL": 0, "dyL": 0, "dxR": 0, "dyR": 0});
    one(s.handle_text(&msg("control", zero, 2)));
    let reply = one(s.handle_text(&msg("stop_record", json!({}), 3)));
    assert_eq!(reply.kind, MessageType::Error);
    assert!(s.is_recording());
    assert!(s.kept_episodes().is_empty());
}

#[test]
fn teleop_recording_trains() {
    let dir = tempfile::tempdir().unwrap();
    init_empty(dir.path(), SimConfig::default(), NormStats::default()).unwrap();
    let cfg = SessionConfig {
        record_dir: Some(dir.path().to_path_buf()),
        ..SessionConfig::default()
    };
    let mut ids = Vec::new();
    for (task, seed, prompt) in [("A", 11, 2), ("B", 12, 35)] {
        let mut s = opened(task, seed, cfg.clone());
        let mut seq = 1;
        one(s.handle_text(&msg("start_record", json!({"prompt_id": prompt}), seq)));
        seq += 1;
        record_expert(&mut s, &mut seq, None);
        let st = state_of(&one(s.handle_text(&msg("stop_record", json!({}), seq))));
        let rec = st.recorded.unwrap();
        assert!(rec.written);
        ids.push(rec.episode_id);
    }
    assert_eq!(ids, vec![0, 1]);

    let ds = Dataset::load(dir.path()).unwrap();
    assert_eq!(ds.episodes.len(), 2);
    assert!(ds.meta.episodes.iter().all(|e| e.source == "teleop"));
    for ep in &ds.episodes {
        ep.validate().unwrap();
        let sample = make_sample(ep, 3, &ds.stats).unwrap();
        assert_eq!(sample.prompt_id, ep.prompt_id);
    }
    let out_dir = tempfile::tempdir().unwrap();
    let tc = TrainConfig {
        steps: 10,
        batch: 4,
        eval_every: 5,
        ..TrainConfig::default()
    };
    let out = train_loop(&ds, &ModelConfig::tiny(), &tc, out_dir.path()).unwrap();
    assert_eq!(out.log.len(), 10);
    assert!(out.log.iter().all(|e| e.loss_total.is_finite()));
    assert_eq!(Split::Train, ds.meta.episodes[0].split);
}

#[test]
fn disconnect_discards_partial_recording() {
    let dir = tempfile::tempdir().unwrap();
    init_empty(dir.path(), SimConfig::default(), NormStats::default()).unwrap();
    let cfg = SessionConfig {
        record_dir: Some(dir.path().to_path_buf()),
        ..SessionConfig::default()
    };
    let mut s = opened("A", 13, cfg);
    let mut seq = 1;
    one(s.handle_text(&msg("start_record", json!({"prompt_id": 4}), seq)));
    seq += 1;
    record_expert(&mut s, &mut seq, None);
    drop(s);
    let ds = Dataset::load(dir.path()).unwrap();
    assert!(ds.episodes.is_empty());
}

fn policy_handle(seed: u64) -> Arc<PolicyHandle> {
    let mut policy = Policy::new(ModelConfig {
        seed,
        ..ModelConfig::tiny()
    })
    .unwrap();
    policy.randomize_output_head(1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    Arc::new(PolicyHandle {
        policy,
        stats: NormStats {
            mean: [0.5, -0.25, 0.75, 0.1],
            std: [6.0, 5.0, 7.0, 4.0],
            ..NormStats::default()
        },
    })
}

#[test]
fn rollout_stream_matches_direct_rollout() {
    let handle = policy_handle(21);
    let rollout = RolloutConfig {
        max_steps: 30,
        ..RolloutConfig::default()
    };
    let cfg = SessionConfig {
        policy: Some(handle.clone()),
        rollout: rollout.clone(),
        ..SessionConfig::default()
    };
    let mut s = opened("B", 8, cfg);
    let st = state_of(&one(s.handle_text(&msg(
        "start_rollout",
        json!({"prompt_id": 37}),
        1,
    ))));
    assert_eq!(st.mode, ModeName::Rollout);
    // Teleop input is refused while the policy drives.
    let zero = json!({"dxL": 0, "dyL": 0, "dxR": 0, "dyR": 0});
    assert_eq!(
        one(s.handle_text(&msg("control", zero, 2))).kind,
        MessageType::Error
    );

    let mut streamed = Vec::new();
    while s.is_streaming() {
        let m = s.tick().unwrap();
        streamed.push(state_of(&m).rollout.unwrap());
    }
    assert!(s.tick().is_none());

    let sim = Simulator::new(
        build_workspace(TaskId::B),
        SimConfig {
            rng_seed: 8,
            ..SimConfig::default()
        },
    )
    .unwrap();
    let direct = run_rollout(&handle.policy, &handle.stats, sim, 37, &rollout, None).unwrap();
    assert_eq!(streamed, direct.steps);
    assert!(streamed.iter().all(|r| r.pushed.is_some()));

    let st = state_of(&one(s.handle_text(&msg("stop", json!({}), 3))));
    assert_eq!(st.mode, ModeName::Teleop);
    assert_eq!(st.sim.arms, direct.final_state.arms);
}

#[derive(Debug, Clone)]
enum Step {
    Control([f64; 4]),
    Mark(Option<u8>),
    StartRecord,
    StopRecord,
    Garbage,
    Hello(u64),
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        6 => prop::array::uniform4(-80.0..80.0f64).prop_map(Step::Control),
        1 => prop::option::of(0u8..3).prop_map(Step::Mark),
        1 => Just(Step::StartRecord),
        1 => Just(Step::StopRecord),
        1 => Just(Step::Garbage),
        1 => (0u64..4).prop_map(Step::Hello),
    ]
}

fn transcript(steps: &[Step]) -> Vec<String> {
    let mut out = vec![msg("hello", json!({"task": "C", "seed": 1}), 0)];
    for (i, s) in steps.iter().enumerate() {
        let seq = i as u64 + 1;
        out.push(match s {
            Step::Control(a) => msg(
                "control",
                serde_json::to_value(ControlPayload::from_action(a)).unwrap(),
                seq,
            ),
            Step::Mark(p) => msg("mark_phase", json!({ "phase": p }), seq),
            Step::StartRecord => msg("start_record", json!({"prompt_id": 50}), seq),
            Step::StopRecord => msg("stop_record", json!({}), seq),
            Step::Garbage => format!("{{\"type\": \"control\", \"seq\": {seq}"),
            Step::Hello(seed) => msg("hello", json!({"task": "C", "seed": seed}), seq),
        });
    }
    out
}

fn replay(lines: &[String]) -> (Vec<String>, usize) {
    let mut s = Session::new(SessionConfig::default());
    let out = lines
        .iter()
        .flat_map(|l| s.handle_text(l))
        .map(|m| m.to_text())
        .collect();
    (out, s.kept_episodes().len())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn transcript_replay_is_deterministic(steps in prop::collection::vec(step(), 1..60)) {
        let lines = transcript(&steps);
        let (a, kept_a) = replay(&lines);
        let (b, kept_b) = replay(&lines);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(kept_a, kept_b);
        // One reply per message, outgoing seq strictly increasing.
        prop_assert_eq!(a.len(), lines.len());
        let seqs: Vec<u64> = a
            .iter()
            .map(|t| serde_json::from_str::<WireMessage>(t).unwrap().seq)
            .collect();
        prop_assert!(seqs.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn recorded_frames_stay_in_action_space(steps in prop::collection::vec(step(), 1..80)) {
        let mut s = Session::new(SessionConfig::default());
        let mut lines = transcript(&steps);
        lines.push(msg("stop_record", json!({}), steps.len() as u64 + 1));
        for l in &lines {
            s.handle_text(l);
        }
        for ep in s.kept_episodes() {
            prop_assert!(ep.validate().is_ok());
            for f in &ep.frames {
                prop_assert!(f.action.iter().all(|a| a.abs() <= 50.0));
            }
        }
    }
}
