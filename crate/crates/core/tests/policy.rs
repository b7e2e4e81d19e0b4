mod common;

use magchunk::magsim::PhaseLabel;
use magchunk::nn::Mat;
use magchunk::policy::{load_policy, save_policy, ModelConfig, MultimodalMemory, Policy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_head(cfg: ModelConfig) -> Policy {
    let mut p = Policy::new(cfg).unwrap();
    p.randomize_output_head(0.5, &mut ChaCha8Rng::seed_from_u64(3));
    p
}

#[test]
fn same_config_same_parameters() {
    let a = Policy::new(ModelConfig::default()).unwrap();
    let b = Policy::new(ModelConfig::default()).unwrap();
    assert_eq!(a.params(), b.params());
    let c = Policy::new(ModelConfig {
        seed: 1,
        ..ModelConfig::default()
    })
    .unwrap();
    assert_ne!(a.params(), c.params());
}

#[test]
fn encode_shapes_and_determinism() {
    let ds = common::small_dataset(1);
    let s = &common::train_samples(&ds)[10];
    let p = Policy::new(ModelConfig::default()).unwrap();
    let m1 = p.encode(&s.obs_history, s.prompt_id).unwrap();
    let m2 = p.encode(&s.obs_history, s.prompt_id).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(m1.tokens.shape(), (5, 64));
    assert!(m1.tokens.is_finite());

    // Prompts 0 and 40 belong to tasks A and B.
    let other = p.encode(&s.obs_history, 40).unwrap();
    assert!(m1.tokens.max_abs_diff(&other.tokens) > 1e-6);
    assert!(p.encode(&s.obs_history, 70).is_err());
    assert!(p.encode(&s.obs_history[..3], 0).is_err());
}

#[test]
fn inject_state_appends_one_token() {
    let ds = common::small_dataset(1);
    let s = &common::train_samples(&ds)[0];
    let mut p = Policy::new(ModelConfig::default()).unwrap();
    let h = p.encode(&s.obs_history, s.prompt_id).unwrap();
    let ht = p.inject_state(&h, &s.state);
    assert_eq!(ht.len(), h.len() + 1);
    assert_eq!(ht.mask.len(), ht.len());
    assert_eq!(&ht.tokens.data[..h.tokens.len()], &h.tokens.data[..]);

    for name in ["state.proj.w", "state.proj.b"] {
        let id = p.params().id(name).unwrap();
        p.params_mut()
            .get_mut(id)
            .data
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    let ht = p.inject_state(&h, &s.state);
    assert!(ht.tokens.row(ht.len() - 1).iter().all(|v| *v == 0.0));
}

#[test]
fn phase_head_pooling_follows_mask() {
    let p = Policy::new(ModelConfig::default()).unwrap();
    let history = [[0.1, 0.2, 0.3, 0.4]; 4];
    // Tokens: first half all `a`, second half all `b`; masking either half
    // must equal a memory made entirely of the surviving token.
    let a: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
    let b: Vec<f64> = (0..64).map(|i| (i as f64 * 0.11).cos()).collect();
    let rows: Vec<Vec<f64>> = (0..6)
        .map(|r| if r < 3 { a.clone() } else { b.clone() })
        .collect();
    let mixed = MultimodalMemory {
        tokens: Mat::from_rows(&rows),
        mask: vec![true, true, true, false, false, false],
    };
    let only_a = MultimodalMemory {
        tokens: Mat::from_rows(&vec![a.clone(); 6]),
        mask: vec![true; 6],
    };
    let x = p.phase_head(&mixed, &history).unwrap();
    let y = p.phase_head(&only_a, &history).unwrap();
    assert!((x.logits[0] - y.logits[0]).abs() < 1e-12 && (x.logits[1] - y.logits[1]).abs() < 1e-12);

    let empty = MultimodalMemory {
        mask: vec![false; 6],
        ..mixed
    };
    assert!(p.phase_head(&empty, &history).is_err());
}

#[test]
fn phase_tokens_distinct_and_stable() {
    let p = Policy::new(ModelConfig::default()).unwrap();
    assert_eq!(p.phase_table_rows(), 2);
    assert_eq!(
        p.phase_token(PhaseLabel::Approach),
        p.phase_token(PhaseLabel::Approach)
    );
    assert_ne!(
        p.phase_token(PhaseLabel::Approach),
        p.phase_token(PhaseLabel::Transport)
    );
}

#[test]
fn decoder_depends_on_phase_token() {
    let ds = common::small_dataset(1);
    let s = &common::train_samples(&ds)[5];
    let p = random_head(ModelConfig::default());
    let h = p.encode(&s.obs_history, s.prompt_id).unwrap();
    let ht = p.inject_state(&h, &s.state);
    let za = p
        .decode_chunk(&ht, &p.phase_token(PhaseLabel::Approach))
        .unwrap();
    let zt = p
        .decode_chunk(&ht, &p.phase_token(PhaseLabel::Transport))
        .unwrap();
    assert!(za.to_mat().max_abs_diff(&zt.to_mat()) > 1e-9);
    assert!(za.is_finite());
    assert!(p.decode_chunk(&ht, &[0.0; 3]).is_err());
}

#[test]
fn fresh_policy_predicts_zero_deltas() {
    let ds = common::small_dataset(1);
    let p = Policy::new(ModelConfig::default()).unwrap();
    for s in common::train_samples(&ds).iter().step_by(37) {
        let out = p.forward(s.input(), None).unwrap();
        assert!(out.chunk.values.iter().flatten().all(|v| *v == 0.0));
    }
}

#[test]
fn forward_wiring() {
    let ds = common::small_dataset(1);
    let s = &common::train_samples(&ds)[3];
    let p = random_head(ModelConfig::default());

    // Teacher forcing selects the token regardless of the logits.
    for label in [PhaseLabel::Approach, PhaseLabel::Transport] {
        let out = p.forward(s.input(), Some(label)).unwrap();
        assert_eq!(out.conditioning, label);
        let h = p.inject_state(&p.encode(&s.obs_history, s.prompt_id).unwrap(), &s.state);
        let direct = p.decode_chunk(&h, &p.phase_token(label)).unwrap();
        assert!(out.chunk.to_mat().max_abs_diff(&direct.to_mat()) < 1e-12);
    }
    let free = p.forward(s.input(), None).unwrap();
    assert_eq!(free.conditioning, free.phase.predicted);
    assert!(free.phase.logits.iter().all(|v| v.is_finite()));
}

#[test]
fn zero_lambda_leaves_phase_head_without_gradient() {
    let ds = common::small_dataset(1);
    let s = &common::train_samples(&ds)[3];
    let p = random_head(ModelConfig {
        lambda_phase: 0.0,
        ..ModelConfig::tiny()
    });
    let (parts, grads) = p.loss_and_grad(s).unwrap();
    assert_eq!(parts.total, parts.action);
    for name in magchunk::policy::model::PHASE_HEAD_PARAMS {
        let id = p.params().id(name).unwrap();
        assert!(grads[id.0].data.iter().all(|g| *g == 0.0), "{name}");
    }
    let id = p.params().id("dec.out.w").unwrap();
    assert!(grads[id.0].data.iter().any(|g| *g != 0.0));
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let ds = common::small_dataset(1);
    let samples = common::train_samples(&ds);
    let p = random_head(ModelConfig::tiny());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    save_policy(&path, &p, &ds.stats, 7).unwrap();
    let (q, stats) = load_policy(&path, Some(p.config())).unwrap();
    assert_eq!(stats, ds.stats);
    for s in samples.iter().step_by(50) {
        let a = p.loss_value(s).unwrap();
        let b = q.loss_value(s).unwrap();
        assert!((a.total - b.total).abs() < 1e-9);
    }
    let other = ModelConfig {
        d_model: 32,
        ..ModelConfig::tiny()
    };
    assert!(load_policy(&path, Some(&other)).is_err());
}
