//! The policy network.
//!
//! ```text
//! 4 x observation ──► frame tokens ─┐
//! prompt id ──────► prompt token ───┴─► self-attention encoder ─► H (L x D)
//! arm state ──────► state token ────────────────────────────────► H~ = [H; e_s]
//! H~ + state history ─► phase head ─► logits ─► phase token z
//! [z; H~] ─► 2-layer decoder with 5 learned queries ─► 5 x 4 chunk
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::loss;
use crate::dataset::prompts::{task_of_prompt, N_PROMPTS};
use crate::dataset::sample::{ChunkRows, TrainingSample};
use crate::error::{Error, Result};
use crate::magsim::observe::{GRID_CHANNELS, GRID_SIZE};
use crate::magsim::{Observation, PhaseLabel, FEATURE_DIM};
use crate::nn::{Mat, ParamId, ParamSet, Tape, Var};
use crate::{ACTION_DIM, CHUNK_LEN, HISTORY_LEN};

/// Side of the pooled image fed to the grid projection.
const POOLED: usize = 8;
const POOLED_LEN: usize = GRID_CHANNELS * POOLED * POOLED;
const N_TASKS: usize = 3;
const N_PHASES: usize = 2;

/// Token sequence with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalMemory {
    pub tokens: Mat,
    pub mask: Vec<bool>,
}

impl MultimodalMemory {
    pub fn len(&self) -> usize {
        self.tokens.rows
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseOutput {
    pub logits: [f64; 2],
    pub predicted: PhaseLabel,
}

impl PhaseOutput {
    /// Argmax with ties going to `Approach`.
    pub fn from_logits(logits: [f64; 2]) -> Self {
        let predicted = if logits[1] > logits[0] {
            PhaseLabel::Transport
        } else {
            PhaseLabel::Approach
        };
        PhaseOutput { logits, predicted }
    }
}

/// `K x d_a` block of dual-arm deltas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionChunk {
    pub values: ChunkRows,
}

impl ActionChunk {
    pub fn from_mat(m: &Mat) -> Self {
        assert_eq!(m.shape(), (CHUNK_LEN, ACTION_DIM));
        ActionChunk {
            values: std::array::from_fn(|k| std::array::from_fn(|d| m.at(k, d))),
        }
    }

    pub fn to_mat(&self) -> Mat {
        Mat::from_rows(&self.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }
}

/// Borrowed model inputs for one decision step.
#[derive(Debug, Clone, Copy)]
pub struct PolicyInput<'a> {
    pub obs_history: &'a [Observation],
    /// Normalized arm states, oldest first; the last one is the current state.
    pub state_history: &'a [[f64; 4]; HISTORY_LEN],
    pub prompt_id: usize,
}

impl TrainingSample {
    pub fn input(&self) -> PolicyInput<'_> {
        PolicyInput {
            obs_history: &self.obs_history,
            state_history: &self.state_history,
            prompt_id: self.prompt_id,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone, Copy)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    ln_attn: Norm,
    attn: Attention,
    ln_ffn: Norm,
    ffn: FeedForward,
}

#[derive(Debug, Clone, Copy)]
struct DecoderLayer {
    ln_self: Norm,
    self_attn: Attention,
    ln_cross: Norm,
    cross_attn: Attention,
    ln_ffn: Norm,
    ffn: FeedForward,
}

#[derive(Debug, Clone)]
struct Layout {
    frame_proj: Linear,
    grid_proj: Option<Linear>,
    prompt_emb: ParamId,
    task_emb: ParamId,
    pos: ParamId,
    encoder: Vec<EncoderLayer>,
    enc_norm: Norm,
    state_proj: Linear,
    phase_hidden: Linear,
    phase_out: Linear,
    phase_table: ParamId,
    queries: ParamId,
    mem_norm: Norm,
    decoder: Vec<DecoderLayer>,
    dec_norm: Norm,
    action_out: Linear,
}

/// Parameter names of the phase classifier (used to check gradient wiring).
pub const PHASE_HEAD_PARAMS: [&str; 4] = [
    "phase.hidden.w",
    "phase.hidden.b",
    "phase.out.w",
    "phase.out.b",
];

struct Builder<'a> {
    params: ParamSet,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let std = 1.0 / (fan_in as f64).sqrt();
        Linear {
            w: self
                .params
                .add_normal(format!("{name}.w"), fan_in, fan_out, std, self.rng),
            b: self.params.add(format!("{name}.b"), Mat::zeros(1, fan_out)),
        }
    }

    fn zero_linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self
                .params
                .add(format!("{name}.w"), Mat::zeros(fan_in, fan_out)),
            b: self.params.add(format!("{name}.b"), Mat::zeros(1, fan_out)),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            g: self.params.add(format!("{name}.g"), Mat::filled(1, d, 1.0)),
            b: self.params.add(format!("{name}.b"), Mat::zeros(1, d)),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn ffn(&mut self, name: &str, d: usize, hidden: usize) -> FeedForward {
        FeedForward {
            up: self.linear(&format!("{name}.up"), d, hidden),
            down: self.linear(&format!("{name}.down"), hidden, d),
        }
    }

    fn embedding(&mut self, name: &str, rows: usize, d: usize, std: f64) -> ParamId {
        self.params.add_normal(name, rows, d, std, self.rng)
    }
}

/// Phase-conditioned action-chunking policy.
#[derive(Debug, Clone)]
pub struct Policy {
    cfg: ModelConfig,
    params: ParamSet,
    layout: Layout,
}

impl Policy {
    /// Builds a freshly initialized model; identical configs give identical
    /// parameters.
    pub fn new(cfg: ModelConfig) -> Result<Policy> {
        cfg.validate()?;
        let d = cfg.d_model;
        let hidden = d * cfg.ffn_mult;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut b = Builder {
            params: ParamSet::new(),
            rng: &mut rng,
        };
        let frame_proj = b.linear("enc.frame", FEATURE_DIM, d);
        let grid_proj = cfg.use_grid.then(|| b.linear("enc.grid", POOLED_LEN, d));
        let prompt_emb = b.embedding("enc.prompt", N_PROMPTS, d, 0.1);
        let task_emb = b.embedding("enc.task", N_TASKS, d, 1.0);
        let pos = b.embedding("enc.pos", cfg.memory_len(), d, 0.1);
        let encoder = (0..cfg.encoder_layers)
            .map(|i| EncoderLayer {
                ln_attn: b.norm(&format!("enc.{i}.ln_attn"), d),
                attn: b.attention(&format!("enc.{i}.attn"), d),
                ln_ffn: b.norm(&format!("enc.{i}.ln_ffn"), d),
                ffn: b.ffn(&format!("enc.{i}.ffn"), d, hidden),
            })
            .collect();
        let enc_norm = b.norm("enc.norm", d);
        let state_proj = b.linear("state.proj", 4, d);
        let phase_hidden = b.linear("phase.hidden", d + 8, d);
        let phase_out = b.linear("phase.out", d, N_PHASES);
        let phase_table = b.embedding("phase.token", N_PHASES, d, 1.0);
        let queries = b.embedding("dec.queries", cfg.n_queries, d, 1.0);
        let mem_norm = b.norm("dec.mem_norm", d);
        let decoder = (0..cfg.decoder_layers)
            .map(|i| DecoderLayer {
                ln_self: b.norm(&format!("dec.{i}.ln_self"), d),
                self_attn: b.attention(&format!("dec.{i}.self_attn"), d),
                ln_cross: b.norm(&format!("dec.{i}.ln_cross"), d),
                cross_attn: b.attention(&format!("dec.{i}.cross_attn"), d),
                ln_ffn: b.norm(&format!("dec.{i}.ln_ffn"), d),
                ffn: b.ffn(&format!("dec.{i}.ffn"), d, hidden),
            })
            .collect();
        let dec_norm = b.norm("dec.norm", d);
        // Zero output map: an untrained policy commands zero deltas.
        let action_out = b.zero_linear("dec.out", d, ACTION_DIM);
        let params = b.params;
        Ok(Policy {
            cfg,
            params,
            layout: Layout {
                frame_proj,
                grid_proj,
                prompt_emb,
                task_emb,
                pos,
                encoder,
                enc_norm,
                state_proj,
                phase_hidden,
                phase_out,
                phase_table,
                queries,
                mem_norm,
                decoder,
                dec_norm,
                action_out,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Redraws the zero-initialized output map with Gaussian weights.
    pub fn randomize_output_head<R: Rng + ?Sized>(&mut self, std: f64, rng: &mut R) {
        use rand_distr::{Distribution, StandardNormal};
        for id in [self.layout.action_out.w, self.layout.action_out.b] {
            for v in &mut self.params.get_mut(id).data {
                let z: f64 = StandardNormal.sample(rng);
                *v = z * std;
            }
        }
    }

    fn attention(&self, t: &mut Tape, a: &Attention, xq: Var, xkv: Var) -> Var {
        let q = t.linear(xq, a.q.w, a.q.b);
        let k = t.linear(xkv, a.k.w, a.k.b);
        let v = t.linear(xkv, a.v.w, a.v.b);
        let hd = self.cfg.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let heads: Vec<Var> = (0..self.cfg.n_heads)
            .map(|h| {
                let qh = t.slice_cols(q, h * hd, hd);
                let kh = t.slice_cols(k, h * hd, hd);
                let vh = t.slice_cols(v, h * hd, hd);
                let s = t.matmul_t(qh, kh);
                let s = t.scale(s, scale);
                let p = t.softmax_rows(s);
                t.matmul(p, vh)
            })
            .collect();
        let cat = t.concat_cols(&heads);
        t.linear(cat, a.o.w, a.o.b)
    }

    fn feed_forward(&self, t: &mut Tape, f: &FeedForward, x: Var) -> Var {
        let h = t.linear(x, f.up.w, f.up.b);
        let h = t.gelu(h);
        t.linear(h, f.down.w, f.down.b)
    }

    fn prompt_token(&self, t: &mut Tape, prompt_id: usize) -> Result<Var> {
        let task = task_of_prompt(prompt_id).ok_or(Error::OutOfRange {
            index: prompt_id,
            lo: 0,
            hi: N_PROMPTS - 1,
        })?;
        let pe = t.param(self.layout.prompt_emb);
        let te = t.param(self.layout.task_emb);
        let p = t.slice_rows(pe, prompt_id, 1);
        let k = t.slice_rows(te, task.index(), 1);
        Ok(t.add(p, k))
    }

    /// Encodes the observation history and prompt into `L x D` tokens.
    pub fn encode_on(
        &self,
        t: &mut Tape,
        obs_history: &[Observation],
        prompt_id: usize,
    ) -> Result<Var> {
        if obs_history.len() != HISTORY_LEN {
            return Err(Error::Shape(format!(
                "expected {HISTORY_LEN} observations, got {}",
                obs_history.len()
            )));
        }
        let mut tokens = Vec::with_capacity(self.cfg.memory_len());
        for obs in obs_history {
            if obs.features.len() != FEATURE_DIM {
                return Err(Error::Shape(format!(
                    "observation has {} features, expected {FEATURE_DIM}",
                    obs.features.len()
                )));
            }
            let f = t.constant(Mat::row_vec(&obs.features));
            tokens.push(t.linear(f, self.layout.frame_proj.w, self.layout.frame_proj.b));
            if let Some(g) = self.layout.grid_proj {
                let grid = obs
                    .grid
                    .as_deref()
                    .ok_or_else(|| Error::Shape("model expects observation grids".into()))?;
                let pooled = t.constant(Mat::row_vec(&pool_grid(grid)));
                tokens.push(t.linear(pooled, g.w, g.b));
            }
        }
        tokens.push(self.prompt_token(t, prompt_id)?);
        let x = t.concat_rows(&tokens);
        let pos = t.param(self.layout.pos);
        let mut x = t.add(x, pos);
        for layer in &self.layout.encoder {
            let h = t.layer_norm(x, layer.ln_attn.g, layer.ln_attn.b);
            let a = self.attention(t, &layer.attn, h, h);
            x = t.add(x, a);
            let h = t.layer_norm(x, layer.ln_ffn.g, layer.ln_ffn.b);
            let f = self.feed_forward(t, &layer.ffn, h);
            x = t.add(x, f);
        }
        Ok(t.layer_norm(x, self.layout.enc_norm.g, self.layout.enc_norm.b))
    }

    /// Appends the projected state token: `[H; W s + b]`.
    pub fn inject_state_on(&self, t: &mut Tape, memory: Var, state: &[f64; 4]) -> Var {
        let s = t.constant(Mat::row_vec(state));
        let e = t.linear(s, self.layout.state_proj.w, self.layout.state_proj.b);
        t.concat_rows(&[memory, e])
    }

    /// Logits from the masked mean of the memory, the current state and the
    /// state change across the history window.
    pub fn phase_head_on(
        &self,
        t: &mut Tape,
        memory: Var,
        mask: &[bool],
        state_history: &[[f64; 4]; HISTORY_LEN],
    ) -> Var {
        let pooled = t.masked_mean_rows(memory, mask);
        let current = state_history[HISTORY_LEN - 1];
        let motion = motion_feature(state_history);
        let s = t.constant(Mat::row_vec(&current));
        let m = t.constant(Mat::row_vec(&motion));
        let x = t.concat_cols(&[pooled, s, m]);
        let h = t.linear(x, self.layout.phase_hidden.w, self.layout.phase_hidden.b);
        let h = t.gelu(h);
        t.linear(h, self.layout.phase_out.w, self.layout.phase_out.b)
    }

    pub fn phase_token_on(&self, t: &mut Tape, phase: PhaseLabel) -> Var {
        let table = t.param(self.layout.phase_table);
        t.slice_rows(table, phase.index(), 1)
    }

    /// Five learned queries attend over `[z; H~]` through two decoder layers.
    pub fn decode_on(&self, t: &mut Tape, memory: Var, phase_token: Var) -> Var {
        let m = t.concat_rows(&[phase_token, memory]);
        let m = t.layer_norm(m, self.layout.mem_norm.g, self.layout.mem_norm.b);
        let mut q = t.param(self.layout.queries);
        for layer in &self.layout.decoder {
            let h = t.layer_norm(q, layer.ln_self.g, layer.ln_self.b);
            let a = self.attention(t, &layer.self_attn, h, h);
            q = t.add(q, a);
            let h = t.layer_norm(q, layer.ln_cross.g, layer.ln_cross.b);
            let a = self.attention(t, &layer.cross_attn, h, m);
            q = t.add(q, a);
            let h = t.layer_norm(q, layer.ln_ffn.g, layer.ln_ffn.b);
            let f = self.feed_forward(t, &layer.ffn, h);
            q = t.add(q, f);
        }
        let q = t.layer_norm(q, self.layout.dec_norm.g, self.layout.dec_norm.b);
        t.linear(q, self.layout.action_out.w, self.layout.action_out.b)
    }

    /// Full forward pass on a tape. With `teacher_phase` the decoder is
    /// conditioned on the given label, otherwise on the predicted phase.
    pub fn forward_on(
        &self,
        t: &mut Tape,
        input: PolicyInput<'_>,
        teacher_phase: Option<PhaseLabel>,
    ) -> Result<ForwardVars> {
        let h = self.encode_on(t, input.obs_history, input.prompt_id)?;
        let state = input.state_history[HISTORY_LEN - 1];
        let memory = self.inject_state_on(t, h, &state);
        let mask = vec![true; self.cfg.memory_len() + 1];
        let logits = self.phase_head_on(t, memory, &mask, input.state_history);
        let lv = t.value(logits);
        let phase = PhaseOutput::from_logits([lv.data[0], lv.data[1]]);
        let conditioning = teacher_phase.unwrap_or(phase.predicted);
        let z = self.phase_token_on(t, conditioning);
        let chunk = self.decode_on(t, memory, z);
        Ok(ForwardVars {
            chunk,
            logits,
            phase,
            conditioning,
        })
    }

    /// Loss of one sample; returns the tape-side total. Without teacher
    /// forcing the decoder sees the predicted phase.
    pub fn loss_on(
        &self,
        t: &mut Tape,
        sample: &TrainingSample,
        teacher_forcing: bool,
    ) -> Result<(Var, LossParts)> {
        let fw = self.forward_on(t, sample.input(), teacher_forcing.then_some(sample.phase))?;
        loss::joint_loss_on(
            t,
            fw.chunk,
            fw.logits,
            &sample.chunk,
            sample.phase,
            &self.cfg,
        )
    }

    /// Teacher-forced loss and the gradient of every parameter.
    pub fn loss_and_grad(&self, sample: &TrainingSample) -> Result<(LossParts, Vec<Mat>)> {
        self.loss_and_grad_with(sample, true)
    }

    pub fn loss_and_grad_with(
        &self,
        sample: &TrainingSample,
        teacher_forcing: bool,
    ) -> Result<(LossParts, Vec<Mat>)> {
        let mut t = Tape::new(&self.params);
        let (total, parts) = self.loss_on(&mut t, sample, teacher_forcing)?;
        Ok((parts, t.backward(total)))
    }

    /// Teacher-forced loss value.
    pub fn loss_value(&self, sample: &TrainingSample) -> Result<LossParts> {
        let mut t = Tape::new(&self.params);
        Ok(self.loss_on(&mut t, sample, true)?.1)
    }

    /// Inference: predicted phase conditions the decoder unless `teacher_phase` is given.
    pub fn forward(
        &self,
        input: PolicyInput<'_>,
        teacher_phase: Option<PhaseLabel>,
    ) -> Result<Prediction> {
        let mut t = Tape::new(&self.params);
        let fw = self.forward_on(&mut t, input, teacher_phase)?;
        Ok(Prediction {
            chunk: ActionChunk::from_mat(t.value(fw.chunk)),
            phase: fw.phase,
            conditioning: fw.conditioning,
        })
    }

    pub fn encode(
        &self,
        obs_history: &[Observation],
        prompt_id: usize,
    ) -> Result<MultimodalMemory> {
        let mut t = Tape::new(&self.params);
        let h = self.encode_on(&mut t, obs_history, prompt_id)?;
        let tokens = t.value(h).clone();
        let mask = vec![true; tokens.rows];
        Ok(MultimodalMemory { tokens, mask })
    }

    pub fn inject_state(&self, memory: &MultimodalMemory, state: &[f64; 4]) -> MultimodalMemory {
        let mut t = Tape::new(&self.params);
        let h = t.constant(memory.tokens.clone());
        let out = self.inject_state_on(&mut t, h, state);
        let mut mask = memory.mask.clone();
        mask.push(true);
        MultimodalMemory {
            tokens: t.value(out).clone(),
            mask,
        }
    }

    pub fn phase_head(
        &self,
        memory: &MultimodalMemory,
        state_history: &[[f64; 4]; HISTORY_LEN],
    ) -> Result<PhaseOutput> {
        if !memory.mask.iter().any(|m| *m) {
            return Err(Error::Empty("phase head mask selects no tokens"));
        }
        let mut t = Tape::new(&self.params);
        let h = t.constant(memory.tokens.clone());
        let logits = self.phase_head_on(&mut t, h, &memory.mask, state_history);
        let v = t.value(logits);
        Ok(PhaseOutput::from_logits([v.data[0], v.data[1]]))
    }

    pub fn phase_token(&self, phase: PhaseLabel) -> Vec<f64> {
        self.params
            .get(self.layout.phase_table)
            .row(phase.index())
            .to_vec()
    }

    pub fn phase_table_rows(&self) -> usize {
        self.params.get(self.layout.phase_table).rows
    }

    pub fn decode_chunk(
        &self,
        memory: &MultimodalMemory,
        phase_token: &[f64],
    ) -> Result<ActionChunk> {
        if !memory.tokens.is_finite() {
            return Err(Error::Shape("memory contains non-finite values".into()));
        }
        if phase_token.len() != self.cfg.d_model {
            return Err(Error::Shape(format!(
                "phase token has width {}, expected {}",
                phase_token.len(),
                self.cfg.d_model
            )));
        }
        let mut t = Tape::new(&self.params);
        let h = t.constant(memory.tokens.clone());
        let z = t.constant(Mat::row_vec(phase_token));
        let out = self.decode_on(&mut t, h, z);
        Ok(ActionChunk::from_mat(t.value(out)))
    }
}

/// Tape handles produced by [`Policy::forward_on`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub chunk: Var,
    pub logits: Var,
    pub phase: PhaseOutput,
    pub conditioning: PhaseLabel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// Normalized deltas.
    pub chunk: ActionChunk,
    pub phase: PhaseOutput,
    /// Phase whose token conditioned the decoder.
    pub conditioning: PhaseLabel,
}

pub use loss::LossParts;

/// Last minus first state of the window.
pub fn motion_feature(state_history: &[[f64; 4]; HISTORY_LEN]) -> [f64; 4] {
    let first = state_history[0];
    let last = state_history[HISTORY_LEN - 1];
    std::array::from_fn(|i| last[i] - first[i])
}

/// 4x4 average pooling of each 32x32 channel.
pub fn pool_grid(grid: &[f64]) -> Vec<f64> {
    let f = GRID_SIZE / POOLED;
    let mut out = vec![0.0; POOLED_LEN];
    for ch in 0..GRID_CHANNELS {
        for r in 0..GRID_SIZE {
            for c in 0..GRID_SIZE {
                out[ch * POOLED * POOLED + (r / f) * POOLED + c / f] +=
                    grid[ch * GRID_SIZE * GRID_SIZE + r * GRID_SIZE + c];
            }
        }
    }
    let inv = 1.0 / (f * f) as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    out
}
