//! Per-connection protocol state machine.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use magchunk::dataset::prompts::task_of_prompt;
use magchunk::dataset::{Dataset, EpisodeRecord, Frame, NormStats, Split};
use magchunk::magsim::{
    build_workspace, check_success, observe, sim::clip_action, PhaseLabel, SimConfig, SimState,
    Simulator, TaskId,
};
use magchunk::policy::Policy;
use magchunk::runtime::{Executor, RolloutConfig, StateSnapshot};
use serde_json::Value;

use crate::wire::{
    ControlPayload, ErrorPayload, HelloPayload, MarkPhasePayload, MessageType, ModeName,
    RecordedEpisode, RecordingStatus, StartRecordPayload, StartRolloutPayload, StatePayload,
    WireMessage,
};

/// A trained policy and the statistics it was trained with.
#[derive(Debug)]
pub struct PolicyHandle {
    pub policy: Policy,
    pub stats: NormStats,
}

#[derive(Debug, Clone, Default)]
pub struct SessionConfig {
    pub sim: SimConfig,
    /// Dataset directory that finished recordings are appended to.
    pub record_dir: Option<PathBuf>,
    pub with_grid: bool,
    pub rollout: RolloutConfig,
    pub policy: Option<Arc<PolicyHandle>>,
    /// Serializes appends from concurrent sessions to `record_dir`.
    pub record_lock: Arc<Mutex<()>>,
}

#[derive(Debug)]
pub enum Mode {
    /// Waiting for `hello`.
    Idle,
    Teleop,
    Rollout(Box<Executor>),
}

#[derive(Debug, Clone)]
struct Recording {
    prompt_id: usize,
    frames: Vec<Frame>,
    phase_override: Option<PhaseLabel>,
}

type Reply = Result<StatePayload, String>;

#[derive(Debug)]
pub struct Session {
    cfg: SessionConfig,
    task: TaskId,
    sim: Option<Simulator>,
    mode: Mode,
    recording: Option<Recording>,
    /// Finished recordings when there is no dataset directory.
    kept: Vec<EpisodeRecord>,
    last_in: Option<u64>,
    next_out: u64,
}

impl Session {
    pub fn new(cfg: SessionConfig) -> Self {
        Session {
            cfg,
            task: TaskId::A,
            sim: None,
            mode: Mode::Idle,
            recording: None,
            kept: Vec::new(),
            last_in: None,
            next_out: 0,
        }
    }

    pub fn mode(&self) -> &Mode {
        &self.mode
    }

    /// Current world state, if a task is open.
    pub fn sim_state(&self) -> Option<&SimState> {
        match &self.mode {
            Mode::Rollout(ex) => Some(&ex.sim.state),
            _ => self.sim.as_ref().map(|s| &s.state),
        }
    }

    pub fn simulator(&self) -> Option<&Simulator> {
        match &self.mode {
            Mode::Rollout(ex) => Some(&ex.sim),
            _ => self.sim.as_ref(),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording.is_some()
    }

    /// Recordings finished in this session that were not written to disk.
    pub fn kept_episodes(&self) -> &[EpisodeRecord] {
        &self.kept
    }

    /// True while a rollout still has steps to stream.
    pub fn is_streaming(&self) -> bool {
        matches!(&self.mode, Mode::Rollout(ex) if !ex.done())
    }

    fn emit<T: serde::Serialize>(&mut self, kind: MessageType, payload: &T) -> WireMessage {
        let m = WireMessage::new(kind, payload, self.next_out);
        self.next_out += 1;
        m
    }

    fn error(&mut self, message: String, in_reply_to: Option<u64>) -> WireMessage {
        self.emit(
            MessageType::Error,
            &ErrorPayload {
                message,
                in_reply_to,
            },
        )
    }

    /// Parses one text frame and handles it. Malformed input yields an
    /// `error` reply; the session stays usable.
    pub fn handle_text(&mut self, text: &str) -> Vec<WireMessage> {
        let value: Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => return vec![self.error(format!("malformed JSON: {e}"), None)],
        };
        let seq = value.get("seq").and_then(Value::as_u64);
        match serde_json::from_value::<WireMessage>(value) {
            Ok(msg) => self.handle(msg),
            Err(e) => vec![self.error(format!("malformed message: {e}"), seq)],
        }
    }

    pub fn handle(&mut self, msg: WireMessage) -> Vec<WireMessage> {
        if let Some(last) = self.last_in {
            if msg.seq <= last {
                let text = format!("seq {} does not follow {last}", msg.seq);
                return vec![self.error(text, Some(msg.seq))];
            }
        }
        self.last_in = Some(msg.seq);
        match self.dispatch(&msg) {
            Ok(state) => vec![self.emit(MessageType::State, &state)],
            Err(text) => vec![self.error(text, Some(msg.seq))],
        }
    }

    fn dispatch(&mut self, msg: &WireMessage) -> Reply {
        fn decode<T: for<'de> serde::Deserialize<'de>>(msg: &WireMessage) -> Result<T, String> {
            msg.payload_as()
                .map_err(|e| format!("bad {:?} payload: {e}", msg.kind))
        }
        if msg.kind != MessageType::Hello && self.sim.is_none() && !self.in_rollout() {
            return Err("send hello first".into());
        }
        match msg.kind {
            MessageType::Hello => self.hello(decode(msg)?),
            MessageType::Control => self.control(decode(msg)?),
            MessageType::MarkPhase => self.mark_phase(decode(msg)?),
            MessageType::StartRecord => self.start_record(decode(msg)?),
            MessageType::StopRecord => self.stop_record(),
            MessageType::StartRollout => self.start_rollout(decode(msg)?),
            MessageType::Stop => self.stop(),
            MessageType::State | MessageType::Error => {
                Err(format!("{:?} messages are server-to-client only", msg.kind))
            }
        }
    }

    fn in_rollout(&self) -> bool {
        matches!(self.mode, Mode::Rollout(_))
    }

    fn state_payload(&self) -> StatePayload {
        let sim = self
            .simulator()
            .expect("state requested without a simulator");
        StatePayload {
            task: self.task,
            t: sim.state.t,
            mode: if self.in_rollout() {
                ModeName::Rollout
            } else {
                ModeName::Teleop
            },
            sim: StateSnapshot::from(&sim.state),
            success: check_success(&sim.state, &sim.ws),
            max_arm_delta: sim.cfg.max_arm_delta,
            recording: self.recording.as_ref().map(|r| RecordingStatus {
                prompt_id: r.prompt_id,
                frames: r.frames.len(),
                phase_override: r.phase_override,
            }),
            workspace: None,
            recorded: None,
            rollout: None,
        }
    }

    /// Starts a fresh world; any recording or rollout in progress is dropped.
    fn hello(&mut self, p: HelloPayload) -> Reply {
        let sim_cfg = SimConfig {
            rng_seed: p.seed.unwrap_or(self.cfg.sim.rng_seed),
            ..self.cfg.sim.clone()
        };
        let sim = Simulator::new(build_workspace(p.task), sim_cfg).map_err(|e| e.to_string())?;
        self.task = p.task;
        self.sim = Some(sim);
        self.mode = Mode::Teleop;
        self.recording = None;
        let mut state = self.state_payload();
        state.workspace = Some(build_workspace(p.task));
        Ok(state)
    }

    /// Applies one tick of operator deltas.
    fn control(&mut self, p: ControlPayload) -> Reply {
        if self.in_rollout() {
            return Err("control is not accepted during a rollout".into());
        }
        let with_grid = self.cfg.with_grid;
        let sim = self.sim.as_mut().expect("checked in dispatch");
        let action = p.action();
        if action.iter().any(|v| !v.is_finite()) {
            return Err("control deltas must be finite".into());
        }
        let action = clip_action(&action, sim.cfg.max_arm_delta);
        let before = sim.state.clone();
        let obs = observe(&before, &sim.ws, with_grid);
        let ev = sim.step(&action).map_err(|e| e.to_string())?;
        if let Some(rec) = &mut self.recording {
            let derived = if before.attached {
                PhaseLabel::Transport
            } else {
                PhaseLabel::Approach
            };
            rec.frames.push(Frame {
                t: rec.frames.len(),
                obs,
                state: before.arms,
                action: ev.applied,
                phase: rec.phase_override.unwrap_or(derived),
            });
        }
        Ok(self.state_payload())
    }

    fn mark_phase(&mut self, p: MarkPhasePayload) -> Reply {
        let rec = self
            .recording
            .as_mut()
            .ok_or_else(|| "mark_phase requires an active recording".to_string())?;
        rec.phase_override = p.phase;
        Ok(self.state_payload())
    }

    fn start_record(&mut self, p: StartRecordPayload) -> Reply {
        if self.in_rollout() {
            return Err("cannot record during a rollout".into());
        }
        if self.recording.is_some() {
            return Err("already recording".into());
        }
        match task_of_prompt(p.prompt_id) {
            Some(t) if t == self.task => {}
            Some(t) => {
                return Err(format!(
                    "prompt {} belongs to task {t}, session task is {}",
                    p.prompt_id, self.task
                ))
            }
            None => return Err(format!("unknown prompt {}", p.prompt_id)),
        }
        self.recording = Some(Recording {
            prompt_id: p.prompt_id,
            frames: Vec::new(),
            phase_override: None,
        });
        Ok(self.state_payload())
    }

    /// Finalizes the recording. A recording too short to validate stays open.
    fn stop_record(&mut self) -> Reply {
        let rec = self
            .recording
            .as_ref()
            .ok_or_else(|| "stop_record without start_record".to_string())?;
        let episode = EpisodeRecord {
            episode_id: self.kept.len(),
            task_id: self.task,
            prompt_id: rec.prompt_id,
            frames: rec.frames.clone(),
        };
        episode.validate().map_err(|e| e.to_string())?;
        let n_frames = episode.len();
        let recorded = match &self.cfg.record_dir {
            Some(dir) => {
                let _guard = self
                    .cfg
                    .record_lock
                    .lock()
                    .unwrap_or_else(|e| e.into_inner());
                let id = Dataset::append_recorded(dir, episode, Split::Train)
                    .map_err(|e| e.to_string())?;
                RecordedEpisode {
                    episode_id: id,
                    n_frames,
                    written: true,
                }
            }
            None => {
                let id = episode.episode_id;
                self.kept.push(episode);
                RecordedEpisode {
                    episode_id: id,
                    n_frames,
                    written: false,
                }
            }
        };
        self.recording = None;
        let mut state = self.state_payload();
        state.recorded = Some(recorded);
        Ok(state)
    }

    /// Hands the current world to the executor; `tick` streams its steps.
    fn start_rollout(&mut self, p: StartRolloutPayload) -> Reply {
        if self.in_rollout() {
            return Err("rollout already running".into());
        }
        if self.recording.is_some() {
            return Err("stop the recording before starting a rollout".into());
        }
        let handle = self
            .cfg
            .policy
            .clone()
            .ok_or_else(|| "server has no policy loaded".to_string())?;
        let prompt_id = match p.prompt_id {
            Some(id) if task_of_prompt(id) == Some(self.task) => id,
            Some(id) => return Err(format!("prompt {id} does not describe task {}", self.task)),
            None => magchunk::dataset::build_prompt_bank().prompts_for(self.task)[0],
        };
        let sim = self.sim.take().expect("checked in dispatch");
        match Executor::new(
            sim.clone(),
            handle.stats.clone(),
            prompt_id,
            self.cfg.rollout.clone(),
        ) {
            Ok(ex) => {
                self.mode = Mode::Rollout(Box::new(ex));
                Ok(self.state_payload())
            }
            Err(e) => {
                self.sim = Some(sim);
                Err(e.to_string())
            }
        }
    }

    /// Ends a rollout, keeping the world where it stopped.
    fn stop(&mut self) -> Reply {
        if let Mode::Rollout(ex) = std::mem::replace(&mut self.mode, Mode::Teleop) {
            self.sim = Some(ex.sim);
        }
        Ok(self.state_payload())
    }

    /// Advances a running rollout by one executor step.
    pub fn tick(&mut self) -> Option<WireMessage> {
        let handle = self.cfg.policy.clone()?;
        let Mode::Rollout(ex) = &mut self.mode else {
            return None;
        };
        if ex.done() {
            return None;
        }
        match ex.step(&handle.policy) {
            Ok(rec) => {
                let mut state = self.state_payload();
                state.rollout = Some(rec);
                Some(self.emit(MessageType::State, &state))
            }
            Err(e) => {
                let _ = self.stop();
                Some(self.error(format!("rollout step failed: {e}"), None))
            }
        }
    }
}
