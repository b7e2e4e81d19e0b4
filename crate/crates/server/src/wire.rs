//! Message schema. Every frame is `{"type": ..., "payload": {...}, "seq": n}`
//! with `seq` strictly increasing per direction.

use magchunk::magsim::{ArmVec, PhaseLabel, Success, TaskId, WorkspaceSpec};
use magchunk::runtime::{StateSnapshot, StepRecord};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageType {
    Hello,
    State,
    Control,
    MarkPhase,
    StartRecord,
    StopRecord,
    StartRollout,
    Stop,
    Error,
}

impl MessageType {
    pub const ALL: [MessageType; 9] = [
        MessageType::Hello,
        MessageType::State,
        MessageType::Control,
        MessageType::MarkPhase,
        MessageType::StartRecord,
        MessageType::StopRecord,
        MessageType::StartRollout,
        MessageType::Stop,
        MessageType::Error,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    #[serde(rename = "type")]
    pub kind: MessageType,
    #[serde(default)]
    pub payload: Value,
    pub seq: u64,
}

impl WireMessage {
    pub fn new<T: Serialize>(kind: MessageType, payload: &T, seq: u64) -> Self {
        WireMessage {
            kind,
            // Payload types are plain structs; serializing them cannot fail.
            payload: serde_json::to_value(payload).unwrap_or(Value::Null),
            seq,
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }

    /// Decodes the payload as `T`.
    pub fn payload_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T, serde_json::Error> {
        let v = if self.payload.is_null() {
            Value::Object(Default::default())
        } else {
            self.payload.clone()
        };
        serde_json::from_value(v)
    }
}

/// Opens (or reopens) the session on a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelloPayload {
    pub task: TaskId,
    /// Simulator seed; the server's configured seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Per-tick arm deltas in ticks. Clipped server-side to `max_arm_delta`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlPayload {
    #[serde(rename = "dxL")]
    pub dx_l: f64,
    #[serde(rename = "dyL")]
    pub dy_l: f64,
    #[serde(rename = "dxR")]
    pub dx_r: f64,
    #[serde(rename = "dyR")]
    pub dy_r: f64,
}

impl ControlPayload {
    pub fn from_action(a: &ArmVec) -> Self {
        ControlPayload {
            dx_l: a[0],
            dy_l: a[1],
            dx_r: a[2],
            dy_r: a[3],
        }
    }

    pub fn action(&self) -> ArmVec {
        [self.dx_l, self.dy_l, self.dx_r, self.dy_r]
    }
}

/// `phase: null` clears the override and returns to attachment-derived labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkPhasePayload {
    pub phase: Option<PhaseLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartRecordPayload {
    pub prompt_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartRolloutPayload {
    /// Defaults to the first prompt of the session's task.
    #[serde(default)]
    pub prompt_id: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingStatus {
    pub prompt_id: usize,
    pub frames: usize,
    pub phase_override: Option<PhaseLabel>,
}

/// Acknowledgement of a finished recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedEpisode {
    pub episode_id: usize,
    pub n_frames: usize,
    /// False when the server has no dataset directory and kept it in memory.
    pub written: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Teleop,
    Rollout,
}

/// Server to client world update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePayload {
    pub task: TaskId,
    pub t: u64,
    pub mode: ModeName,
    pub sim: StateSnapshot,
    pub success: Success,
    pub max_arm_delta: f64,
    pub recording: Option<RecordingStatus>,
    /// Sent with the handshake only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workspace: Option<WorkspaceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recorded: Option<RecordedEpisode>,
    /// Executor step (predicted phase, pushed chunk rows, ensembled action).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollout: Option<StepRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_reply_to: Option<u64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type_names_are_snake_case() {
        let names: Vec<String> = MessageType::ALL
            .iter()
            .map(|t| {
                serde_json::to_value(t)
                    .unwrap()
                    .as_str()
                    .unwrap()
                    .to_string()
            })
            .collect();
        assert_eq!(
            names,
            [
                "hello",
                "state",
                "control",
                "mark_phase",
                "start_record",
                "stop_record",
                "start_rollout",
                "stop",
                "error"
            ]
        );
        assert!(serde_json::from_str::<MessageType>("\"teleport\"").is_err());
    }

    #[test]
    fn control_field_names() {
        let c = ControlPayload::from_action(&[1.0, 2.0, 3.0, 4.0]);
        let v = serde_json::to_value(c).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"dxL": 1.0, "dyL": 2.0, "dxR": 3.0, "dyR": 4.0})
        );
        let m = WireMessage::new(MessageType::Control, &c, 7);
        let back: WireMessage = serde_json::from_str(&m.to_text()).unwrap();
        assert_eq!(back.payload_as::<ControlPayload>().unwrap(), c);
    }
}
