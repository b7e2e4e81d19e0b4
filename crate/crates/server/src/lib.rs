//! Websocket sessions for the teleoperation panel.
//!
//! Each connection owns one [`Session`]: a simulator, an optional recording
//! and an optional policy rollout. The protocol is plain JSON text frames of
//! [`WireMessage`]; [`Session`] is synchronous so transcripts can be replayed
//! without a socket.

pub mod server;
pub mod session;
pub mod wire;

pub use server::{serve, serve_connection};
pub use session::{Mode, PolicyHandle, Session, SessionConfig};
pub use wire::{
    ControlPayload, ErrorPayload, HelloPayload, MarkPhasePayload, MessageType, RecordedEpisode,
    RecordingStatus, StartRecordPayload, StartRolloutPayload, StatePayload, WireMessage,
};
