//! Streams octree construction to remote viewers.
//!
//! The server runs the update loop and appends every structural change to an
//! in-memory [`EventLog`]. Each WebSocket client replays the log from the
//! beginning at its own pace, so late joiners see a consistent snapshot and
//! slow clients never hold up the updater.

pub mod mirror;
pub mod protocol;
mod server;

use thiserror::Error;

pub use mirror::{Mirror, MirrorNode, ProtocolViolation};
pub use protocol::{Hello, MalformedMessage, StatsTick, StreamMessage, PROTOCOL_VERSION};
pub use server::{mirror_from, stream_to_log, EventLog, Server, StreamOptions, StreamSummary};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind: {0}")]
    Bind(std::io::Error),
    #[error(transparent)]
    Io(#[from] crate::io::IoError),
    #[error(transparent)]
    Update(#[from] crate::update::UpdateError),
    #[error("websocket handshake failed: {0}")]
    Handshake(String),
    #[error(transparent)]
    WebSocket(#[from] tungstenite::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolViolation),
}
