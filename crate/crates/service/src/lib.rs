//! Live demonstration recording: a raw game ticked at a fixed cadence,
//! keyboard chords resolved to actions, every fourth frame written to a
//! demonstration dataset, all driven over a WebSocket.

pub mod client;
pub mod keys;
pub mod protocol;
pub mod server;
pub mod session;

pub use server::{router, serve, Pacing, ServerConfig};
pub use session::{EndReason, Session, SessionConfig, SessionSummary};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] lfd_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("session state error: {0}")]
    State(String),
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
