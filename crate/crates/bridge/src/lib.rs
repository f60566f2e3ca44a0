//! WebSocket bridge between a running session and a browser control room.
//!
//! The simulation runs on its own thread. Connection handlers read the
//! latest state frame from a watch channel and write commands into a
//! latest-value mailbox that the leader input drains once per tick.

pub mod live;
pub mod mailbox;
pub mod protocol;
pub mod server;

use thiserror::Error;

use teleguide_core::config::ConfigError;
use teleguide_core::experiment::ExperimentError;
use teleguide_core::session::SessionError;

pub use live::{LiveSession, ReplayTracker};
pub use mailbox::{apply_ui_command, CommandMailbox, RateLimiter, UiLeader};
pub use protocol::{parse_command, snapshot, ServerFrame, UiCommand, UiStateMessage, PROTOCOL_VERSION};
pub use server::BridgeServer;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("cannot listen on {0}: {1}")]
    Bind(String, std::io::Error),
    #[error("cannot start thread: {0}")]
    Thread(std::io::Error),
    #[error("replay: {0}")]
    Replay(String),
}
