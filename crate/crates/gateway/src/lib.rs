//! Streaming gateway: authenticated WebSocket sessions that turn scripted
//! speech into durable log entries, plus the REST query and asset API.

pub mod config;
pub mod server;
pub mod session;

use std::io;
use std::path::PathBuf;

use hfm_core::{AssetError, AuthError, StoreError};
use thiserror::Error;

pub use config::GatewayConfig;
pub use server::{router, AppState, RunningGateway};
pub use session::{Outcome, SessionDriver, SessionServices};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("I/O at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bind: {0}")]
    Bind(#[source] io::Error),
    #[error("signing key: {0}")]
    Key(#[from] AuthError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Asset(#[from] AssetError),
}
