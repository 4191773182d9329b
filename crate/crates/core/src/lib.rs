//! Core logic for the hands-free maintenance logging platform.
//!
//! Everything in this crate is synchronous and free of network code. The
//! gateway service and the replay harness compose these pieces:
//!
//! - [`auth`]: HS256 access tokens for field clients.
//! - [`protocol`]: the versioned stream envelope and the session state machine.
//! - [`transcription`]: the streaming transcription provider interface and the
//!   deterministic scripted provider.
//! - [`grammar`]: voice-command intent parsing.
//! - [`pipeline`]: enrichment of final transcripts into [`LogEntry`] records.
//! - [`store`]: the append-only on-disk entry store.
//! - [`assets`]: the asset registry and QR payload codec.
//! - [`replay`]: session scripts, latency summaries and replay reports.

pub mod assets;
pub mod auth;
pub mod canonical;
pub mod grammar;
pub mod pipeline;
pub mod protocol;
pub mod replay;
pub mod store;
pub mod time;
pub mod transcription;

pub use assets::{Asset, AssetError, AssetId, AssetRegistry};
pub use auth::{AuthError, SigningKey, TokenClaims};
pub use grammar::{Intent, Severity};
pub use pipeline::{Clock, LogEntry, SessionContext};
pub use protocol::{Direction, MessageType, Payload, Phase, ProtocolMessage, SessionState};
pub use store::{EntryFilter, LogStore, StoreError};
pub use transcription::{ScriptedProvider, TranscriptHypothesis, TranscriptionProvider, UtteranceChunk};
