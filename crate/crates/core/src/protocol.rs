//! The versioned stream envelope and the per-session state machine.
//!
//! Every stream frame carries exactly one envelope:
//!
//! ```text
//! {"v":1,"type":"Heartbeat","seq":5,"sid":"s-7f3a","ts":"2025-03-14T10:22:05.120Z","body":{}}
//! ```
//!
//! `sid` is omitted before the session has started. Message types form a
//! closed set at version 1; unknown types are rejected.

use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical;
use crate::grammar::Intent;
use crate::time::parse_rfc3339;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("invalid JSON: {0}")]
    Parse(String),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid message: {0}")]
    InvalidMessage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageType {
    Auth,
    AuthOk,
    AuthErr,
    SessionStart,
    SessionStarted,
    UtteranceBegin,
    UtteranceChunk,
    UtteranceEnd,
    PartialTranscript,
    FinalTranscript,
    LogCommitted,
    AttachAssetMsg,
    SessionEnd,
    SessionClosed,
    Heartbeat,
    ProtocolError,
}

impl MessageType {
    pub const ALL: [MessageType; 16] = [
        MessageType::Auth,
        MessageType::AuthOk,
        MessageType::AuthErr,
        MessageType::SessionStart,
        MessageType::SessionStarted,
        MessageType::UtteranceBegin,
        MessageType::UtteranceChunk,
        MessageType::UtteranceEnd,
        MessageType::PartialTranscript,
        MessageType::FinalTranscript,
        MessageType::LogCommitted,
        MessageType::AttachAssetMsg,
        MessageType::SessionEnd,
        MessageType::SessionClosed,
        MessageType::Heartbeat,
        MessageType::ProtocolError,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageType::Auth => "Auth",
            MessageType::AuthOk => "AuthOk",
            MessageType::AuthErr => "AuthErr",
            MessageType::SessionStart => "SessionStart",
            MessageType::SessionStarted => "SessionStarted",
            MessageType::UtteranceBegin => "UtteranceBegin",
            MessageType::UtteranceChunk => "UtteranceChunk",
            MessageType::UtteranceEnd => "UtteranceEnd",
            MessageType::PartialTranscript => "PartialTranscript",
            MessageType::FinalTranscript => "FinalTranscript",
            MessageType::LogCommitted => "LogCommitted",
            MessageType::AttachAssetMsg => "AttachAssetMsg",
            MessageType::SessionEnd => "SessionEnd",
            MessageType::SessionClosed => "SessionClosed",
            MessageType::Heartbeat => "Heartbeat",
            MessageType::ProtocolError => "ProtocolError",
        }
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MessageType {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, ProtocolError> {
        MessageType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| ProtocolError::UnknownType(s.to_string()))
    }
}

/// Which side sent a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    ClientToServer,
    ServerToClient,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::ClientToServer => "c2s",
            Direction::ServerToClient => "s2c",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Empty {}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthBody {
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthOkBody {
    pub subject: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthErrReason {
    Malformed,
    BadSignature,
    Expired,
    MissingScope,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthErrBody {
    pub reason: AuthErrReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStartedBody {
    pub session_id: String,
    pub operator: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceRef {
    pub utterance_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceChunkBody {
    pub utterance_id: String,
    pub chunk_index: u32,
    /// `[word, confidence]` pairs.
    pub tokens: Vec<(String, f64)>,
    #[serde(default)]
    pub is_last: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptBody {
    pub utterance_id: String,
    pub text: String,
    pub confidence: f64,
    pub hypothesis_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogCommittedBody {
    pub utterance_id: String,
    pub entry_id: String,
    pub entry_seq: u64,
    pub path: String,
    pub intent: Intent,
    pub logged_at: String,
    /// Set when an AttachAsset command named an asset the registry does not know.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub asset_unknown: bool,
}

/// Client→server: attach by `asset_id` or by scanned `qr_payload`.
/// Server→client: the outcome, with `asset_unknown` set when the asset was
/// not attached.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttachAssetBody {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asset_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qr_payload: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub asset_unknown: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionClosedBody {
    pub entries_committed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolErrorBody {
    pub code: String,
    #[serde(default)]
    pub detail: String,
}

/// Typed message bodies, one variant per [`MessageType`].
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Auth(AuthBody),
    AuthOk(AuthOkBody),
    AuthErr(AuthErrBody),
    SessionStart(Empty),
    SessionStarted(SessionStartedBody),
    UtteranceBegin(UtteranceRef),
    UtteranceChunk(UtteranceChunkBody),
    UtteranceEnd(UtteranceRef),
    PartialTranscript(TranscriptBody),
    FinalTranscript(TranscriptBody),
    LogCommitted(LogCommittedBody),
    AttachAssetMsg(AttachAssetBody),
    SessionEnd(Empty),
    SessionClosed(SessionClosedBody),
    Heartbeat(Empty),
    ProtocolError(ProtocolErrorBody),
}

impl Payload {
    pub fn message_type(&self) -> MessageType {
        match self {
            Payload::Auth(_) => MessageType::Auth,
            Payload::AuthOk(_) => MessageType::AuthOk,
            Payload::AuthErr(_) => MessageType::AuthErr,
            Payload::SessionStart(_) => MessageType::SessionStart,
            Payload::SessionStarted(_) => MessageType::SessionStarted,
            Payload::UtteranceBegin(_) => MessageType::UtteranceBegin,
            Payload::UtteranceChunk(_) => MessageType::UtteranceChunk,
            Payload::UtteranceEnd(_) => MessageType::UtteranceEnd,
            Payload::PartialTranscript(_) => MessageType::PartialTranscript,
            Payload::FinalTranscript(_) => MessageType::FinalTranscript,
            Payload::LogCommitted(_) => MessageType::LogCommitted,
            Payload::AttachAssetMsg(_) => MessageType::AttachAssetMsg,
            Payload::SessionEnd(_) => MessageType::SessionEnd,
            Payload::SessionClosed(_) => MessageType::SessionClosed,
            Payload::Heartbeat(_) => MessageType::Heartbeat,
            Payload::ProtocolError(_) => MessageType::ProtocolError,
        }
    }

    /// The utterance this message refers to, if any.
    pub fn utterance_id(&self) -> Option<&str> {
        match self {
            Payload::UtteranceBegin(b) | Payload::UtteranceEnd(b) => Some(&b.utterance_id),
            Payload::UtteranceChunk(b) => Some(&b.utterance_id),
            Payload::PartialTranscript(b) | Payload::FinalTranscript(b) => Some(&b.utterance_id),
            Payload::LogCommitted(b) => Some(&b.utterance_id),
            _ => None,
        }
    }

    pub fn protocol_error(code: impl Into<String>, detail: impl Into<String>) -> Self {
        Payload::ProtocolError(ProtocolErrorBody { code: code.into(), detail: detail.into() })
    }

    fn body_json(&self) -> serde_json::Result<String> {
        match self {
            Payload::Auth(b) => canonical::to_string(b),
            Payload::AuthOk(b) => canonical::to_string(b),
            Payload::AuthErr(b) => canonical::to_string(b),
            Payload::SessionStart(b) | Payload::SessionEnd(b) | Payload::Heartbeat(b) => canonical::to_string(b),
            Payload::SessionStarted(b) => canonical::to_string(b),
            Payload::UtteranceBegin(b) | Payload::UtteranceEnd(b) => canonical::to_string(b),
            Payload::UtteranceChunk(b) => canonical::to_string(b),
            Payload::PartialTranscript(b) | Payload::FinalTranscript(b) => canonical::to_string(b),
            Payload::LogCommitted(b) => canonical::to_string(b),
            Payload::AttachAssetMsg(b) => canonical::to_string(b),
            Payload::SessionClosed(b) => canonical::to_string(b),
            Payload::ProtocolError(b) => canonical::to_string(b),
        }
    }

    fn from_body(kind: MessageType, body: Value) -> Result<Self, ProtocolError> {
        fn de<T: DeserializeOwned>(kind: MessageType, body: Value) -> Result<T, ProtocolError> {
            serde_json::from_value(body).map_err(|e| ProtocolError::Schema(format!("{kind} body: {e}")))
        }
        Ok(match kind {
            MessageType::Auth => Payload::Auth(de(kind, body)?),
            MessageType::AuthOk => Payload::AuthOk(de(kind, body)?),
            MessageType::AuthErr => Payload::AuthErr(de(kind, body)?),
            MessageType::SessionStart => Payload::SessionStart(de(kind, body)?),
            MessageType::SessionStarted => Payload::SessionStarted(de(kind, body)?),
            MessageType::UtteranceBegin => Payload::UtteranceBegin(de(kind, body)?),
            MessageType::UtteranceChunk => Payload::UtteranceChunk(de(kind, body)?),
            MessageType::UtteranceEnd => Payload::UtteranceEnd(de(kind, body)?),
            MessageType::PartialTranscript => Payload::PartialTranscript(de(kind, body)?),
            MessageType::FinalTranscript => Payload::FinalTranscript(de(kind, body)?),
            MessageType::LogCommitted => Payload::LogCommitted(de(kind, body)?),
            MessageType::AttachAssetMsg => Payload::AttachAssetMsg(de(kind, body)?),
            MessageType::SessionEnd => Payload::SessionEnd(de(kind, body)?),
            MessageType::SessionClosed => Payload::SessionClosed(de(kind, body)?),
            MessageType::Heartbeat => Payload::Heartbeat(de(kind, body)?),
            MessageType::ProtocolError => Payload::ProtocolError(de(kind, body)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolMessage {
    pub version: u32,
    pub seq: u64,
    pub session_id: Option<String>,
    /// RFC 3339 UTC send time.
    pub sent_at: String,
    pub payload: Payload,
}

impl ProtocolMessage {
    pub fn new(seq: u64, session_id: Option<String>, sent_at: impl Into<String>, payload: Payload) -> Self {
        Self { version: PROTOCOL_VERSION, seq, session_id, sent_at: sent_at.into(), payload }
    }

    pub fn message_type(&self) -> MessageType {
        self.payload.message_type()
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.version != PROTOCOL_VERSION {
            return Err(ProtocolError::InvalidMessage(format!("unsupported version {}", self.version)));
        }
        if self.seq == 0 {
            return Err(ProtocolError::InvalidMessage("seq must be positive".into()));
        }
        if parse_rfc3339(&self.sent_at).is_none() {
            return Err(ProtocolError::InvalidMessage(format!("ts {:?} is not RFC 3339", self.sent_at)));
        }
        if let Some(sid) = &self.session_id {
            if sid.is_empty() {
                return Err(ProtocolError::InvalidMessage("sid is empty".into()));
            }
        }
        if let Payload::SessionStarted(b) = &self.payload {
            if self.session_id.as_deref() != Some(b.session_id.as_str()) {
                return Err(ProtocolError::InvalidMessage("SessionStarted sid must equal body.session_id".into()));
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    v: u32,
    #[serde(rename = "type")]
    kind: String,
    seq: u64,
    #[serde(default)]
    sid: Option<String>,
    ts: String,
    body: Value,
}

/// Encodes a message as a single-line JSON object with fields in the order
/// `v,type,seq,sid,ts,body`.
pub fn encode_message(msg: &ProtocolMessage) -> Result<String, ProtocolError> {
    msg.validate()?;
    let body = msg.payload.body_json().map_err(|e| ProtocolError::InvalidMessage(e.to_string()))?;
    let ts = serde_json::to_string(&msg.sent_at).expect("strings always serialize");
    let mut out = format!(r#"{{"v":{},"type":"{}","seq":{}"#, msg.version, msg.message_type(), msg.seq);
    if let Some(sid) = &msg.session_id {
        out.push_str(r#","sid":"#);
        out.push_str(&serde_json::to_string(sid).expect("strings always serialize"));
    }
    out.push_str(&format!(r#","ts":{ts},"body":{body}}}"#));
    Ok(out)
}

pub fn decode_message(text: &str) -> Result<ProtocolMessage, ProtocolError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ProtocolError::Parse(e.to_string()))?;
    let kind = match value.get("type") {
        Some(Value::String(s)) => s.parse::<MessageType>()?,
        Some(_) => return Err(ProtocolError::Schema("`type` must be a string".into())),
        None => return Err(ProtocolError::Schema("missing `type`".into())),
    };
    let env: Envelope = serde_json::from_value(value).map_err(|e| ProtocolError::Schema(e.to_string()))?;
    debug_assert_eq!(env.kind, kind.as_str());
    if !env.body.is_object() {
        return Err(ProtocolError::Schema("`body` must be an object".into()));
    }
    let msg = ProtocolMessage {
        version: env.v,
        seq: env.seq,
        session_id: env.sid,
        sent_at: env.ts,
        payload: Payload::from_body(kind, env.body)?,
    };
    msg.validate()?;
    Ok(msg)
}

/// Session lifecycle phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    AwaitingAuth,
    Ready,
    Active,
    Dictating,
    Closed,
}

impl Phase {
    pub const ALL: [Phase; 5] = [Phase::AwaitingAuth, Phase::Ready, Phase::Active, Phase::Dictating, Phase::Closed];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::AwaitingAuth => "AwaitingAuth",
            Phase::Ready => "Ready",
            Phase::Active => "Active",
            Phase::Dictating => "Dictating",
            Phase::Closed => "Closed",
        }
    }
}

/// An utterance whose `UtteranceEnd` was accepted but whose final transcript
/// and commit confirmation are still outstanding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingUtterance {
    pub utterance_id: String,
    pub final_sent: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionState {
    pub phase: Phase,
    pub session_id: Option<String>,
    pub operator_subject: Option<String>,
    pub attached_asset_id: Option<String>,
    /// Set iff `phase == Dictating`.
    pub current_utterance_id: Option<String>,
    pub pending: Option<PendingUtterance>,
    pub next_entry_seq: u64,
}

impl Default for SessionState {
    fn default() -> Self {
        Self::new()
    }
}

impl SessionState {
    pub fn new() -> Self {
        Self {
            phase: Phase::AwaitingAuth,
            session_id: None,
            operator_subject: None,
            attached_asset_id: None,
            current_utterance_id: None,
            pending: None,
            next_entry_seq: 1,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.phase == Phase::Closed
    }

    fn close(&mut self) {
        self.phase = Phase::Closed;
        self.current_utterance_id = None;
        self.pending = None;
    }
}

/// The pure transition function.
///
/// Returns the next state and whether the message was legal. Illegal
/// messages leave the state unchanged.
pub fn step_session_state(state: &SessionState, msg: &ProtocolMessage, direction: Direction) -> (SessionState, bool) {
    let mut next = state.clone();
    if apply(&mut next, msg, direction) {
        (next, true)
    } else {
        (state.clone(), false)
    }
}

fn apply(s: &mut SessionState, msg: &ProtocolMessage, direction: Direction) -> bool {
    use Direction::{ClientToServer as C2S, ServerToClient as S2C};
    use Phase::*;

    let started = matches!(s.phase, Active | Dictating);
    let sid_ok = match (&msg.payload, started) {
        (Payload::SessionStarted(b), false) => msg.session_id.as_deref() == Some(b.session_id.as_str()),
        (_, true) => msg.session_id.is_some() && msg.session_id == s.session_id,
        (_, false) => msg.session_id.is_none(),
    };
    // A closing acknowledgement may still carry the sid of a started session.
    let closing_ack = matches!(msg.payload, Payload::SessionClosed(_)) && direction == S2C;
    if !sid_ok && !(closing_ack && (msg.session_id.is_none() || msg.session_id == s.session_id)) {
        return false;
    }

    let open_id = s.current_utterance_id.clone();
    let matches_open = |id: &str| open_id.as_deref() == Some(id);

    match (s.phase, &msg.payload, direction) {
        (_, Payload::SessionClosed(_), S2C) => s.close(),
        (Closed, _, _) => return false,

        (Ready | Active | Dictating, Payload::Heartbeat(_), _) => {}
        (_, Payload::ProtocolError(_), S2C) => s.close(),

        (AwaitingAuth, Payload::Auth(_), C2S) => {}
        (AwaitingAuth, Payload::AuthOk(b), S2C) => {
            if b.subject.is_empty() {
                return false;
            }
            s.operator_subject = Some(b.subject.clone());
            s.phase = Ready;
        }
        (AwaitingAuth, Payload::AuthErr(_), S2C) => s.close(),

        (Ready, Payload::SessionStart(_), C2S) => {}
        (Ready, Payload::SessionStarted(b), S2C) => {
            s.session_id = Some(b.session_id.clone());
            s.phase = Active;
        }

        (Ready | Active, Payload::AttachAssetMsg(_), _) => {}
        (Ready | Active | Dictating, Payload::SessionEnd(_), C2S) => s.close(),

        (Active, Payload::UtteranceBegin(b), C2S) => {
            if b.utterance_id.is_empty() || s.pending.is_some() {
                return false;
            }
            s.current_utterance_id = Some(b.utterance_id.clone());
            s.phase = Dictating;
        }
        (Dictating, Payload::UtteranceChunk(b), C2S) if matches_open(&b.utterance_id) => {}
        (Dictating, Payload::PartialTranscript(b), S2C) if matches_open(&b.utterance_id) => {}
        (Dictating, Payload::UtteranceEnd(b), C2S) if matches_open(&b.utterance_id) => {
            s.pending = Some(PendingUtterance { utterance_id: b.utterance_id.clone(), final_sent: false });
            s.current_utterance_id = None;
            s.phase = Active;
        }
        (Active, Payload::FinalTranscript(b), S2C) => match &mut s.pending {
            Some(p) if p.utterance_id == b.utterance_id && !p.final_sent => {
                if b.text.is_empty() {
                    // Empty finals are never logged, so no commit follows.
                    s.pending = None;
                } else {
                    p.final_sent = true;
                }
            }
            _ => return false,
        },
        (Active, Payload::LogCommitted(b), S2C) => match &s.pending {
            Some(p) if p.utterance_id == b.utterance_id && p.final_sent => {
                s.pending = None;
                s.next_entry_seq += 1;
            }
            _ => return false,
        },

        _ => return false,
    }
    true
}

/// Checks that a peer's sequence numbers increase by exactly one from 1.
#[derive(Debug, Clone, Default)]
pub struct SeqChecker {
    last: u64,
}

impl SeqChecker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accepts `seq` if it is the successor of the previous one.
    pub fn accept(&mut self, seq: u64) -> Result<(), (u64, u64)> {
        let expected = self.last + 1;
        if seq != expected {
            return Err((expected, seq));
        }
        self.last = seq;
        Ok(())
    }
}

/// Hands out outbound sequence numbers starting at 1.
#[derive(Debug, Clone, Default)]
pub struct SeqCounter {
    last: u64,
}

impl SeqCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_seq(&mut self) -> u64 {
        self.last += 1;
        self.last
    }
}
