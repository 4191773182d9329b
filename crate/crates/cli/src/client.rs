//! Client side of the gateway's REST and stream interfaces.

use std::collections::BTreeSet;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use hfm_core::pipeline::LogEntry;
use hfm_core::protocol::*;
use hfm_core::time::format_millis;
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;
use tokio_tungstenite::tungstenite::Message;

use hfm_core::replay::ReplayReport;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("connection failed: {0}")]
    ConnectionFailed(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("verification failed: {}", problems.join("; "))]
    VerificationFailed { problems: Vec<String>, report: Box<ReplayReport> },
}

impl ReplayError {
    /// The partial report, when the session ran to completion.
    pub fn report(&self) -> Option<&ReplayReport> {
        match self {
            ReplayError::VerificationFailed { report, .. } => Some(report),
            _ => None,
        }
    }
}

fn connection(e: impl std::fmt::Display) -> ReplayError {
    ReplayError::ConnectionFailed(e.to_string())
}

fn violation(msg: impl Into<String>) -> ReplayError {
    ReplayError::ProtocolViolation(msg.into())
}

/// Base HTTP URL for a gateway given as `host:port` or a full URL.
pub fn base_url(gateway: &str) -> String {
    let trimmed = gateway.trim_end_matches('/');
    if trimmed.contains("://") {
        trimmed.to_string()
    } else {
        format!("http://{trimmed}")
    }
}

fn stream_url(base: &str) -> String {
    let ws = if let Some(rest) = base.strip_prefix("https://") {
        format!("wss://{rest}")
    } else if let Some(rest) = base.strip_prefix("http://") {
        format!("ws://{rest}")
    } else {
        base.to_string()
    };
    format!("{ws}/api/v1/stream")
}

/// REST access to one gateway.
#[derive(Debug, Clone)]
pub struct RestClient {
    base: String,
    http: reqwest::Client,
}

#[derive(Deserialize)]
struct TokenResponse {
    token: String,
}

impl RestClient {
    pub fn new(gateway: &str) -> Self {
        let http = reqwest::Client::builder().timeout(Duration::from_secs(30)).build().expect("HTTP client builds");
        Self { base: base_url(gateway), http }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub async fn token(&self, subject: &str, passphrase: &str) -> Result<String, ReplayError> {
        let resp = self
            .http
            .post(format!("{}/api/v1/auth/token", self.base))
            .json(&json!({ "subject": subject, "passphrase": passphrase }))
            .send()
            .await
            .map_err(connection)?;
        if !resp.status().is_success() {
            return Err(ReplayError::ConnectionFailed(format!("token request rejected: {}", resp.status())));
        }
        Ok(resp.json::<TokenResponse>().await.map_err(connection)?.token)
    }

    async fn get_json<T: serde::de::DeserializeOwned>(&self, path: &str, token: &str) -> Result<T, ReplayError> {
        let resp = self.http.get(format!("{}{path}", self.base)).bearer_auth(token).send().await.map_err(connection)?;
        if !resp.status().is_success() {
            let status = resp.status();
            let body = resp.text().await.unwrap_or_default();
            return Err(ReplayError::ConnectionFailed(format!("GET {path}: {status} {body}")));
        }
        resp.json().await.map_err(connection)
    }

    pub async fn session_entries(&self, token: &str, session_id: &str, date: &str) -> Result<Vec<LogEntry>, ReplayError> {
        self.get_json(&format!("/api/v1/sessions/{session_id}/entries?date={date}"), token).await
    }

    /// Entries of a session across every date its commits landed on.
    pub async fn session_entries_on(
        &self,
        token: &str,
        session_id: &str,
        dates: &BTreeSet<String>,
    ) -> Result<Vec<LogEntry>, ReplayError> {
        let mut out: Vec<LogEntry> = Vec::new();
        for date in dates {
            for e in self.session_entries(token, session_id, date).await? {
                if !out.iter().any(|o| o.entry_id == e.entry_id) {
                    out.push(e);
                }
            }
        }
        out.sort_by_key(|e| e.entry_seq);
        Ok(out)
    }

    pub async fn entries(&self, token: &str, asset: Option<&str>) -> Result<Vec<LogEntry>, ReplayError> {
        match asset {
            Some(a) => self.get_json(&format!("/api/v1/entries?asset={a}"), token).await,
            None => self.get_json("/api/v1/entries", token).await,
        }
    }

    pub async fn register_asset(&self, token: &str, asset: &hfm_core::Asset) -> Result<(), ReplayError> {
        let resp = self
            .http
            .post(format!("{}/api/v1/assets", self.base))
            .bearer_auth(token)
            .json(asset)
            .send()
            .await
            .map_err(connection)?;
        match resp.status().as_u16() {
            201 | 409 => Ok(()),
            s => Err(ReplayError::ConnectionFailed(format!("asset registration failed: {s}"))),
        }
    }
}

type Socket = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

/// A stream connection that checks every message against the session
/// state machine, in both directions.
pub struct StreamClient {
    socket: Socket,
    state: SessionState,
    out_seq: SeqCounter,
    in_seq: SeqChecker,
    recv_timeout: Duration,
}

impl StreamClient {
    pub async fn connect(gateway: &str) -> Result<Self, ReplayError> {
        let url = stream_url(&base_url(gateway));
        let (socket, _) = tokio_tungstenite::connect_async_with_config(url, None, true).await.map_err(connection)?;
        Ok(Self {
            socket,
            state: SessionState::new(),
            out_seq: SeqCounter::new(),
            in_seq: SeqChecker::new(),
            recv_timeout: Duration::from_secs(30),
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.recv_timeout = timeout;
        self
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn session_id(&self) -> Option<&str> {
        self.state.session_id.as_deref()
    }

    pub async fn send(&mut self, payload: Payload) -> Result<(), ReplayError> {
        let msg = ProtocolMessage::new(
            self.out_seq.next_seq(),
            self.state.session_id.clone(),
            format_millis(chrono::Utc::now()),
            payload,
        );
        let (next, allowed) = step_session_state(&self.state, &msg, Direction::ClientToServer);
        if !allowed {
            return Err(violation(format!("client may not send {} in {}", msg.message_type(), self.state.phase.as_str())));
        }
        let frame = encode_message(&msg).map_err(|e| violation(e.to_string()))?;
        self.socket.send(Message::text(frame)).await.map_err(connection)?;
        self.state = next;
        Ok(())
    }

    /// Next server message; a closed connection is a `ConnectionFailed`.
    pub async fn recv(&mut self) -> Result<ProtocolMessage, ReplayError> {
        loop {
            let next = tokio::time::timeout(self.recv_timeout, self.socket.next())
                .await
                .map_err(|_| violation("timed out waiting for the gateway"))?;
            let text = match next {
                None => return Err(ReplayError::ConnectionFailed("connection closed".into())),
                Some(Err(e)) => return Err(connection(e)),
                Some(Ok(Message::Text(t))) => t,
                Some(Ok(Message::Close(_))) => return Err(ReplayError::ConnectionFailed("connection closed".into())),
                Some(Ok(_)) => continue,
            };
            let msg = decode_message(text.as_str()).map_err(|e| violation(e.to_string()))?;
            if let Err((expected, got)) = self.in_seq.accept(msg.seq) {
                return Err(violation(format!("server seq {got}, expected {expected}")));
            }
            let (next, allowed) = step_session_state(&self.state, &msg, Direction::ServerToClient);
            if !allowed {
                return Err(violation(format!("unexpected {} in {}", msg.message_type(), self.state.phase.as_str())));
            }
            self.state = next;
            return Ok(msg);
        }
    }

    /// Receives one message and requires it to be of type `want`.
    pub async fn expect(&mut self, want: MessageType) -> Result<Payload, ReplayError> {
        let msg = self.recv().await?;
        match msg.payload {
            Payload::ProtocolError(b) => Err(violation(format!("gateway error {}: {}", b.code, b.detail))),
            p if p.message_type() == want => Ok(p),
            p => Err(violation(format!("expected {want}, got {}", p.message_type()))),
        }
    }

    /// Authenticates and starts a session; returns the session id.
    pub async fn open_session(&mut self, token: &str) -> Result<String, ReplayError> {
        self.send(Payload::Auth(AuthBody { token: token.to_string() })).await?;
        match self.recv().await?.payload {
            Payload::AuthOk(_) => {}
            Payload::AuthErr(b) => return Err(violation(format!("authentication rejected: {:?}", b.reason))),
            p => return Err(violation(format!("expected AuthOk, got {}", p.message_type()))),
        }
        self.send(Payload::SessionStart(Empty {})).await?;
        match self.expect(MessageType::SessionStarted).await? {
            Payload::SessionStarted(b) => Ok(b.session_id),
            _ => unreachable!(),
        }
    }

    pub async fn close(mut self) {
        let _ = self.socket.close(None).await;
    }
}
