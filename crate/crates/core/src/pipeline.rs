//! Enrichment of final transcripts into structured, timestamped log entries.

use std::sync::Mutex;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::is_asset_code;
use crate::canonical;
use crate::grammar::Intent;
use crate::time::{format_millis, is_utc_millis};
use crate::transcription::TranscriptHypothesis;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PipelineError {
    #[error("hypothesis for {0:?} is not final")]
    NotFinal(String),
    #[error("final transcript is empty")]
    EmptyTranscript,
    #[error("confidence {0} outside [0,1]")]
    ConfidenceOutOfRange(String),
}

/// Source of `logged_at` timestamps.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that starts at a fixed instant and advances by `step` on every
/// reading.
#[derive(Debug)]
pub struct SteppingClock {
    next: Mutex<DateTime<Utc>>,
    step: Duration,
}

impl SteppingClock {
    pub fn new(start: DateTime<Utc>, step: Duration) -> Self {
        Self { next: Mutex::new(start), step }
    }

    pub fn fixed(at: DateTime<Utc>) -> Self {
        Self::new(at, Duration::zero())
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> DateTime<Utc> {
        let mut next = self.next.lock().unwrap_or_else(|e| e.into_inner());
        let t = *next;
        *next = t + self.step;
        t
    }
}

/// The durable record of one final transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogEntry {
    pub entry_id: String,
    pub session_id: String,
    pub entry_seq: u64,
    pub operator: String,
    pub asset_id: Option<String>,
    pub spoken_text: String,
    pub intent: Intent,
    pub confidence: f64,
    pub logged_at: String,
    pub schema_version: u32,
}

impl LogEntry {
    pub fn format_entry_id(session_id: &str, entry_seq: u64) -> String {
        format!("{session_id}-{entry_seq:06}")
    }

    /// Canonical JSON bytes: sorted keys, no whitespace.
    pub fn to_canonical_json(&self) -> Vec<u8> {
        canonical::to_vec(self).expect("log entries always serialize")
    }

    pub fn from_json(bytes: &[u8]) -> serde_json::Result<Self> {
        serde_json::from_slice(bytes)
    }

    /// The UTC date of `logged_at` as `YYYY-MM-DD`, if the timestamp is valid.
    pub fn logged_date(&self) -> Option<String> {
        crate::time::parse_rfc3339(&self.logged_at).map(|t| t.format("%Y-%m-%d").to_string())
    }
}

/// Per-session metadata folded into each entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionContext {
    pub session_id: String,
    pub operator: String,
    pub attached_asset_id: Option<String>,
    pub next_entry_seq: u64,
}

impl SessionContext {
    pub fn new(session_id: impl Into<String>, operator: impl Into<String>) -> Self {
        Self { session_id: session_id.into(), operator: operator.into(), attached_asset_id: None, next_entry_seq: 1 }
    }
}

pub fn build_log_entry(
    final_hypothesis: &TranscriptHypothesis,
    intent: Intent,
    ctx: &SessionContext,
    now: DateTime<Utc>,
) -> Result<(LogEntry, SessionContext), PipelineError> {
    if !final_hypothesis.is_final() {
        return Err(PipelineError::NotFinal(final_hypothesis.utterance_id.clone()));
    }
    if final_hypothesis.text.is_empty() {
        return Err(PipelineError::EmptyTranscript);
    }
    if !(0.0..=1.0).contains(&final_hypothesis.confidence) {
        return Err(PipelineError::ConfidenceOutOfRange(final_hypothesis.confidence.to_string()));
    }
    let entry_seq = ctx.next_entry_seq;
    let entry = LogEntry {
        entry_id: LogEntry::format_entry_id(&ctx.session_id, entry_seq),
        session_id: ctx.session_id.clone(),
        entry_seq,
        operator: ctx.operator.clone(),
        asset_id: ctx.attached_asset_id.clone(),
        spoken_text: final_hypothesis.text.clone(),
        intent,
        confidence: final_hypothesis.confidence,
        logged_at: format_millis(now),
        schema_version: SCHEMA_VERSION,
    };
    let mut next = ctx.clone();
    next.next_entry_seq += 1;
    Ok((entry, next))
}

/// Returns every invariant violation of `entry`; empty means valid.
pub fn validate_entry(entry: &LogEntry) -> Vec<String> {
    let mut v = Vec::new();
    if entry.session_id.is_empty() {
        v.push("session_id is empty".to_string());
    }
    if entry.entry_seq == 0 {
        v.push("entry_seq must be positive".to_string());
    }
    let expected_id = LogEntry::format_entry_id(&entry.session_id, entry.entry_seq);
    if entry.entry_id != expected_id {
        v.push(format!("entry_id {:?} should be {expected_id:?}", entry.entry_id));
    }
    if entry.operator.is_empty() {
        v.push("operator is empty".to_string());
    }
    if let Some(asset) = &entry.asset_id {
        if !is_asset_code(asset) {
            v.push(format!("asset_id {asset:?} is not a normalized asset code"));
        }
    }
    if entry.spoken_text.is_empty() {
        v.push("spoken_text is empty".to_string());
    }
    if let Err(e) = entry.intent.check() {
        v.push(e);
    }
    if !(0.0..=1.0).contains(&entry.confidence) {
        v.push(format!("confidence {} outside [0,1]", entry.confidence));
    }
    if !is_utc_millis(&entry.logged_at) {
        v.push(format!("logged_at {:?} is not RFC 3339 UTC with milliseconds", entry.logged_at));
    }
    if entry.schema_version != SCHEMA_VERSION {
        v.push(format!("schema_version {} is not {SCHEMA_VERSION}", entry.schema_version));
    }
    v
}
