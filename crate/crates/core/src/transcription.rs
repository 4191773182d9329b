//! Streaming transcription: the provider interface and the scripted provider.
//!
//! Providers consume pre-tokenized utterance chunks and emit partial and final
//! hypotheses. Each partial carries the full hypothesis so far; clients
//! replace their live display with it rather than appending.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TranscriptionError {
    #[error("utterance {0:?} is already open")]
    DuplicateUtterance(String),
    #[error("utterance {0:?} is not open")]
    UnknownUtterance(String),
    #[error("utterance {utterance_id:?}: expected chunk {expected}, got {got}")]
    OutOfOrderChunk { utterance_id: String, expected: u32, got: u32 },
    #[error("invalid chunk: {0}")]
    InvalidChunk(String),
}

/// One recognized word and its confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub confidence: f64,
}

impl Token {
    pub fn new(text: impl Into<String>, confidence: f64) -> Self {
        Self { text: text.into(), confidence }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceChunk {
    pub utterance_id: String,
    pub chunk_index: u32,
    pub tokens: Vec<Token>,
    pub is_last: bool,
}

impl UtteranceChunk {
    fn check(&self) -> Result<(), TranscriptionError> {
        for t in &self.tokens {
            if t.text.is_empty() || t.text.chars().any(char::is_whitespace) {
                return Err(TranscriptionError::InvalidChunk(format!("token {:?} is not a single word", t.text)));
            }
            if !(0.0..=1.0).contains(&t.confidence) {
                return Err(TranscriptionError::InvalidChunk(format!(
                    "confidence {} of {:?} outside [0,1]",
                    t.confidence, t.text
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HypothesisKind {
    Partial,
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHypothesis {
    pub utterance_id: String,
    pub kind: HypothesisKind,
    pub text: String,
    pub confidence: f64,
    pub hypothesis_index: u32,
}

impl TranscriptHypothesis {
    pub fn is_final(&self) -> bool {
        self.kind == HypothesisKind::Final
    }
}

/// A streaming transcription backend.
///
/// Implementations are single-session and must be driven serially per
/// utterance by the caller.
pub trait TranscriptionProvider: Send {
    fn open_utterance(&mut self, utterance_id: &str) -> Result<(), TranscriptionError>;

    /// Feeds the next chunk, returning the hypotheses it produced.
    fn feed_chunk(&mut self, chunk: &UtteranceChunk) -> Result<Vec<TranscriptHypothesis>, TranscriptionError>;

    /// Finalizes the utterance and releases it.
    fn close_utterance(&mut self, utterance_id: &str) -> Result<TranscriptHypothesis, TranscriptionError>;

    /// Forgets an open utterance without producing a final hypothesis.
    fn discard_utterance(&mut self, utterance_id: &str) -> bool;
}

/// Rounds to three decimals, halves away from zero.
///
/// A small epsilon absorbs binary representation error so that values such
/// as 0.8505 round up as written.
pub fn round_confidence(x: f64) -> f64 {
    ((x * 1000.0) + 0.5 + 1e-9).floor() / 1000.0
}

#[derive(Debug, Default)]
struct Buffer {
    words: Vec<String>,
    confidence_sum: f64,
    next_chunk: u32,
    next_hypothesis: u32,
}

impl Buffer {
    fn hypothesis(&mut self, utterance_id: &str, kind: HypothesisKind) -> TranscriptHypothesis {
        let confidence = if self.words.is_empty() {
            0.0
        } else {
            round_confidence(self.confidence_sum / self.words.len() as f64)
        };
        let h = TranscriptHypothesis {
            utterance_id: utterance_id.to_string(),
            kind,
            text: self.words.join(" "),
            confidence,
            hypothesis_index: self.next_hypothesis,
        };
        self.next_hypothesis += 1;
        h
    }
}

/// Deterministic provider that treats the chunk tokens as the recognition
/// result: text is the buffered words joined by single spaces, confidence is
/// their arithmetic mean.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    open: HashMap<String, Buffer>,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_open(&self, utterance_id: &str) -> bool {
        self.open.contains_key(utterance_id)
    }
}

impl TranscriptionProvider for ScriptedProvider {
    fn open_utterance(&mut self, utterance_id: &str) -> Result<(), TranscriptionError> {
        if self.open.contains_key(utterance_id) {
            return Err(TranscriptionError::DuplicateUtterance(utterance_id.to_string()));
        }
        self.open.insert(utterance_id.to_string(), Buffer::default());
        Ok(())
    }

    fn feed_chunk(&mut self, chunk: &UtteranceChunk) -> Result<Vec<TranscriptHypothesis>, TranscriptionError> {
        let id = chunk.utterance_id.as_str();
        let buffer = self
            .open
            .get_mut(id)
            .ok_or_else(|| TranscriptionError::UnknownUtterance(id.to_string()))?;
        if chunk.chunk_index != buffer.next_chunk {
            return Err(TranscriptionError::OutOfOrderChunk {
                utterance_id: id.to_string(),
                expected: buffer.next_chunk,
                got: chunk.chunk_index,
            });
        }
        chunk.check()?;

        buffer.next_chunk += 1;
        for t in &chunk.tokens {
            buffer.words.push(t.text.clone());
            buffer.confidence_sum += t.confidence;
        }
        let mut emitted = vec![buffer.hypothesis(id, HypothesisKind::Partial)];
        if chunk.is_last {
            emitted.push(buffer.hypothesis(id, HypothesisKind::Final));
            self.open.remove(id);
        }
        Ok(emitted)
    }

    fn close_utterance(&mut self, utterance_id: &str) -> Result<TranscriptHypothesis, TranscriptionError> {
        let mut buffer = self
            .open
            .remove(utterance_id)
            .ok_or_else(|| TranscriptionError::UnknownUtterance(utterance_id.to_string()))?;
        Ok(buffer.hypothesis(utterance_id, HypothesisKind::Final))
    }

    fn discard_utterance(&mut self, utterance_id: &str) -> bool {
        self.open.remove(utterance_id).is_some()
    }
}
