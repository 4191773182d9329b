//! Scripted inspection sessions, latency summaries and replay reports.
//!
//! A script is a JSON document:
//!
//! ```json
//! {
//!   "operator": "tech-01",
//!   "passphrase": "field-demo",
//!   "asset_id": "RAIL-42",
//!   "utterances": [
//!     {"delay_ms": 250, "chunks": [
//!       {"gap_ms": 0, "tokens": [["crack", 0.9]]},
//!       {"gap_ms": 40, "tokens": [["detected", 0.8]]}
//!     ]}
//!   ]
//! }
//! ```
//!
//! The last chunk of each utterance is sent with `is_last`. An utterance may
//! set `expect_final` to pin the transcript the store must end up holding;
//! otherwise the expectation is the chunk words joined by spaces.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScriptError {
    #[error("{path}: cannot read script: {reason}")]
    Io { path: String, reason: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invariant violation at {field}: {message}")]
    InvariantViolation { field: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptChunk {
    #[serde(default)]
    pub gap_ms: i64,
    pub tokens: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptUtterance {
    #[serde(default)]
    pub delay_ms: i64,
    pub chunks: Vec<ScriptChunk>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_final: Option<String>,
}

impl ScriptUtterance {
    /// The final transcript this utterance should produce.
    pub fn expected_final(&self) -> String {
        match &self.expect_final {
            Some(text) => text.clone(),
            None => self.chunks.iter().flat_map(|c| c.tokens.iter().map(|(w, _)| w.as_str())).collect::<Vec<_>>().join(" "),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionScript {
    pub operator: String,
    pub passphrase: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asset_id: Option<String>,
    pub utterances: Vec<ScriptUtterance>,
}

impl SessionScript {
    pub fn validate(&self) -> Result<(), ScriptError> {
        let violation = |field: String, message: &str| ScriptError::InvariantViolation { field, message: message.into() };
        if self.operator.is_empty() {
            return Err(violation("operator".into(), "must not be empty"));
        }
        if self.utterances.is_empty() {
            return Err(violation("utterances".into(), "at least one utterance is required"));
        }
        for (i, u) in self.utterances.iter().enumerate() {
            if u.delay_ms < 0 {
                return Err(violation(format!("utterances[{i}].delay_ms"), "must be >= 0"));
            }
            for (j, c) in u.chunks.iter().enumerate() {
                if c.gap_ms < 0 {
                    return Err(violation(format!("utterances[{i}].chunks[{j}].gap_ms"), "must be >= 0"));
                }
                for (k, (word, confidence)) in c.tokens.iter().enumerate() {
                    let field = format!("utterances[{i}].chunks[{j}].tokens[{k}]");
                    if word.is_empty() || word.chars().any(char::is_whitespace) {
                        return Err(violation(field, "token must be a single non-empty word"));
                    }
                    if !(0.0..=1.0).contains(confidence) {
                        return Err(violation(field, "confidence must be within [0,1]"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ScriptError> {
        let script: SessionScript = serde_json::from_str(text).map_err(|e| ScriptError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        script.validate()?;
        Ok(script)
    }

    /// Number of utterances expected to produce a stored entry.
    pub fn expected_commits(&self) -> usize {
        self.utterances.iter().filter(|u| !u.expected_final().is_empty()).count()
    }
}

pub fn load_script(path: &Path) -> Result<SessionScript, ScriptError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ScriptError::Io { path: path.display().to_string(), reason: e.to_string() })?;
    SessionScript::from_json(&text)
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("no latency samples")]
pub struct EmptyInput;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

/// Nearest-rank percentile: the `ceil(p/100 · n)`-th smallest sample.
pub fn percentile(sorted: &[f64], p: u32) -> f64 {
    let n = sorted.len();
    let rank = (p as usize * n).div_ceil(100).max(1);
    sorted[rank.min(n) - 1]
}

pub fn summarize_latencies(samples: &[f64]) -> Result<LatencySummary, EmptyInput> {
    if samples.is_empty() {
        return Err(EmptyInput);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(LatencySummary { p50: percentile(&sorted, 50), p95: percentile(&sorted, 95), max: sorted[sorted.len() - 1] })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceTiming {
    pub index: usize,
    pub utterance_id: String,
    pub expected_final: String,
    /// Last chunk sent → matching partial received.
    pub first_partial_latency_ms: Option<f64>,
    /// UtteranceEnd sent → LogCommitted received.
    pub commit_latency_ms: Option<f64>,
    pub final_text: Option<String>,
    pub entry_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayCounts {
    pub utterances_sent: usize,
    pub partials_received: usize,
    pub finals_received: usize,
    pub commits_received: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionOutcome {
    pub expr: String,
    pub actual: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub session_id: String,
    pub utterances: Vec<UtteranceTiming>,
    pub first_partial: Option<LatencySummary>,
    pub commit: Option<LatencySummary>,
    pub counts: ReplayCounts,
    pub wall_time_ms: f64,
    pub assertions: Vec<AssertionOutcome>,
    pub passed: bool,
}

impl ReplayReport {
    pub fn new(session_id: String, utterances: Vec<UtteranceTiming>, counts: ReplayCounts, wall_time_ms: f64) -> Self {
        let partials: Vec<f64> = utterances.iter().filter_map(|u| u.first_partial_latency_ms).collect();
        let commits: Vec<f64> = utterances.iter().filter_map(|u| u.commit_latency_ms).collect();
        let passed = counts.failures == 0;
        Self {
            session_id,
            utterances,
            first_partial: summarize_latencies(&partials).ok(),
            commit: summarize_latencies(&commits).ok(),
            counts,
            wall_time_ms,
            assertions: Vec::new(),
            passed,
        }
    }

    pub fn metric(&self, metric: Metric) -> Option<f64> {
        let c = &self.counts;
        Some(match metric {
            Metric::P50CommitMs => self.commit?.p50,
            Metric::P95CommitMs => self.commit?.p95,
            Metric::MaxCommitMs => self.commit?.max,
            Metric::P50PartialMs => self.first_partial?.p50,
            Metric::P95PartialMs => self.first_partial?.p95,
            Metric::MaxPartialMs => self.first_partial?.max,
            Metric::Failures => c.failures as f64,
            Metric::Commits => c.commits_received as f64,
            Metric::Utterances => c.utterances_sent as f64,
        })
    }

    /// Evaluates `assertions`, records the outcomes and folds them into
    /// `passed`.
    pub fn apply_assertions(&mut self, assertions: &[Assertion]) {
        for a in assertions {
            let actual = self.metric(a.metric);
            let passed = actual.is_some_and(|v| a.op.holds(v, a.threshold));
            self.passed &= passed;
            self.assertions.push(AssertionOutcome { expr: a.to_string(), actual, passed });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    P50CommitMs,
    P95CommitMs,
    MaxCommitMs,
    P50PartialMs,
    P95PartialMs,
    MaxPartialMs,
    Failures,
    Commits,
    Utterances,
}

impl Metric {
    const NAMES: [(&'static str, Metric); 9] = [
        ("p50_commit_ms", Metric::P50CommitMs),
        ("p95_commit_ms", Metric::P95CommitMs),
        ("max_commit_ms", Metric::MaxCommitMs),
        ("p50_partial_ms", Metric::P50PartialMs),
        ("p95_partial_ms", Metric::P95PartialMs),
        ("max_partial_ms", Metric::MaxPartialMs),
        ("failures", Metric::Failures),
        ("commits", Metric::Commits),
        ("utterances", Metric::Utterances),
    ];

    pub fn name(self) -> &'static str {
        Self::NAMES.iter().find(|(_, m)| *m == self).map(|(n, _)| *n).expect("every metric is named")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl CompareOp {
    fn holds(self, actual: f64, threshold: f64) -> bool {
        match self {
            CompareOp::Lt => actual < threshold,
            CompareOp::Le => actual <= threshold,
            CompareOp::Gt => actual > threshold,
            CompareOp::Ge => actual >= threshold,
            CompareOp::Eq => actual == threshold,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
            CompareOp::Eq => "==",
        }
    }
}

/// A guard such as `p95_commit_ms<100`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assertion {
    pub metric: Metric,
    pub op: CompareOp,
    pub threshold: f64,
}

impl fmt::Display for Assertion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.metric.name(), self.op.symbol(), self.threshold)
    }
}

impl FromStr for Assertion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let split = s.find(['<', '>', '=']).ok_or_else(|| format!("{s:?}: expected <metric><op><number>"))?;
        let (name, rest) = s.split_at(split);
        let (op, number) = [("<=", CompareOp::Le), (">=", CompareOp::Ge), ("==", CompareOp::Eq), ("<", CompareOp::Lt), (">", CompareOp::Gt)]
            .into_iter()
            .find_map(|(sym, op)| rest.strip_prefix(sym).map(|n| (op, n)))
            .ok_or_else(|| format!("{s:?}: unknown operator"))?;
        let name = name.trim();
        let metric = Metric::NAMES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, m)| *m)
            .ok_or_else(|| format!("{s:?}: unknown metric {name:?}"))?;
        let threshold = number.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}"))?;
        Ok(Assertion { metric, op, threshold })
    }
}
