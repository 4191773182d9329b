//! Voice-command intent parsing.
//!
//! A finalized utterance is normalized and matched against a small command
//! grammar. Text that does not form a complete command is dictation and
//! becomes a [`Intent::LogFinding`] carrying the operator's original words.
//!
//! ```text
//! command   = begin | end | severity | attach | cancel ;
//! begin     = "begin" , ("inspection" | "report") ;
//! end       = "end" , ("inspection" | "report") ;
//! severity  = "severity" , ("low" | "medium" | "high" | "critical") ;
//! attach    = "attach" , "asset" , word , { word } ;
//! cancel    = "cancel" , ["that"] ;
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::is_asset_code;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrammarError {
    #[error("utterance is empty after normalization")]
    EmptyUtterance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Low,
    Medium,
    High,
    Critical,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Low => "low",
            Severity::Medium => "medium",
            Severity::High => "high",
            Severity::Critical => "critical",
        }
    }
}

impl FromStr for Severity {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "low" => Ok(Severity::Low),
            "medium" => Ok(Severity::Medium),
            "high" => Ok(Severity::High),
            "critical" => Ok(Severity::Critical),
            _ => Err(()),
        }
    }
}

/// A parsed voice command.
///
/// Serialized as `{"kind": ..., "payload": {...}}`; payload-free kinds omit
/// the payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Intent {
    BeginInspection,
    EndInspection,
    LogFinding { text: String },
    SetSeverity { level: Severity },
    AttachAsset { code: String },
    Cancel,
}

impl Intent {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Intent::BeginInspection => "BeginInspection",
            Intent::EndInspection => "EndInspection",
            Intent::LogFinding { .. } => "LogFinding",
            Intent::SetSeverity { .. } => "SetSeverity",
            Intent::AttachAsset { .. } => "AttachAsset",
            Intent::Cancel => "Cancel",
        }
    }

    /// Checks payload invariants; returns a description of the first failure.
    pub fn check(&self) -> Result<(), String> {
        match self {
            Intent::LogFinding { text } if text.is_empty() => Err("LogFinding text is empty".into()),
            Intent::AttachAsset { code } if !is_asset_code(code) => {
                Err(format!("AttachAsset code {code:?} is not a normalized asset code"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Intent::LogFinding { text } => write!(f, "LogFinding({text})"),
            Intent::SetSeverity { level } => write!(f, "SetSeverity({})", level.as_str()),
            Intent::AttachAsset { code } => write!(f, "AttachAsset({code})"),
            other => f.write_str(other.kind_name()),
        }
    }
}

const TERMINAL_PUNCTUATION: &[char] = &['.', ',', '!', '?'];

/// Lowercases, collapses whitespace runs to one space, trims, and strips
/// terminal `.,!?` punctuation.
pub fn normalize_text(text: &str) -> String {
    let lowered = text.to_lowercase();
    let mut out = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    loop {
        let stripped = out.trim_end_matches(TERMINAL_PUNCTUATION).trim_end();
        if stripped.len() == out.len() {
            break;
        }
        out.truncate(stripped.len());
    }
    out
}

/// How a grammar rule consumes the words after its keyword.
#[derive(Debug, Clone, Copy)]
enum Tail {
    /// Exactly one word from a fixed set.
    OneOf(&'static [&'static str]),
    /// Zero words, or exactly one word from a fixed set.
    Optional(&'static [&'static str]),
    /// A fixed word followed by one or more free words.
    ThenWords(&'static str),
}

#[derive(Debug, Clone, Copy)]
enum Action {
    Begin,
    End,
    Severity,
    Attach,
    Cancel,
}

struct Rule {
    keyword: &'static str,
    tail: Tail,
    action: Action,
}

/// English keyword table. Rules are tried in order; each must consume the
/// whole utterance to match.
const RULES: &[Rule] = &[
    Rule { keyword: "begin", tail: Tail::OneOf(&["inspection", "report"]), action: Action::Begin },
    Rule { keyword: "end", tail: Tail::OneOf(&["inspection", "report"]), action: Action::End },
    Rule {
        keyword: "severity",
        tail: Tail::OneOf(&["low", "medium", "high", "critical"]),
        action: Action::Severity,
    },
    Rule { keyword: "attach", tail: Tail::ThenWords("asset"), action: Action::Attach },
    Rule { keyword: "cancel", tail: Tail::Optional(&["that"]), action: Action::Cancel },
];

fn match_rule(rule: &Rule, words: &[&str]) -> Option<Intent> {
    let (first, rest) = words.split_first()?;
    if *first != rule.keyword {
        return None;
    }
    let matched = match rule.tail {
        Tail::OneOf(options) => rest.len() == 1 && options.contains(&rest[0]),
        Tail::Optional(options) => rest.is_empty() || (rest.len() == 1 && options.contains(&rest[0])),
        Tail::ThenWords(word) => rest.len() >= 2 && rest[0] == word,
    };
    if !matched {
        return None;
    }
    let intent = match rule.action {
        Action::Begin => Intent::BeginInspection,
        Action::End => Intent::EndInspection,
        Action::Cancel => Intent::Cancel,
        Action::Severity => Intent::SetSeverity { level: rest[0].parse().ok()? },
        Action::Attach => {
            let code = rest[1..].iter().map(|w| w.to_uppercase()).collect::<Vec<_>>().join("-");
            if !is_asset_code(&code) {
                return None;
            }
            Intent::AttachAsset { code }
        }
    };
    Some(intent)
}

/// Parses a final transcript into an [`Intent`].
pub fn parse_utterance(text: &str) -> Result<Intent, GrammarError> {
    let normalized = normalize_text(text);
    if normalized.is_empty() {
        return Err(GrammarError::EmptyUtterance);
    }
    let words: Vec<&str> = normalized.split(' ').collect();
    if let Some(intent) = RULES.iter().find_map(|rule| match_rule(rule, &words)) {
        return Ok(intent);
    }
    Ok(Intent::LogFinding { text: text.trim().to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_text("  Begin   Inspection. "), "begin inspection");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("SEVERITY HIGH"), "severity high");
        assert_eq!(normalize_text("done . ?!"), "done");
        assert_eq!(normalize_text("\t?\n"), "");
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_utterance("begin inspection").unwrap(), Intent::BeginInspection);
        assert_eq!(
            parse_utterance("attach asset rail 42").unwrap(),
            Intent::AttachAsset { code: "RAIL-42".into() }
        );
        assert_eq!(
            parse_utterance("visible crack on left rail").unwrap(),
            Intent::LogFinding { text: "visible crack on left rail".into() }
        );
        assert_eq!(
            parse_utterance("severity extreme").unwrap(),
            Intent::LogFinding { text: "severity extreme".into() }
        );
    }

    #[test]
    fn empty_is_error() {
        assert_eq!(parse_utterance("   "), Err(GrammarError::EmptyUtterance));
        assert_eq!(parse_utterance("..."), Err(GrammarError::EmptyUtterance));
    }

    #[test]
    fn cancel_variants() {
        assert_eq!(parse_utterance("Cancel.").unwrap(), Intent::Cancel);
        assert_eq!(parse_utterance("cancel that").unwrap(), Intent::Cancel);
        assert!(matches!(parse_utterance("cancel this").unwrap(), Intent::LogFinding { .. }));
    }

    #[test]
    fn commands_must_span_the_utterance() {
        assert_eq!(
            parse_utterance("Begin inspection of the bridge").unwrap(),
            Intent::LogFinding { text: "Begin inspection of the bridge".into() }
        );
        assert!(matches!(parse_utterance("attach asset").unwrap(), Intent::LogFinding { .. }));
        assert!(matches!(parse_utterance("attach asset rail#42").unwrap(), Intent::LogFinding { .. }));
    }

    #[test]
    fn finding_keeps_original_text() {
        assert_eq!(
            parse_utterance("  Rust spots near Bolt 7.  ").unwrap(),
            Intent::LogFinding { text: "Rust spots near Bolt 7.".into() }
        );
    }

    #[test]
    fn intent_json_shape() {
        assert_eq!(serde_json::to_string(&Intent::Cancel).unwrap(), r#"{"kind":"Cancel"}"#);
        assert_eq!(
            serde_json::to_string(&Intent::SetSeverity { level: Severity::High }).unwrap(),
            r#"{"kind":"SetSeverity","payload":{"level":"high"}}"#
        );
    }
}
