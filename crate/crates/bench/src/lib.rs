//! Inputs shared by the benchmarks.

use chrono::{Duration, TimeZone, Utc};
use hfm_core::grammar::parse_utterance;
use hfm_core::pipeline::LogEntry;
use hfm_core::time::format_millis;

pub const UTTERANCES: &[&str] = &[
    "begin inspection",
    "Crack detected near the weld at joint four.",
    "severity high",
    "attach asset rail 42",
    "loose bolt on flange, two missing clips",
    "cancel",
    "end inspection",
];

/// Entry `seq` of session `sid`, one second apart.
pub fn entry(sid: &str, seq: u64) -> LogEntry {
    let at = Utc.with_ymd_and_hms(2025, 3, 14, 10, 0, 0).unwrap() + Duration::seconds(seq as i64);
    let text = UTTERANCES[seq as usize % UTTERANCES.len()];
    LogEntry {
        entry_id: LogEntry::format_entry_id(sid, seq),
        session_id: sid.into(),
        entry_seq: seq,
        operator: "tech-01".into(),
        asset_id: Some("RAIL-42".into()),
        spoken_text: text.into(),
        intent: parse_utterance(text).unwrap(),
        confidence: 0.9,
        logged_at: format_millis(at),
        schema_version: 1,
    }
}
