//! Timestamp helpers shared by the envelope codec and log entries.

use chrono::{DateTime, SecondsFormat, Utc};

/// Formats as RFC 3339 UTC with millisecond precision and a `Z` suffix.
pub fn format_millis(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Parses any RFC 3339 timestamp and converts it to UTC.
pub fn parse_rfc3339(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s).ok().map(|t| t.with_timezone(&Utc))
}

/// True when `s` is an RFC 3339 UTC timestamp of the exact shape
/// `YYYY-MM-DDTHH:MM:SS.mmmZ`.
pub fn is_utc_millis(s: &str) -> bool {
    let b = s.as_bytes();
    if b.len() != 24 || b[19] != b'.' || b[23] != b'Z' {
        return false;
    }
    if !b[20..23].iter().all(u8::is_ascii_digit) {
        return false;
    }
    match DateTime::parse_from_rfc3339(s) {
        Ok(t) => t.offset().local_minus_utc() == 0,
        Err(_) => false,
    }
}
