//! Deterministic synthetic session scripts.

use hfm_core::replay::{ScriptChunk, ScriptUtterance, SessionScript};

const WORDS: &[&str] = &[
    "crack", "detected", "near", "weld", "loose", "bolt", "on", "flange", "corrosion", "at", "joint", "rail", "head",
    "wear", "visible", "clip", "missing", "sleeper", "cracked", "drainage", "blocked", "ballast", "fouled",
];

const COMMANDS: &[&[&str]] = &[
    &["begin", "inspection"],
    &["severity", "high"],
    &["severity", "low"],
    &["cancel"],
    &["end", "inspection"],
];

/// A script of `utterances` findings, with a command every fifth utterance.
/// `seed` varies the wording; equal arguments give equal scripts.
pub fn synthetic(operator: &str, passphrase: &str, utterances: usize, seed: u64) -> SessionScript {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let mut next = move || {
        // xorshift64
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let utterances = (0..utterances)
        .map(|i| {
            let words: Vec<&str> = if i % 5 == 0 {
                COMMANDS[(i / 5) % COMMANDS.len()].to_vec()
            } else {
                let len = 2 + (next() % 5) as usize;
                (0..len).map(|_| WORDS[(next() % WORDS.len() as u64) as usize]).collect()
            };
            let chunks = words
                .iter()
                .map(|w| ScriptChunk { gap_ms: 0, tokens: vec![(w.to_string(), (500 + next() % 500) as f64 / 1000.0)] })
                .collect();
            ScriptUtterance { delay_ms: 0, chunks, expect_final: None }
        })
        .collect();
    SessionScript { operator: operator.into(), passphrase: passphrase.into(), asset_id: None, utterances }
}
