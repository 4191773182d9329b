//! Drives scripted sessions against a live gateway and verifies the result.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use hfm_core::protocol::*;
use hfm_core::replay::{ReplayCounts, ReplayReport, SessionScript, UtteranceTiming};
use tracing::debug;

use crate::client::{ReplayError, RestClient, StreamClient};

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

async fn pause(ms: i64) {
    if ms > 0 {
        tokio::time::sleep(Duration::from_millis(ms as u64)).await;
    }
}

/// Runs one session per the script, then cross-checks the stored entries
/// over REST.
pub async fn run_replay(script: &SessionScript, gateway: &str) -> Result<ReplayReport, ReplayError> {
    script.validate().map_err(|e| ReplayError::ProtocolViolation(e.to_string()))?;
    let started = Instant::now();
    let rest = RestClient::new(gateway);
    let token = rest.token(&script.operator, &script.passphrase).await?;
    let mut stream = StreamClient::connect(gateway).await?;
    let session_id = stream.open_session(&token).await?;
    debug!(%session_id, "session started");

    if let Some(asset_id) = &script.asset_id {
        stream.send(Payload::AttachAssetMsg(AttachAssetBody { asset_id: Some(asset_id.clone()), ..Default::default() })).await?;
        stream.expect(MessageType::AttachAssetMsg).await?;
    }

    let mut counts = ReplayCounts::default();
    let mut timings = Vec::with_capacity(script.utterances.len());
    let mut dates = BTreeSet::new();
    for (index, utterance) in script.utterances.iter().enumerate() {
        pause(utterance.delay_ms).await;
        let utterance_id = format!("u{:04}", index + 1);
        let mut timing = UtteranceTiming {
            index,
            utterance_id: utterance_id.clone(),
            expected_final: utterance.expected_final(),
            first_partial_latency_ms: None,
            commit_latency_ms: None,
            final_text: None,
            entry_id: None,
        };
        stream.send(Payload::UtteranceBegin(UtteranceRef { utterance_id: utterance_id.clone() })).await?;
        counts.utterances_sent += 1;
        let n = utterance.chunks.len();
        for (i, chunk) in utterance.chunks.iter().enumerate() {
            pause(chunk.gap_ms).await;
            let sent = Instant::now();
            stream
                .send(Payload::UtteranceChunk(UtteranceChunkBody {
                    utterance_id: utterance_id.clone(),
                    chunk_index: i as u32,
                    tokens: chunk.tokens.clone(),
                    is_last: i + 1 == n,
                }))
                .await?;
            stream.expect(MessageType::PartialTranscript).await?;
            counts.partials_received += 1;
            if timing.first_partial_latency_ms.is_none() {
                timing.first_partial_latency_ms = Some(ms_since(sent));
            }
        }
        let ended = Instant::now();
        stream.send(Payload::UtteranceEnd(UtteranceRef { utterance_id: utterance_id.clone() })).await?;
        let Payload::FinalTranscript(final_body) = stream.expect(MessageType::FinalTranscript).await? else { unreachable!() };
        counts.finals_received += 1;
        if !final_body.text.is_empty() {
            let Payload::LogCommitted(commit) = stream.expect(MessageType::LogCommitted).await? else { unreachable!() };
            timing.commit_latency_ms = Some(ms_since(ended));
            counts.commits_received += 1;
            dates.insert(commit.logged_at.get(..10).unwrap_or_default().to_string());
            timing.entry_id = Some(commit.entry_id);
        }
        if final_body.text != timing.expected_final {
            counts.failures += 1;
        }
        timing.final_text = Some(final_body.text);
        timings.push(timing);
    }

    stream.send(Payload::SessionEnd(Empty {})).await?;
    let Payload::SessionClosed(closed) = stream.expect(MessageType::SessionClosed).await? else { unreachable!() };
    stream.close().await;

    let mut problems = Vec::new();
    if closed.entries_committed != counts.commits_received as u64 {
        problems.push(format!("gateway reports {} entries, client saw {} commits", closed.entries_committed, counts.commits_received));
    }
    let stored = if dates.is_empty() { Vec::new() } else { rest.session_entries_on(&token, &session_id, &dates).await? };
    problems.extend(verify(script, &timings, &stored));
    counts.failures += problems.len();

    let report = ReplayReport::new(session_id, timings, counts, ms_since(started));
    if report.counts.failures > 0 {
        for t in &report.utterances {
            if t.final_text.as_deref() != Some(t.expected_final.as_str()) {
                problems.push(format!(
                    "utterance {}: expected final {:?}, got {:?}",
                    t.index + 1,
                    t.expected_final,
                    t.final_text.as_deref().unwrap_or("")
                ));
            }
        }
        return Err(ReplayError::VerificationFailed { problems, report: Box::new(report) });
    }
    Ok(report)
}

/// Compares the stored entries with the script and the acks received.
fn verify(script: &SessionScript, timings: &[UtteranceTiming], stored: &[hfm_core::LogEntry]) -> Vec<String> {
    let mut problems = Vec::new();
    let expected: Vec<String> =
        script.utterances.iter().map(|u| u.expected_final()).filter(|t| !t.is_empty()).collect();
    let acked: Vec<&str> = timings.iter().filter_map(|t| t.entry_id.as_deref()).collect();
    if stored.len() != expected.len() || acked.len() != expected.len() {
        problems.push(format!("expected {} entries, {} acked, {} stored", expected.len(), acked.len(), stored.len()));
    }
    for (i, e) in stored.iter().enumerate() {
        if e.entry_seq != i as u64 + 1 {
            problems.push(format!("entry {} has seq {}", e.entry_id, e.entry_seq));
        }
        if let Some(want) = expected.get(i) {
            if &e.spoken_text != want {
                problems.push(format!("entry {}: stored text {:?}, script says {:?}", e.entry_id, e.spoken_text, want));
            }
        }
        if acked.get(i) != Some(&e.entry_id.as_str()) {
            problems.push(format!("stored entry {} was not acked in order", e.entry_id));
        }
        if e.operator != script.operator {
            problems.push(format!("entry {}: operator {:?}", e.entry_id, e.operator));
        }
    }
    problems
}

/// Runs `n` independent sessions of the same script concurrently.
pub async fn run_parallel(script: &SessionScript, gateway: &str, n: usize) -> Vec<Result<ReplayReport, ReplayError>> {
    let runs = (0..n).map(|_| run_replay(script, gateway));
    futures::future::join_all(runs).await
}
