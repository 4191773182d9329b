//! One streaming session, independent of the transport.
//!
//! [`SessionDriver`] consumes inbound frames in order and returns the frames
//! to send back. Every message in either direction is checked against the
//! protocol state machine. Storage I/O happens inline, so the async layer
//! runs the driver on a blocking thread.

use std::sync::Arc;

use hfm_core::assets::{decode_qr_payload, AssetRegistry};
use hfm_core::auth::{verify_token, AuthError, Scope, SigningKey};
use hfm_core::grammar::{parse_utterance, Intent, Severity};
use hfm_core::pipeline::{build_log_entry, Clock, SessionContext};
use hfm_core::protocol::*;
use hfm_core::store::{CrashPoint, LogStore};
use hfm_core::time::format_millis;
use hfm_core::transcription::{
    HypothesisKind, ScriptedProvider, Token, TranscriptHypothesis, TranscriptionProvider, UtteranceChunk,
};
use tracing::{debug, warn};

/// Shared services a session needs.
#[derive(Clone)]
pub struct SessionServices {
    pub key: SigningKey,
    pub store: Arc<LogStore>,
    pub registry: Arc<AssetRegistry>,
    pub clock: Arc<dyn Clock>,
}

/// Frames to send, and whether the connection must close afterwards.
#[derive(Debug, Default)]
pub struct Outcome {
    pub frames: Vec<String>,
    pub close: bool,
}

pub struct SessionDriver {
    services: SessionServices,
    state: SessionState,
    inbound_seq: SeqChecker,
    outbound_seq: SeqCounter,
    engine: Box<dyn TranscriptionProvider>,
    ctx: Option<SessionContext>,
    /// Asset attached before the session started.
    early_asset: Option<String>,
    /// Final produced by a chunk marked `is_last`, held until `UtteranceEnd`.
    stashed_final: Option<TranscriptHypothesis>,
    inspection_open: bool,
    severity: Option<Severity>,
    entries_committed: u64,
}

impl SessionDriver {
    pub fn new(services: SessionServices) -> Self {
        Self::with_provider(services, Box::new(ScriptedProvider::new()))
    }

    pub fn with_provider(services: SessionServices, engine: Box<dyn TranscriptionProvider>) -> Self {
        Self {
            services,
            state: SessionState::new(),
            inbound_seq: SeqChecker::new(),
            outbound_seq: SeqCounter::new(),
            engine,
            ctx: None,
            early_asset: None,
            stashed_final: None,
            inspection_open: false,
            severity: None,
            entries_committed: 0,
        }
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn session_id(&self) -> Option<&str> {
        self.state.session_id.as_deref()
    }

    pub fn inspection_open(&self) -> bool {
        self.inspection_open
    }

    pub fn severity(&self) -> Option<Severity> {
        self.severity
    }

    pub fn is_closed(&self) -> bool {
        self.state.is_closed()
    }

    /// Handles one inbound text frame.
    pub fn handle_frame(&mut self, text: &str) -> Outcome {
        if self.is_closed() {
            return Outcome { frames: Vec::new(), close: true };
        }
        let msg = match decode_message(text) {
            Ok(m) => m,
            Err(e) => {
                let code = match e {
                    ProtocolError::Parse(_) => "parse",
                    ProtocolError::UnknownType(_) => "unknown_type",
                    ProtocolError::Schema(_) => "schema",
                    ProtocolError::InvalidMessage(_) => "invalid_message",
                };
                return self.fail(code, e.to_string());
            }
        };
        if let Err((expected, got)) = self.inbound_seq.accept(msg.seq) {
            return self.fail("seq", format!("expected seq {expected}, got {got}"));
        }
        let (next, allowed) = step_session_state(&self.state, &msg, Direction::ClientToServer);
        if !allowed {
            return self.fail(
                "illegal_transition",
                format!("{} not allowed in {}", msg.message_type(), self.state.phase.as_str()),
            );
        }
        self.state = next;
        self.dispatch(msg.payload)
    }

    /// Closes a silent session, discarding any open utterance.
    pub fn on_timeout(&mut self) -> Outcome {
        self.abandon();
        if self.is_closed() {
            return Outcome { frames: Vec::new(), close: true };
        }
        self.fail("timeout", "heartbeat timeout")
    }

    /// Drops transcription state for an utterance that will never finish.
    pub fn abandon(&mut self) {
        if let Some(id) = self.state.current_utterance_id.clone() {
            self.engine.discard_utterance(&id);
        }
        self.stashed_final = None;
    }

    fn dispatch(&mut self, payload: Payload) -> Outcome {
        let mut out = Outcome::default();
        match payload {
            Payload::Auth(b) => self.authenticate(&b.token, &mut out),
            Payload::SessionStart(_) => {
                let operator = self.state.operator_subject.clone().unwrap_or_default();
                let session_id = new_session_id();
                let mut ctx = SessionContext::new(session_id.clone(), operator.clone());
                ctx.attached_asset_id = self.early_asset.take();
                self.ctx = Some(ctx);
                self.emit(&mut out, Payload::SessionStarted(SessionStartedBody { session_id, operator }));
            }
            Payload::AttachAssetMsg(b) => {
                let reply = self.attach_asset(b);
                self.emit(&mut out, Payload::AttachAssetMsg(reply));
            }
            Payload::UtteranceBegin(b) => {
                self.stashed_final = None;
                if let Err(e) = self.engine.open_utterance(&b.utterance_id) {
                    return self.fail("transcription", e.to_string());
                }
            }
            Payload::UtteranceChunk(b) => {
                let chunk = UtteranceChunk {
                    utterance_id: b.utterance_id,
                    chunk_index: b.chunk_index,
                    tokens: b.tokens.into_iter().map(|(w, c)| Token::new(w, c)).collect(),
                    is_last: b.is_last,
                };
                let hyps = match self.engine.feed_chunk(&chunk) {
                    Ok(h) => h,
                    Err(e) => return self.fail("transcription", e.to_string()),
                };
                for h in hyps {
                    match h.kind {
                        HypothesisKind::Partial => self.emit(&mut out, Payload::PartialTranscript(transcript_body(&h))),
                        HypothesisKind::Final => self.stashed_final = Some(h),
                    }
                }
            }
            Payload::UtteranceEnd(b) => {
                let final_h = match self.stashed_final.take() {
                    Some(h) if h.utterance_id == b.utterance_id => h,
                    _ => match self.engine.close_utterance(&b.utterance_id) {
                        Ok(h) => h,
                        Err(e) => return self.fail("transcription", e.to_string()),
                    },
                };
                self.emit(&mut out, Payload::FinalTranscript(transcript_body(&final_h)));
                if !final_h.text.is_empty() {
                    if let Err(failed) = self.commit(&final_h, &mut out) {
                        out.frames.extend(failed.frames);
                        out.close = true;
                    }
                }
            }
            Payload::SessionEnd(_) => {
                self.abandon();
                let body = SessionClosedBody { entries_committed: self.entries_committed };
                self.emit(&mut out, Payload::SessionClosed(body));
                out.close = true;
            }
            Payload::Heartbeat(_) => self.emit(&mut out, Payload::Heartbeat(Empty {})),
            // Server-only types never pass the client→server state check.
            other => return self.fail("illegal_transition", format!("{} from client", other.message_type())),
        }
        out
    }

    fn authenticate(&mut self, token: &str, out: &mut Outcome) {
        let now = self.services.clock.now().timestamp();
        let reason = match verify_token(token, &self.services.key, now) {
            Ok(claims) if claims.has_scope(Scope::SessionStream) => {
                self.emit(out, Payload::AuthOk(AuthOkBody { subject: claims.subject }));
                return;
            }
            Ok(_) => AuthErrReason::MissingScope,
            Err(AuthError::Expired) => AuthErrReason::Expired,
            Err(AuthError::BadSignature) => AuthErrReason::BadSignature,
            Err(_) => AuthErrReason::Malformed,
        };
        debug!(?reason, "authentication failed");
        self.emit(out, Payload::AuthErr(AuthErrBody { reason }));
        out.close = true;
    }

    fn attach_asset(&mut self, req: AttachAssetBody) -> AttachAssetBody {
        let mut reply = AttachAssetBody::default();
        let id = match (&req.asset_id, &req.qr_payload) {
            (Some(id), _) => id.clone(),
            (None, Some(qr)) => match decode_qr_payload(qr) {
                Ok(id) => id.to_string(),
                Err(e) => {
                    reply.qr_payload = Some(qr.clone());
                    reply.asset_unknown = true;
                    reply.error = Some(e.to_string());
                    return reply;
                }
            },
            (None, None) => {
                reply.asset_unknown = true;
                reply.error = Some("asset_id or qr_payload required".into());
                return reply;
            }
        };
        reply.asset_id = Some(id.clone());
        if self.services.registry.contains(&id) {
            match &mut self.ctx {
                Some(ctx) => ctx.attached_asset_id = Some(id),
                None => self.early_asset = Some(id),
            }
        } else {
            reply.asset_unknown = true;
        }
        reply
    }

    /// Turns a non-empty final into a stored entry and acknowledges it.
    fn commit(&mut self, final_h: &TranscriptHypothesis, out: &mut Outcome) -> Result<(), Outcome> {
        // Text that normalizes to nothing (stray punctuation) is still logged verbatim.
        let intent = parse_utterance(&final_h.text).unwrap_or_else(|_| Intent::LogFinding { text: final_h.text.clone() });
        let mut asset_unknown = false;
        let ctx = self.ctx.as_mut().expect("utterances only occur in started sessions");
        match &intent {
            Intent::BeginInspection => self.inspection_open = true,
            Intent::EndInspection => self.inspection_open = false,
            Intent::SetSeverity { level } => self.severity = Some(*level),
            Intent::Cancel => self.severity = None,
            Intent::AttachAsset { code } => {
                if self.services.registry.contains(code) {
                    ctx.attached_asset_id = Some(code.clone());
                } else {
                    asset_unknown = true;
                }
            }
            Intent::LogFinding { .. } => {}
        }

        let now = self.services.clock.now();
        let (entry, next_ctx) = match build_log_entry(final_h, intent, ctx, now) {
            Ok(built) => built,
            Err(e) => return Err(self.fail("pipeline", e.to_string())),
        };
        let path = match self.services.store.append_entry(&entry) {
            Ok(p) => p,
            Err(e) => {
                warn!(error = %e, entry_id = %entry.entry_id, "append failed");
                return Err(self.fail("storage", e.to_string()));
            }
        };
        if let Err(e) = self.services.store.checkpoint(CrashPoint::PreAck) {
            return Err(self.fail("storage", e.to_string()));
        }
        *ctx = next_ctx;
        self.entries_committed += 1;
        self.emit(
            out,
            Payload::LogCommitted(LogCommittedBody {
                utterance_id: final_h.utterance_id.clone(),
                entry_id: entry.entry_id,
                entry_seq: entry.entry_seq,
                path,
                intent: entry.intent,
                logged_at: entry.logged_at,
                asset_unknown,
            }),
        );
        Ok(())
    }

    /// Stamps, state-checks and encodes an outbound message.
    fn emit(&mut self, out: &mut Outcome, payload: Payload) {
        let msg = ProtocolMessage::new(
            self.outbound_seq.next_seq(),
            self.outbound_sid(&payload),
            format_millis(self.services.clock.now()),
            payload,
        );
        let (next, allowed) = step_session_state(&self.state, &msg, Direction::ServerToClient);
        debug_assert!(allowed, "server emitted illegal {} in {:?}", msg.message_type(), self.state.phase);
        if !allowed {
            warn!(kind = %msg.message_type(), "dropping illegal outbound message");
            return;
        }
        self.state = next;
        if let Ok(frame) = encode_message(&msg) {
            out.frames.push(frame);
        }
    }

    fn outbound_sid(&self, payload: &Payload) -> Option<String> {
        match payload {
            Payload::SessionStarted(b) => Some(b.session_id.clone()),
            _ => self.state.session_id.clone(),
        }
    }

    fn fail(&mut self, code: &str, detail: impl Into<String>) -> Outcome {
        let mut out = Outcome::default();
        self.abandon();
        if !self.is_closed() {
            self.emit(&mut out, Payload::protocol_error(code, detail));
        }
        out.close = true;
        out
    }
}

fn transcript_body(h: &TranscriptHypothesis) -> TranscriptBody {
    TranscriptBody {
        utterance_id: h.utterance_id.clone(),
        text: h.text.clone(),
        confidence: h.confidence,
        hypothesis_index: h.hypothesis_index,
    }
}

fn new_session_id() -> String {
    format!("s-{}", hex::encode(rand::random::<[u8; 6]>()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use hfm_core::assets::{Asset, AssetId};
    use hfm_core::auth::{issue_token, TokenClaims};
    use hfm_core::pipeline::SteppingClock;
    use hfm_core::store::{FaultAction, FaultPlan};

    const TS: &str = "2025-03-14T10:22:05.120Z";

    struct Harness {
        driver: SessionDriver,
        seq: u64,
        sid: Option<String>,
        key: SigningKey,
        _dir: tempfile::TempDir,
        store: Arc<LogStore>,
    }

    impl Harness {
        fn new() -> Self {
            Self::with_fault(None)
        }

        fn with_fault(fault: Option<FaultPlan>) -> Self {
            let dir = tempfile::tempdir().unwrap();
            let mut store = LogStore::open(dir.path().join("data")).unwrap();
            if let Some(f) = fault {
                store = store.with_fault(f);
            }
            let store = Arc::new(store);
            let registry = Arc::new(AssetRegistry::open(dir.path().join("assets.jsonl")).unwrap());
            registry
                .register_asset(Asset {
                    asset_id: AssetId::new("RAIL-7").unwrap(),
                    asset_type: "rail-segment".into(),
                    location: "rig".into(),
                    doc_refs: vec![],
                    created_at: TS.into(),
                })
                .unwrap();
            let key = SigningKey::from_bytes([9; 32]);
            let clock = Arc::new(SteppingClock::new(
                Utc.with_ymd_and_hms(2025, 3, 14, 10, 0, 0).unwrap(),
                chrono::Duration::milliseconds(1),
            ));
            let services = SessionServices { key: key.clone(), store: store.clone(), registry, clock };
            Self { driver: SessionDriver::new(services), seq: 0, sid: None, key, _dir: dir, store }
        }

        fn send(&mut self, payload: Payload) -> (Vec<ProtocolMessage>, bool) {
            self.seq += 1;
            let msg = ProtocolMessage::new(self.seq, self.sid.clone(), TS, payload);
            let out = self.driver.handle_frame(&encode_message(&msg).unwrap());
            let msgs: Vec<_> = out.frames.iter().map(|f| decode_message(f).unwrap()).collect();
            for m in &msgs {
                if let Payload::SessionStarted(b) = &m.payload {
                    self.sid = Some(b.session_id.clone());
                }
            }
            (msgs, out.close)
        }

        fn token(&self, scopes: &[Scope], iat: i64) -> String {
            issue_token(&TokenClaims::new("tech-01", scopes.iter().copied(), iat, 3600), &self.key).unwrap()
        }

        fn start(&mut self) {
            let now = Utc.with_ymd_and_hms(2025, 3, 14, 10, 0, 0).unwrap().timestamp();
            let token = self.token(&[Scope::SessionStream], now);
            let (m, _) = self.send(Payload::Auth(AuthBody { token }));
            assert_eq!(m[0].message_type(), MessageType::AuthOk);
            let (m, _) = self.send(Payload::SessionStart(Empty {}));
            assert_eq!(m[0].message_type(), MessageType::SessionStarted);
        }

        fn say(&mut self, id: &str, words: &[&str]) -> Vec<ProtocolMessage> {
            self.send(Payload::UtteranceBegin(UtteranceRef { utterance_id: id.into() }));
            let mut out = Vec::new();
            for (i, w) in words.iter().enumerate() {
                let (m, _) = self.send(Payload::UtteranceChunk(UtteranceChunkBody {
                    utterance_id: id.into(),
                    chunk_index: i as u32,
                    tokens: vec![(w.to_string(), 0.9)],
                    is_last: i + 1 == words.len(),
                }));
                out.extend(m);
            }
            let (m, _) = self.send(Payload::UtteranceEnd(UtteranceRef { utterance_id: id.into() }));
            out.extend(m);
            out
        }
    }

    fn kinds(msgs: &[ProtocolMessage]) -> Vec<MessageType> {
        msgs.iter().map(|m| m.message_type()).collect()
    }

    #[test]
    fn begin_inspection_is_committed() {
        let mut h = Harness::new();
        h.start();
        let msgs = h.say("u1", &["begin", "inspection"]);
        assert_eq!(
            kinds(&msgs),
            [MessageType::PartialTranscript, MessageType::PartialTranscript, MessageType::FinalTranscript, MessageType::LogCommitted]
        );
        let Payload::LogCommitted(b) = &msgs[3].payload else { panic!() };
        assert_eq!(b.intent, Intent::BeginInspection);
        assert_eq!(b.entry_seq, 1);
        assert!(h.driver.inspection_open());
    }

    #[test]
    fn unknown_spoken_asset_warns_without_attaching() {
        let mut h = Harness::new();
        h.start();
        let msgs = h.say("u1", &["attach", "asset", "rail", "42"]);
        let Payload::LogCommitted(b) = &msgs.last().unwrap().payload else { panic!() };
        assert!(b.asset_unknown);
        let msgs = h.say("u2", &["crack"]);
        let Payload::LogCommitted(b) = &msgs.last().unwrap().payload else { panic!() };
        assert!(!b.asset_unknown);
        let read = h.store.read_session_entries(h.sid.as_deref().unwrap(), chrono::NaiveDate::from_ymd_opt(2025, 3, 14).unwrap());
        assert!(read.entries.iter().all(|e| e.asset_id.is_none()));
    }

    #[test]
    fn known_asset_attaches_by_voice_and_qr() {
        let mut h = Harness::new();
        h.start();
        let msgs = h.say("u1", &["attach", "asset", "rail", "7"]);
        let Payload::LogCommitted(b) = &msgs.last().unwrap().payload else { panic!() };
        assert!(!b.asset_unknown);
        let qr = hfm_core::assets::encode_qr_payload("RAIL-7").unwrap();
        let (m, _) = h.send(Payload::AttachAssetMsg(AttachAssetBody { qr_payload: Some(qr), ..Default::default() }));
        let Payload::AttachAssetMsg(reply) = &m[0].payload else { panic!() };
        assert_eq!((reply.asset_id.as_deref(), reply.asset_unknown), (Some("RAIL-7"), false));
        let (m, _) = h.send(Payload::AttachAssetMsg(AttachAssetBody { qr_payload: Some("MAINT1:RAIL-7:00000000".into()), ..Default::default() }));
        let Payload::AttachAssetMsg(reply) = &m[0].payload else { panic!() };
        assert!(reply.asset_unknown && reply.error.is_some());
        h.say("u2", &["loose", "bolt"]);
        let read = h.store.read_session_entries(h.sid.as_deref().unwrap(), chrono::NaiveDate::from_ymd_opt(2025, 3, 14).unwrap());
        assert!(read.entries.iter().all(|e| e.asset_id.as_deref() == Some("RAIL-7")));
    }

    #[test]
    fn first_message_must_be_auth() {
        let mut h = Harness::new();
        let (m, close) = h.send(Payload::Heartbeat(Empty {}));
        assert_eq!(kinds(&m), [MessageType::ProtocolError]);
        assert!(close);
        assert!(h.driver.is_closed());
        let mut h = Harness::new();
        let (m, close) = h.send(Payload::SessionStart(Empty {}));
        assert_eq!(kinds(&m), [MessageType::ProtocolError]);
        assert!(close);
    }

    #[test]
    fn auth_errors_map_to_reasons() {
        let now = Utc.with_ymd_and_hms(2025, 3, 14, 10, 0, 0).unwrap().timestamp();
        let cases = [
            (Harness::new().token(&[Scope::SessionStream], now - 7200), AuthErrReason::Expired),
            (Harness::new().token(&[Scope::LogsRead], now), AuthErrReason::MissingScope),
            ("abc".to_string(), AuthErrReason::Malformed),
        ];
        for (token, reason) in cases {
            let mut h = Harness::new();
            let (m, close) = h.send(Payload::Auth(AuthBody { token }));
            assert_eq!(m[0].payload, Payload::AuthErr(AuthErrBody { reason }));
            assert!(close);
        }
        let mut h = Harness::new();
        let other = issue_token(&TokenClaims::new("x", [Scope::SessionStream], now, 60), &SigningKey::from_bytes([1; 32])).unwrap();
        let (m, _) = h.send(Payload::Auth(AuthBody { token: other }));
        assert_eq!(m[0].payload, Payload::AuthErr(AuthErrBody { reason: AuthErrReason::BadSignature }));
    }

    #[test]
    fn seq_gap_is_fatal() {
        let mut h = Harness::new();
        h.seq = 1;
        let (m, close) = h.send(Payload::Heartbeat(Empty {}));
        assert_eq!(kinds(&m), [MessageType::ProtocolError]);
        assert!(close);
    }

    #[test]
    fn garbage_frames_are_fatal() {
        let mut h = Harness::new();
        let out = h.driver.handle_frame("{\"v\":1,");
        assert!(out.close);
        let m = decode_message(&out.frames[0]).unwrap();
        assert!(matches!(m.payload, Payload::ProtocolError(ref b) if b.code == "parse"));
    }

    #[test]
    fn empty_utterance_not_logged() {
        let mut h = Harness::new();
        h.start();
        let msgs = h.say("u1", &[]);
        assert_eq!(kinds(&msgs), [MessageType::FinalTranscript]);
        let msgs = h.say("u2", &["ok"]);
        let Payload::LogCommitted(b) = &msgs.last().unwrap().payload else { panic!() };
        assert_eq!(b.entry_seq, 1);
    }

    #[test]
    fn timeout_discards_open_utterance() {
        let mut h = Harness::new();
        h.start();
        h.send(Payload::UtteranceBegin(UtteranceRef { utterance_id: "u1".into() }));
        h.send(Payload::UtteranceChunk(UtteranceChunkBody {
            utterance_id: "u1".into(),
            chunk_index: 0,
            tokens: vec![("half".into(), 0.5)],
            is_last: false,
        }));
        let out = h.driver.on_timeout();
        assert!(out.close);
        let m = decode_message(&out.frames[0]).unwrap();
        assert!(matches!(m.payload, Payload::ProtocolError(ref b) if b.code == "timeout"));
        assert_eq!(h.store.query_entries(&Default::default()).unwrap().len(), 0);
    }

    #[test]
    fn storage_failure_is_not_acked() {
        let plan = FaultPlan { point: CrashPoint::PreRename, on_append: 2, action: FaultAction::Fail };
        let mut h = Harness::with_fault(Some(plan));
        h.start();
        assert_eq!(kinds(&h.say("u1", &["one"])).last(), Some(&MessageType::LogCommitted));
        let msgs = h.say("u2", &["two"]);
        assert_eq!(kinds(&msgs), [MessageType::PartialTranscript, MessageType::FinalTranscript, MessageType::ProtocolError]);
        assert!(h.driver.is_closed());
    }

    #[test]
    fn session_end_reports_count() {
        let mut h = Harness::new();
        h.start();
        h.say("u1", &["a"]);
        h.say("u2", &["b"]);
        let (m, close) = h.send(Payload::SessionEnd(Empty {}));
        assert_eq!(m[0].payload, Payload::SessionClosed(SessionClosedBody { entries_committed: 2 }));
        assert!(close);
    }
}
