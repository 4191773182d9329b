use hfm_core::grammar::Intent;
use hfm_core::protocol::*;
use proptest::prelude::*;

const TS: &str = "2025-03-14T10:22:05.120Z";
const TABLE: &str = include_str!("../../../fixtures/transition_table.csv");

fn phase(name: &str) -> Phase {
    Phase::ALL.into_iter().find(|p| p.as_str() == name).unwrap_or_else(|| panic!("phase {name}"))
}

fn direction(name: &str) -> Direction {
    match name {
        "c2s" => Direction::ClientToServer,
        "s2c" => Direction::ServerToClient,
        other => panic!("direction {other}"),
    }
}

/// A representative state for each phase.
fn fixture_state(p: Phase) -> SessionState {
    let mut s = SessionState::new();
    s.phase = p;
    if p != Phase::AwaitingAuth {
        s.operator_subject = Some("tech-01".into());
    }
    if matches!(p, Phase::Active | Phase::Dictating | Phase::Closed) {
        s.session_id = Some("s-1".into());
    }
    if p == Phase::Dictating {
        s.current_utterance_id = Some("u1".into());
    }
    s
}

/// A well-formed message of type `t` addressed to a session in phase `p`.
fn fixture_message(t: MessageType, p: Phase) -> ProtocolMessage {
    let u = || UtteranceRef { utterance_id: "u1".into() };
    let transcript = || TranscriptBody { utterance_id: "u1".into(), text: "crack".into(), confidence: 0.9, hypothesis_index: 0 };
    let payload = match t {
        MessageType::Auth => Payload::Auth(AuthBody { token: "t".into() }),
        MessageType::AuthOk => Payload::AuthOk(AuthOkBody { subject: "tech-01".into() }),
        MessageType::AuthErr => Payload::AuthErr(AuthErrBody { reason: AuthErrReason::Expired }),
        MessageType::SessionStart => Payload::SessionStart(Empty {}),
        MessageType::SessionStarted => {
            Payload::SessionStarted(SessionStartedBody { session_id: "s-1".into(), operator: "tech-01".into() })
        }
        MessageType::UtteranceBegin => Payload::UtteranceBegin(u()),
        MessageType::UtteranceChunk => Payload::UtteranceChunk(UtteranceChunkBody {
            utterance_id: "u1".into(),
            chunk_index: 0,
            tokens: vec![("crack".into(), 0.9)],
            is_last: false,
        }),
        MessageType::UtteranceEnd => Payload::UtteranceEnd(u()),
        MessageType::PartialTranscript => Payload::PartialTranscript(transcript()),
        MessageType::FinalTranscript => Payload::FinalTranscript(transcript()),
        MessageType::LogCommitted => Payload::LogCommitted(LogCommittedBody {
            utterance_id: "u1".into(),
            entry_id: "s-1-000001".into(),
            entry_seq: 1,
            path: "logs/2025-03-14/s-1/000001.json".into(),
            intent: Intent::LogFinding { text: "crack".into() },
            logged_at: TS.into(),
            asset_unknown: false,
        }),
        MessageType::AttachAssetMsg => Payload::AttachAssetMsg(AttachAssetBody { asset_id: Some("RAIL-42".into()), ..Default::default() }),
        MessageType::SessionEnd => Payload::SessionEnd(Empty {}),
        MessageType::SessionClosed => Payload::SessionClosed(SessionClosedBody { entries_committed: 0 }),
        MessageType::Heartbeat => Payload::Heartbeat(Empty {}),
        MessageType::ProtocolError => Payload::protocol_error("x", ""),
    };
    let sid = match (t, p) {
        (MessageType::SessionStarted, _) => Some("s-1".to_string()),
        (_, Phase::Active | Phase::Dictating | Phase::Closed) => Some("s-1".to_string()),
        _ => None,
    };
    ProtocolMessage::new(1, sid, TS, payload)
}

#[test]
fn exhaustive_transitions_match_golden_table() {
    let mut rows = 0;
    let mut mismatches = Vec::new();
    for line in TABLE.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (p, t, d) = (phase(f[0]), f[1].parse::<MessageType>().unwrap(), direction(f[2]));
        let want_allowed = f[3] == "yes";
        let want_next = phase(f[4]);
        let (next, allowed) = step_session_state(&fixture_state(p), &fixture_message(t, p), d);
        if allowed != want_allowed || next.phase != want_next {
            mismatches.push(format!("{line}: got allowed={allowed} next={}", next.phase.as_str()));
        }
        rows += 1;
    }
    assert_eq!(rows, Phase::ALL.len() * MessageType::ALL.len() * 2);
    assert!(mismatches.is_empty(), "{mismatches:#?}");
}

fn s2c(state: &SessionState, payload: Payload) -> (SessionState, bool) {
    step_session_state(state, &ProtocolMessage::new(1, state.session_id.clone(), TS, payload), Direction::ServerToClient)
}

fn c2s(state: &SessionState, payload: Payload) -> (SessionState, bool) {
    step_session_state(state, &ProtocolMessage::new(1, state.session_id.clone(), TS, payload), Direction::ClientToServer)
}

fn final_body(id: &str, text: &str) -> Payload {
    Payload::FinalTranscript(TranscriptBody { utterance_id: id.into(), text: text.into(), confidence: 0.9, hypothesis_index: 1 })
}

fn committed(id: &str) -> Payload {
    match fixture_message(MessageType::LogCommitted, Phase::Active).payload {
        Payload::LogCommitted(mut b) => {
            b.utterance_id = id.into();
            Payload::LogCommitted(b)
        }
        _ => unreachable!(),
    }
}

#[test]
fn utterance_cycle_final_then_commit() {
    let s = fixture_state(Phase::Dictating);
    let (s, ok) = c2s(&s, Payload::UtteranceEnd(UtteranceRef { utterance_id: "u1".into() }));
    assert!(ok);
    assert_eq!(s.phase, Phase::Active);
    assert!(s.current_utterance_id.is_none());

    // Commit cannot precede the final, and the final must name the ended utterance.
    assert!(!s2c(&s, committed("u1")).1);
    assert!(!s2c(&s, final_body("u2", "crack")).1);
    // No new utterance until the pending one is confirmed.
    assert!(!c2s(&s, Payload::UtteranceBegin(UtteranceRef { utterance_id: "u2".into() })).1);

    let (s, ok) = s2c(&s, final_body("u1", "crack"));
    assert!(ok);
    assert!(!s2c(&s, final_body("u1", "crack")).1, "second final");
    let (s, ok) = s2c(&s, committed("u1"));
    assert!(ok);
    assert_eq!(s.next_entry_seq, 2);
    // The cycle has completed; nothing more may be said about u1.
    assert!(!s2c(&s, final_body("u1", "crack")).1);
    assert!(!s2c(&s, committed("u1")).1);
    assert!(c2s(&s, Payload::UtteranceBegin(UtteranceRef { utterance_id: "u2".into() })).1);
}

#[test]
fn empty_final_needs_no_commit() {
    let s = fixture_state(Phase::Dictating);
    let (s, _) = c2s(&s, Payload::UtteranceEnd(UtteranceRef { utterance_id: "u1".into() }));
    let (s, ok) = s2c(&s, final_body("u1", ""));
    assert!(ok);
    assert!(s.pending.is_none());
    assert!(!s2c(&s, committed("u1")).1);
    assert_eq!(s.next_entry_seq, 1);
}

#[test]
fn mismatched_utterance_ids_rejected() {
    let s = fixture_state(Phase::Dictating);
    for payload in [
        Payload::UtteranceEnd(UtteranceRef { utterance_id: "u2".into() }),
        Payload::UtteranceChunk(UtteranceChunkBody { utterance_id: "u2".into(), chunk_index: 0, tokens: vec![], is_last: false }),
    ] {
        assert!(!c2s(&s, payload).1);
    }
    let partial = TranscriptBody { utterance_id: "u2".into(), text: "x".into(), confidence: 0.5, hypothesis_index: 0 };
    assert!(!s2c(&s, Payload::PartialTranscript(partial)).1);
}

#[test]
fn sid_required_after_start() {
    let s = fixture_state(Phase::Active);
    let hb = |sid: Option<&str>| ProtocolMessage::new(1, sid.map(str::to_string), TS, Payload::Heartbeat(Empty {}));
    assert!(step_session_state(&s, &hb(Some("s-1")), Direction::ClientToServer).1);
    assert!(!step_session_state(&s, &hb(None), Direction::ClientToServer).1);
    assert!(!step_session_state(&s, &hb(Some("s-2")), Direction::ClientToServer).1);
}

fn arb_payload() -> impl Strategy<Value = Payload> {
    let id = prop::sample::select(vec!["u1", "u2", ""]).prop_map(str::to_string);
    let text = prop::sample::select(vec!["", "crack", "begin inspection"]).prop_map(str::to_string);
    (0..MessageType::ALL.len(), id, text).prop_map(|(i, id, text)| {
        let mut msg = fixture_message(MessageType::ALL[i], Phase::Active).payload;
        match &mut msg {
            Payload::UtteranceBegin(b) | Payload::UtteranceEnd(b) => b.utterance_id = id,
            Payload::UtteranceChunk(b) => b.utterance_id = id,
            Payload::PartialTranscript(b) | Payload::FinalTranscript(b) => {
                b.utterance_id = id;
                b.text = text;
            }
            Payload::LogCommitted(b) => b.utterance_id = id,
            Payload::SessionStarted(b) => b.session_id = "s-1".into(),
            _ => {}
        }
        msg
    })
}

fn arb_step() -> impl Strategy<Value = (ProtocolMessage, Direction)> {
    let sid = prop::sample::select(vec![None, Some("s-1"), Some("s-2")]);
    let dir = prop::bool::ANY.prop_map(|b| if b { Direction::ClientToServer } else { Direction::ServerToClient });
    (arb_payload(), sid, dir).prop_map(|(payload, sid, dir)| {
        let sid = match &payload {
            Payload::SessionStarted(_) => Some("s-1".to_string()),
            _ => sid.map(str::to_string),
        };
        (ProtocolMessage::new(1, sid, TS, payload), dir)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn random_sequences_respect_invariants(steps in prop::collection::vec(arb_step(), 0..60)) {
        let mut state = SessionState::new();
        let mut begun: Vec<String> = Vec::new();
        for (msg, dir) in &steps {
            let before = state.clone();
            let (next, allowed) = step_session_state(&state, msg, *dir);
            // Determinism.
            prop_assert_eq!(step_session_state(&state, msg, *dir), (next.clone(), allowed));
            if !allowed {
                prop_assert_eq!(&next, &before);
            }
            if before.is_closed() {
                prop_assert!(next.is_closed());
            }
            prop_assert_eq!(next.current_utterance_id.is_some(), next.phase == Phase::Dictating);
            prop_assert!(next.next_entry_seq >= before.next_entry_seq);
            if allowed {
                match &msg.payload {
                    Payload::UtteranceBegin(b) => begun.push(b.utterance_id.clone()),
                    Payload::PartialTranscript(b) | Payload::FinalTranscript(b) => {
                        prop_assert!(begun.contains(&b.utterance_id));
                    }
                    _ => {}
                }
            }
            state = next;
        }
    }

    #[test]
    fn codec_round_trip((msg, _) in arb_step(), seq in 1u64..1_000_000) {
        let mut msg = msg;
        msg.seq = seq;
        let text = encode_message(&msg).unwrap();
        prop_assert!(!text.contains('\n'));
        prop_assert_eq!(decode_message(&text).unwrap(), msg);
    }

    #[test]
    fn decode_never_panics(text in ".{0,200}") {
        let _ = decode_message(&text);
    }
}
