use hfm_core::grammar::{normalize_text, parse_utterance, GrammarError, Intent};
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Labelled {
    text: String,
    intent: String,
    payload: Option<serde_json::Value>,
}

fn corpus() -> Vec<Labelled> {
    serde_json::from_str(include_str!("../../../fixtures/grammar_corpus.json")).unwrap()
}

#[test]
fn corpus_agrees_completely() {
    let corpus = corpus();
    assert!(corpus.len() >= 30);
    let mut disagreements = Vec::new();
    for item in &corpus {
        let got = parse_utterance(&item.text).unwrap();
        let got_json = serde_json::to_value(&got).unwrap();
        let got_payload = got_json.get("payload").cloned();
        if got.kind_name() != item.intent || got_payload != item.payload {
            disagreements.push(format!("{:?}: got {got_json}", item.text));
        }
    }
    assert!(disagreements.is_empty(), "{disagreements:#?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3000))]

    #[test]
    fn parse_is_total(s in "\\PC{0,40}") {
        match parse_utterance(&s) {
            Ok(intent) => prop_assert!(intent.check().is_ok()),
            Err(GrammarError::EmptyUtterance) => prop_assert!(normalize_text(&s).is_empty()),
        }
    }

    #[test]
    fn normalization_idempotent(s in "\\PC{0,40}|[ .,!?A-Za-z]{0,30}") {
        let once = normalize_text(&s);
        prop_assert_eq!(normalize_text(&once), once);
    }

    #[test]
    fn findings_keep_original_text(s in "[a-zA-Z ,.!?]{0,40}|\\PC{0,20}") {
        if let Ok(Intent::LogFinding { text }) = parse_utterance(&s) {
            prop_assert_eq!(text, s.trim());
        }
    }
}
