use std::fs;
use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use hfm_core::assets::{get_asset_with_history, Asset, AssetError, AssetId, AssetRegistry};
use hfm_core::grammar::{Intent, Severity};
use hfm_core::pipeline::{validate_entry, LogEntry};
use hfm_core::store::{EntryFilter, LogStore};
use hfm_core::time::format_millis;
use proptest::prelude::*;

fn base() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 3, 14, 22, 0, 0).unwrap()
}

fn entry(sid: &str, seq: u64, at: DateTime<Utc>, asset: Option<&str>) -> LogEntry {
    LogEntry {
        entry_id: LogEntry::format_entry_id(sid, seq),
        session_id: sid.into(),
        entry_seq: seq,
        operator: "tech-01".into(),
        asset_id: asset.map(str::to_string),
        spoken_text: format!("note {seq}"),
        intent: if seq.is_multiple_of(3) {
            Intent::SetSeverity { level: Severity::High }
        } else {
            Intent::LogFinding { text: format!("note {seq}") }
        },
        confidence: 0.875,
        logged_at: format_millis(at),
        schema_version: 1,
    }
}

/// Reads every entry file under `root/logs` without going through the store.
fn brute_force_entries(root: &Path) -> Vec<LogEntry> {
    let mut out = Vec::new();
    let mut stack = vec![root.join("logs")];
    while let Some(dir) = stack.pop() {
        for item in fs::read_dir(&dir).unwrap() {
            let path = item.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "json") {
                out.push(serde_json::from_slice(&fs::read(&path).unwrap()).unwrap());
            }
        }
    }
    out
}

fn brute_force_query(all: &[LogEntry], filter: &EntryFilter) -> Vec<LogEntry> {
    let mut hits: Vec<LogEntry> = all
        .iter()
        .filter(|e| {
            let at = DateTime::parse_from_rfc3339(&e.logged_at).unwrap().with_timezone(&Utc);
            filter.asset_id.as_ref().is_none_or(|a| e.asset_id.as_ref() == Some(a))
                && filter.from.is_none_or(|f| at >= f)
                && filter.to.is_none_or(|t| at <= t)
        })
        .cloned()
        .collect();
    hits.sort_by(|a, b| {
        (a.logged_at.as_str(), a.session_id.as_str(), a.entry_seq).cmp(&(b.logged_at.as_str(), b.session_id.as_str(), b.entry_seq))
    });
    hits
}

#[test]
fn index_layout_golden() {
    let dir = tempfile::tempdir().unwrap();
    let store = LogStore::open(dir.path()).unwrap();
    let at = Utc.with_ymd_and_hms(2025, 3, 14, 10, 22, 5).unwrap() + Duration::milliseconds(120);
    store.append_entry(&entry("s-7f3a", 1, at, Some("RAIL-42"))).unwrap();
    store.append_entry(&entry("s-7f3a", 2, at + Duration::seconds(1), None)).unwrap();
    let index = fs::read_to_string(dir.path().join("logs/2025-03-14/s-7f3a/index.jsonl")).unwrap();
    assert_eq!(
        index,
        concat!(
            r#"{"asset_id":"RAIL-42","entry_id":"s-7f3a-000001","entry_seq":1,"logged_at":"2025-03-14T10:22:05.120Z","relative_path":"logs/2025-03-14/s-7f3a/000001.json"}"#,
            "\n",
            r#"{"asset_id":null,"entry_id":"s-7f3a-000002","entry_seq":2,"logged_at":"2025-03-14T10:22:06.120Z","relative_path":"logs/2025-03-14/s-7f3a/000002.json"}"#,
            "\n"
        )
    );
    let file = fs::read_to_string(dir.path().join("logs/2025-03-14/s-7f3a/000001.json")).unwrap();
    assert_eq!(
        file,
        r#"{"asset_id":"RAIL-42","confidence":0.875,"entry_id":"s-7f3a-000001","entry_seq":1,"intent":{"kind":"LogFinding","payload":{"text":"note 1"}},"logged_at":"2025-03-14T10:22:05.120Z","operator":"tech-01","schema_version":1,"session_id":"s-7f3a","spoken_text":"note 1"}"#
    );
}

#[test]
fn stored_entries_validate_against_schema() {
    let schema: serde_json::Value = serde_json::from_str(include_str!("../../../schemas/log_entry.schema.json")).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let store = LogStore::open(dir.path()).unwrap();
    for seq in 1..=6 {
        store.append_entry(&entry("s-1", seq, base() + Duration::minutes(seq as i64), Some("RAIL-42"))).unwrap();
    }
    let mut e = entry("s-2", 1, base(), None);
    e.intent = Intent::AttachAsset { code: "SW-7".into() };
    store.append_entry(&e).unwrap();
    for stored in brute_force_entries(dir.path()) {
        let value = serde_json::to_value(&stored).unwrap();
        let errors: Vec<String> = validator.iter_errors(&value).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{errors:?}");
    }
    let mut bad = serde_json::to_value(entry("s-1", 1, base(), None)).unwrap();
    bad["logged_at"] = "2025-03-14T10:22:05Z".into();
    assert!(!validator.is_valid(&bad));
}

#[test]
fn asset_history_equals_query() {
    let dir = tempfile::tempdir().unwrap();
    let store = LogStore::open(dir.path().join("data")).unwrap();
    let registry = AssetRegistry::open(dir.path().join("assets.jsonl")).unwrap();
    for id in ["RAIL-42", "RAIL-43"] {
        registry
            .register_asset(Asset {
                asset_id: AssetId::new(id).unwrap(),
                asset_type: "rail-segment".into(),
                location: "rig".into(),
                doc_refs: vec![],
                created_at: "2025-03-01T00:00:00.000Z".into(),
            })
            .unwrap();
    }
    store.append_entry(&entry("s-b", 1, base() + Duration::minutes(5), Some("RAIL-42"))).unwrap();
    store.append_entry(&entry("s-a", 1, base(), Some("RAIL-42"))).unwrap();
    store.append_entry(&entry("s-a", 2, base() + Duration::minutes(1), None)).unwrap();
    store.append_entry(&entry("s-a", 3, base() + Duration::hours(3), Some("RAIL-42"))).unwrap();

    let (asset, history) = get_asset_with_history(&registry, &store, "RAIL-42").unwrap();
    assert_eq!(asset.asset_id.as_str(), "RAIL-42");
    let ids: Vec<_> = history.iter().map(|e| e.entry_id.as_str()).collect();
    assert_eq!(ids, ["s-a-000001", "s-b-000001", "s-a-000003"]);
    let oracle = brute_force_query(&brute_force_entries(dir.path().join("data").as_path()), &EntryFilter::asset("RAIL-42"));
    assert_eq!(history, oracle);

    let (_, empty) = get_asset_with_history(&registry, &store, "RAIL-43").unwrap();
    assert!(empty.is_empty());
    assert!(matches!(get_asset_with_history(&registry, &store, "NOPE-1"), Err(AssetError::AssetNotFound(_))));
}

fn arb_entries() -> impl Strategy<Value = Vec<(u8, i64, Option<u8>)>> {
    // (session, minutes offset, asset)
    prop::collection::vec((0u8..4, 0i64..(60 * 30), prop::option::of(0u8..3)), 1..40)
}

fn arb_filter() -> impl Strategy<Value = EntryFilter> {
    (prop::option::of(0u8..3), prop::option::of(0i64..(60 * 30)), prop::option::of(0i64..(60 * 30))).prop_map(|(a, f, t)| {
        let (f, t) = match (f, t) {
            (Some(f), Some(t)) if f > t => (Some(t), Some(f)),
            other => other,
        };
        EntryFilter {
            asset_id: a.map(|a| format!("A-{a}")),
            from: f.map(|m| base() + Duration::minutes(m)),
            to: t.map(|m| base() + Duration::minutes(m)),
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn query_equals_brute_force(spec in arb_entries(), filters in prop::collection::vec(arb_filter(), 1..6)) {
        let dir = tempfile::tempdir().unwrap();
        let store = LogStore::open(dir.path()).unwrap();
        let mut next_seq = [1u64; 4];
        let mut last_at = [base(); 4];
        for (s, minutes, asset) in spec {
            let sid = format!("s-{s}");
            // Keep each session's clock monotone.
            let at = (base() + Duration::minutes(minutes)).max(last_at[s as usize]);
            last_at[s as usize] = at;
            let asset = asset.map(|a| format!("A-{a}"));
            let e = entry(&sid, next_seq[s as usize], at, asset.as_deref());
            next_seq[s as usize] += 1;
            store.append_entry(&e).unwrap();
        }
        let all = brute_force_entries(dir.path());
        for e in &all {
            prop_assert!(validate_entry(e).is_empty());
        }
        for f in filters {
            prop_assert_eq!(store.query_entries(&f).unwrap(), brute_force_query(&all, &f));
        }
        prop_assert!(store.fsck().unwrap().is_clean());
    }
}
