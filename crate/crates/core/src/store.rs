//! Append-only, blob-style storage of log entries.
//!
//! Layout under the store root:
//!
//! ```text
//! logs/{YYYY-MM-DD}/{session_id}/{entry_seq:06}.json   canonical JSON entry
//! logs/{YYYY-MM-DD}/{session_id}/index.jsonl           one line per committed entry
//! ```
//!
//! The date is taken from each entry's own `logged_at`, so a session that
//! runs past midnight spans two date directories.
//!
//! An append writes the entry to a hidden temp file, fsyncs it, renames it
//! into place, fsyncs the directory and only then appends the index line.
//! An entry is committed once its index line is durable. [`LogStore::open`]
//! repairs whatever a crash left behind: stray temp files are removed, a torn
//! trailing index line is dropped and renamed-but-unindexed entries are rolled
//! forward into the index.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Days, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::pipeline::{validate_entry, LogEntry};
use crate::time::parse_rfc3339;

const LOGS_DIR: &str = "logs";
const INDEX_FILE: &str = "index.jsonl";
const TMP_SUFFIX: &str = ".tmp";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("entry {entry_id} is already stored")]
    DuplicateEntry { entry_id: String },
    #[error("entry failed validation: {}", .0.join("; "))]
    InvalidEntry(Vec<String>),
    #[error("storage failure at {}: {source}", path.display())]
    StorageFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt entry {}: {reason}", path.display())]
    CorruptEntry { path: PathBuf, reason: String },
    #[error("invalid range: from is after to")]
    InvalidRange,
    #[error("invalid session id {0:?}")]
    InvalidSessionId(String),
    #[error("injected crash at {0}")]
    InjectedCrash(CrashPoint),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::StorageFailure { path: path.to_path_buf(), source }
}

/// Points in the commit path where a crash can be injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CrashPoint {
    PreTempWrite,
    PreRename,
    PreIndex,
    /// After the store has committed, before the gateway acknowledges.
    PreAck,
}

impl CrashPoint {
    pub const ALL: [CrashPoint; 4] =
        [CrashPoint::PreTempWrite, CrashPoint::PreRename, CrashPoint::PreIndex, CrashPoint::PreAck];

    pub fn as_str(self) -> &'static str {
        match self {
            CrashPoint::PreTempWrite => "pre-temp-write",
            CrashPoint::PreRename => "pre-rename",
            CrashPoint::PreIndex => "pre-index",
            CrashPoint::PreAck => "pre-ack",
        }
    }
}

impl fmt::Display for CrashPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CrashPoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        CrashPoint::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown crash point {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultAction {
    /// Return [`StoreError::InjectedCrash`] and leave partial state on disk.
    Fail,
    /// Abort the whole process.
    Abort,
}

/// Crash injection: trigger `action` at `point` during the `on_append`-th
/// append (1-based) made through this store handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultPlan {
    pub point: CrashPoint,
    pub on_append: u64,
    pub action: FaultAction,
}

/// One line of a session index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexRecord {
    pub entry_seq: u64,
    pub entry_id: String,
    pub relative_path: String,
    pub logged_at: String,
    pub asset_id: Option<String>,
}

impl IndexRecord {
    fn for_entry(entry: &LogEntry, relative_path: String) -> Self {
        Self {
            entry_seq: entry.entry_seq,
            entry_id: entry.entry_id.clone(),
            relative_path,
            logged_at: entry.logged_at.clone(),
            asset_id: entry.asset_id.clone(),
        }
    }

    fn to_line(&self) -> String {
        let mut line = canonical::to_string(self).expect("index records always serialize");
        line.push('\n');
        line
    }
}

/// Filter for [`LogStore::query_entries`]; `from` and `to` are inclusive.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntryFilter {
    pub asset_id: Option<String>,
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
}

impl EntryFilter {
    pub fn asset(asset_id: impl Into<String>) -> Self {
        Self { asset_id: Some(asset_id.into()), ..Self::default() }
    }

    fn matches(&self, asset_id: Option<&str>, logged_at: DateTime<Utc>) -> bool {
        if let Some(want) = &self.asset_id {
            if asset_id != Some(want.as_str()) {
                return false;
            }
        }
        self.from.is_none_or(|from| logged_at >= from) && self.to.is_none_or(|to| logged_at <= to)
    }
}

/// Result of reading one session: entries in seq order plus any entries that
/// could not be read.
#[derive(Debug, Default)]
pub struct SessionEntries {
    pub entries: Vec<LogEntry>,
    pub errors: Vec<StoreError>,
}

/// Problems found by [`LogStore::fsck`].
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct FsckReport {
    pub entries_checked: usize,
    pub problems: Vec<String>,
}

impl FsckReport {
    pub fn is_clean(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Session ids become directory names, so they are restricted to
/// `[A-Za-z0-9_-]+`.
pub fn is_safe_session_id(id: &str) -> bool {
    !id.is_empty() && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

pub fn entry_file_name(entry_seq: u64) -> String {
    format!("{entry_seq:06}.json")
}

/// Relative path of an entry, a pure function of the entry.
pub fn relative_path(entry: &LogEntry) -> Option<String> {
    let date = entry.logged_date()?;
    Some(format!("{LOGS_DIR}/{date}/{}/{}", entry.session_id, entry_file_name(entry.entry_seq)))
}

#[derive(Debug)]
pub struct LogStore {
    root: PathBuf,
    session_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    fault: Option<FaultPlan>,
    appends: AtomicU64,
}

impl LogStore {
    /// Opens (creating if needed) a store rooted at `root` and repairs any
    /// state left by an interrupted append.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let logs = root.join(LOGS_DIR);
        fs::create_dir_all(&logs).map_err(io_err(&logs))?;
        let store = Self { root, session_locks: Mutex::new(HashMap::new()), fault: None, appends: AtomicU64::new(0) };
        store.recover()?;
        Ok(store)
    }

    pub fn with_fault(mut self, plan: FaultPlan) -> Self {
        self.fault = Some(plan);
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Fires the configured fault if `point` matches the current append.
    pub fn checkpoint(&self, point: CrashPoint) -> Result<(), StoreError> {
        let Some(plan) = self.fault else { return Ok(()) };
        if plan.point != point || self.appends.load(Ordering::SeqCst) != plan.on_append {
            return Ok(());
        }
        match plan.action {
            FaultAction::Fail => Err(StoreError::InjectedCrash(point)),
            FaultAction::Abort => {
                eprintln!("crash injected at {point}");
                std::process::abort()
            }
        }
    }

    fn session_lock(&self, session_id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.session_locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(session_id.to_string()).or_default().clone()
    }

    fn session_dir(&self, date: &str, session_id: &str) -> PathBuf {
        self.root.join(LOGS_DIR).join(date).join(session_id)
    }

    /// Durably appends `entry` and returns its relative path.
    pub fn append_entry(&self, entry: &LogEntry) -> Result<String, StoreError> {
        let violations = validate_entry(entry);
        if !violations.is_empty() {
            return Err(StoreError::InvalidEntry(violations));
        }
        if !is_safe_session_id(&entry.session_id) {
            return Err(StoreError::InvalidSessionId(entry.session_id.clone()));
        }
        let rel = relative_path(entry).expect("validated entries have a parseable timestamp");
        let lock = self.session_lock(&entry.session_id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        self.appends.fetch_add(1, Ordering::SeqCst);

        let date = entry.logged_date().expect("validated");
        if self.seq_exists_near(&date, &entry.session_id, entry.entry_seq) {
            return Err(StoreError::DuplicateEntry { entry_id: entry.entry_id.clone() });
        }

        let dir = self.session_dir(&date, &entry.session_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let name = entry_file_name(entry.entry_seq);
        let final_path = dir.join(&name);
        let tmp_path = dir.join(format!(".{name}{TMP_SUFFIX}"));

        self.checkpoint(CrashPoint::PreTempWrite)?;
        {
            let mut f = File::create(&tmp_path).map_err(io_err(&tmp_path))?;
            f.write_all(&entry.to_canonical_json()).map_err(io_err(&tmp_path))?;
            f.sync_all().map_err(io_err(&tmp_path))?;
        }
        self.checkpoint(CrashPoint::PreRename)?;
        fs::rename(&tmp_path, &final_path).map_err(io_err(&final_path))?;
        sync_dir(&dir)?;
        self.checkpoint(CrashPoint::PreIndex)?;
        append_index_line(&dir.join(INDEX_FILE), &IndexRecord::for_entry(entry, rel.clone()))?;
        Ok(rel)
    }

    fn seq_exists_near(&self, date: &str, session_id: &str, seq: u64) -> bool {
        adjacent_dates(date)
            .iter()
            .any(|d| self.session_dir(d, session_id).join(entry_file_name(seq)).exists())
    }

    /// Reads a session's committed entries in `entry_seq` order, looking in
    /// the given date directory and the two adjacent ones.
    pub fn read_session_entries(&self, session_id: &str, date: NaiveDate) -> SessionEntries {
        let mut out = SessionEntries::default();
        if !is_safe_session_id(session_id) {
            out.errors.push(StoreError::InvalidSessionId(session_id.to_string()));
            return out;
        }
        let date = date.format("%Y-%m-%d").to_string();
        let mut by_seq = BTreeMap::new();
        for d in adjacent_dates(&date) {
            let dir = self.session_dir(&d, session_id);
            for record in read_index(&dir.join(INDEX_FILE)).unwrap_or_default() {
                match self.read_entry_file(&record) {
                    Ok(entry) => {
                        by_seq.insert(entry.entry_seq, entry);
                    }
                    Err(e) => out.errors.push(e),
                }
            }
        }
        out.entries = by_seq.into_values().collect();
        out
    }

    fn read_entry_file(&self, record: &IndexRecord) -> Result<LogEntry, StoreError> {
        let path = self.root.join(&record.relative_path);
        let bytes = fs::read(&path).map_err(|e| StoreError::CorruptEntry { path: path.clone(), reason: e.to_string() })?;
        let entry = LogEntry::from_json(&bytes)
            .map_err(|e| StoreError::CorruptEntry { path: path.clone(), reason: e.to_string() })?;
        if entry.entry_id != record.entry_id {
            return Err(StoreError::CorruptEntry {
                path,
                reason: format!("entry_id {} does not match index {}", entry.entry_id, record.entry_id),
            });
        }
        Ok(entry)
    }

    /// All committed entries matching `filter`, ordered by
    /// `(logged_at, session_id, entry_seq)`.
    pub fn query_entries(&self, filter: &EntryFilter) -> Result<Vec<LogEntry>, StoreError> {
        if let (Some(from), Some(to)) = (filter.from, filter.to) {
            if from > to {
                return Err(StoreError::InvalidRange);
            }
        }
        let from_day = filter.from.map(|t| t.date_naive());
        let to_day = filter.to.map(|t| t.date_naive());
        let mut hits = Vec::new();
        for (day, session_dir) in self.session_dirs()? {
            if from_day.is_some_and(|f| day < f) || to_day.is_some_and(|t| day > t) {
                continue;
            }
            for record in read_index(&session_dir.join(INDEX_FILE)).map_err(io_err(&session_dir))? {
                let Some(at) = parse_rfc3339(&record.logged_at) else { continue };
                if filter.matches(record.asset_id.as_deref(), at) {
                    hits.push((at, self.read_entry_file(&record)?));
                }
            }
        }
        hits.sort_by(|(ta, a), (tb, b)| {
            ta.cmp(tb).then_with(|| a.session_id.cmp(&b.session_id)).then_with(|| a.entry_seq.cmp(&b.entry_seq))
        });
        Ok(hits.into_iter().map(|(_, e)| e).collect())
    }

    /// Every `(date, session directory)` pair in the store.
    fn session_dirs(&self) -> Result<Vec<(NaiveDate, PathBuf)>, StoreError> {
        let logs = self.root.join(LOGS_DIR);
        let mut out = Vec::new();
        for day in sorted_dir_entries(&logs)? {
            let Some(date) = day.file_name().and_then(|n| n.to_str()).and_then(|n| NaiveDate::from_str(n).ok()) else {
                continue;
            };
            if !day.is_dir() {
                continue;
            }
            for session in sorted_dir_entries(&day)? {
                if session.is_dir() {
                    out.push((date, session));
                }
            }
        }
        Ok(out)
    }

    fn recover(&self) -> Result<(), StoreError> {
        for (_, dir) in self.session_dirs()? {
            let index_path = dir.join(INDEX_FILE);
            truncate_torn_tail(&index_path)?;
            let existing = read_index(&index_path).map_err(io_err(&index_path))?;
            let in_order = existing.windows(2).all(|w| w[0].entry_seq < w[1].entry_seq);
            let indexed_before = existing.len();
            let mut records: BTreeMap<u64, IndexRecord> = existing.into_iter().map(|r| (r.entry_seq, r)).collect();

            for path in sorted_dir_entries(&dir)? {
                let Some(name) = path.file_name().and_then(|n| n.to_str()).map(str::to_string) else { continue };
                if name.ends_with(TMP_SUFFIX) {
                    fs::remove_file(&path).map_err(io_err(&path))?;
                    continue;
                }
                let Some(seq) = name.strip_suffix(".json").and_then(|s| s.parse::<u64>().ok()) else { continue };
                if records.contains_key(&seq) {
                    continue;
                }
                // Renamed files were fsynced first, so they are complete.
                if let Ok(entry) = fs::read(&path).map_err(|_| ()).and_then(|b| LogEntry::from_json(&b).map_err(|_| ())) {
                    if let Some(rel) = relative_path(&entry) {
                        records.insert(seq, IndexRecord::for_entry(&entry, rel));
                    }
                }
            }

            if records.len() != indexed_before || !in_order {
                rewrite_index(&index_path, records.values())?;
            }
            sync_dir(&dir)?;
        }
        Ok(())
    }

    /// Verifies that index lines and entry files agree one-to-one and that
    /// every entry is valid.
    pub fn fsck(&self) -> Result<FsckReport, StoreError> {
        let mut report = FsckReport::default();
        for (date, dir) in self.session_dirs()? {
            let index_path = dir.join(INDEX_FILE);
            let session_id = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            let text = match fs::read_to_string(&index_path) {
                Ok(t) => t,
                Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
                Err(e) => return Err(io_err(&index_path)(e)),
            };
            if !text.is_empty() && !text.ends_with('\n') {
                report.problems.push(format!("{}: torn trailing line", index_path.display()));
            }
            let mut indexed = BTreeMap::new();
            let mut last_seq = 0;
            for (n, line) in text.lines().enumerate() {
                let record: IndexRecord = match serde_json::from_str(line) {
                    Ok(r) => r,
                    Err(e) => {
                        report.problems.push(format!("{}:{}: {e}", index_path.display(), n + 1));
                        continue;
                    }
                };
                if record.entry_seq <= last_seq {
                    report.problems.push(format!("{}:{}: seq {} out of order", index_path.display(), n + 1, record.entry_seq));
                }
                last_seq = record.entry_seq;
                indexed.insert(record.entry_seq, record);
            }
            let mut files = BTreeMap::new();
            for path in sorted_dir_entries(&dir)? {
                let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
                if name == INDEX_FILE {
                    continue;
                }
                if name.ends_with(TMP_SUFFIX) {
                    report.problems.push(format!("{}: leftover temp file", path.display()));
                    continue;
                }
                match name.strip_suffix(".json").and_then(|s| s.parse::<u64>().ok()) {
                    Some(seq) => {
                        files.insert(seq, path);
                    }
                    None => report.problems.push(format!("{}: unexpected file", path.display())),
                }
            }
            for (seq, record) in &indexed {
                let expected_rel = format!("{LOGS_DIR}/{date}/{session_id}/{}", entry_file_name(*seq));
                if record.relative_path != expected_rel {
                    report.problems.push(format!("index seq {seq}: path {} should be {expected_rel}", record.relative_path));
                }
                if !files.contains_key(seq) {
                    report.problems.push(format!("index seq {seq} of {session_id} has no entry file"));
                    continue;
                }
                report.entries_checked += 1;
                match self.read_entry_file(record) {
                    Ok(entry) => {
                        for v in validate_entry(&entry) {
                            report.problems.push(format!("{}: {v}", record.relative_path));
                        }
                        if entry.entry_seq != *seq || entry.session_id != session_id {
                            report.problems.push(format!("{}: entry ids disagree with its path", record.relative_path));
                        }
                        if IndexRecord::for_entry(&entry, record.relative_path.clone()) != *record {
                            report.problems.push(format!("{}: index line disagrees with entry", record.relative_path));
                        }
                    }
                    Err(e) => report.problems.push(e.to_string()),
                }
            }
            for (seq, path) in &files {
                if !indexed.contains_key(seq) {
                    report.problems.push(format!("{}: entry file missing from index", path.display()));
                }
            }
        }
        Ok(report)
    }
}

fn adjacent_dates(date: &str) -> Vec<String> {
    let Ok(d) = NaiveDate::from_str(date) else { return vec![date.to_string()] };
    [d.checked_sub_days(Days::new(1)), Some(d), d.checked_add_days(Days::new(1))]
        .into_iter()
        .flatten()
        .map(|d| d.format("%Y-%m-%d").to_string())
        .collect()
}

fn sorted_dir_entries(dir: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let rd = match fs::read_dir(dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(dir)(e)),
    };
    let mut paths = rd.map(|e| e.map(|e| e.path())).collect::<io::Result<Vec<_>>>().map_err(io_err(dir))?;
    paths.sort();
    Ok(paths)
}

fn sync_dir(dir: &Path) -> Result<(), StoreError> {
    File::open(dir).and_then(|d| d.sync_all()).map_err(io_err(dir))
}

fn append_index_line(path: &Path, record: &IndexRecord) -> Result<(), StoreError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    f.write_all(record.to_line().as_bytes()).map_err(io_err(path))?;
    f.sync_data().map_err(io_err(path))
}

/// Parses complete index lines; a trailing line without a newline is still
/// being written (or was torn) and is skipped.
fn read_index(path: &Path) -> io::Result<Vec<IndexRecord>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    Ok(text
        .split_inclusive('\n')
        .filter(|l| l.ends_with('\n'))
        .filter_map(|l| serde_json::from_str(l.trim_end()).ok())
        .collect())
}

fn truncate_torn_tail(path: &Path) -> Result<(), StoreError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(io_err(path)(e)),
    };
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
    f.set_len(keep as u64).map_err(io_err(path))?;
    f.sync_all().map_err(io_err(path))
}

fn rewrite_index<'a>(path: &Path, records: impl Iterator<Item = &'a IndexRecord>) -> Result<(), StoreError> {
    let tmp = path.with_file_name(format!(".{INDEX_FILE}{TMP_SUFFIX}"));
    {
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        for r in records {
            f.write_all(r.to_line().as_bytes()).map_err(io_err(&tmp))?;
        }
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::Intent;

    fn entry(sid: &str, seq: u64, at: &str, asset: Option<&str>) -> LogEntry {
        LogEntry {
            entry_id: LogEntry::format_entry_id(sid, seq),
            session_id: sid.into(),
            entry_seq: seq,
            operator: "tech-01".into(),
            asset_id: asset.map(str::to_string),
            spoken_text: format!("finding {seq}"),
            intent: Intent::LogFinding { text: format!("finding {seq}") },
            confidence: 0.9,
            logged_at: at.into(),
            schema_version: 1,
        }
    }

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2025, 3, 14).unwrap()
    }

    #[test]
    fn path_scheme() {
        let dir = tempfile::tempdir().unwrap();
        let store = LogStore::open(dir.path()).unwrap();
        let rel = store.append_entry(&entry("s-7f3a", 3, "2025-03-14T10:22:05.120Z", None)).unwrap();
        assert_eq!(rel, "logs/2025-03-14/s-7f3a/000003.json");
        assert!(dir.path().join(&rel).is_file());
    }

    #[test]
    fn duplicate_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let store = LogStore::open(dir.path()).unwrap();
        let e = entry("s-1", 1, "2025-03-14T10:22:05.120Z", None);
        store.append_entry(&e).unwrap();
        assert!(matches!(store.append_entry(&e), Err(StoreError::DuplicateEntry { .. })));
        // Same seq on the following day is still a duplicate.
        let late = entry("s-1", 1, "2025-03-15T00:00:01.000Z", None);
        assert!(matches!(store.append_entry(&late), Err(StoreError::DuplicateEntry { .. })));
    }

    #[test]
    fn invalid_entry_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let store = LogStore::open(dir.path()).unwrap();
        let mut e = entry("s-1", 1, "2025-03-14T10:22:05.120Z", None);
        e.spoken_text.clear();
        assert!(matches!(store.append_entry(&e), Err(StoreError::InvalidEntry(_))));
        let e = entry("../x", 1, "2025-03-14T10:22:05.120Z", None);
        assert!(store.append_entry(&e).is_err());
    }

    #[test]
    fn read_back_in_order_and_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let store = LogStore::open(dir.path()).unwrap();
        let written: Vec<_> =
            (1..=5).map(|i| entry("s-1", i, &format!("2025-03-14T10:22:0{i}.000Z"), None)).collect();
        for e in &written {
            store.append_entry(e).unwrap();
        }
        let read = store.read_session_entries("s-1", day());
        assert!(read.errors.is_empty());
        assert_eq!(read.entries, written);
        for e in &read.entries {
            let on_disk = fs::read(dir.path().join(relative_path(e).unwrap())).unwrap();
            assert_eq!(on_disk, e.to_canonical_json());
        }
        assert!(store.read_session_entries("nobody", day()).entries.is_empty());
    }

    #[test]
    fn corrupt_file_isolated() {
        let dir = tempfile::tempdir().unwrap();
        let store = LogStore::open(dir.path()).unwrap();
        for i in 1..=5 {
            store.append_entry(&entry("s-1", i, "2025-03-14T10:22:05.000Z", None)).unwrap();
        }
        let victim = dir.path().join("logs/2025-03-14/s-1/000003.json");
        fs::write(&victim, b"{not json").unwrap();
        let read = store.read_session_entries("s-1", day());
        assert_eq!(read.entries.iter().map(|e| e.entry_seq).collect::<Vec<_>>(), vec![1, 2, 4, 5]);
        assert_eq!(read.errors.len(), 1);
        assert!(matches!(&read.errors[0], StoreError::CorruptEntry { path, .. } if path == &victim));
    }

    #[test]
    fn session_spanning_midnight() {
        let dir = tempfile::tempdir().unwrap();
        let store = LogStore::open(dir.path()).unwrap();
        store.append_entry(&entry("s-1", 1, "2025-03-14T23:59:59.900Z", None)).unwrap();
        store.append_entry(&entry("s-1", 2, "2025-03-15T00:00:00.100Z", None)).unwrap();
        let read = store.read_session_entries("s-1", day());
        assert_eq!(read.entries.len(), 2);
        let read = store.read_session_entries("s-1", day().succ_opt().unwrap());
        assert_eq!(read.entries.len(), 2);
    }

    #[test]
    fn query_by_asset_and_range() {
        let dir = tempfile::tempdir().unwrap();
        let store = LogStore::open(dir.path()).unwrap();
        store.append_entry(&entry("s-a", 1, "2025-03-14T10:00:00.000Z", Some("RAIL-42"))).unwrap();
        store.append_entry(&entry("s-a", 2, "2025-03-14T10:05:00.000Z", None)).unwrap();
        store.append_entry(&entry("s-b", 1, "2025-03-14T10:01:00.000Z", Some("RAIL-42"))).unwrap();
        store.append_entry(&entry("s-b", 2, "2025-03-15T09:00:00.000Z", Some("RAIL-42"))).unwrap();
        let hits = store.query_entries(&EntryFilter::asset("RAIL-42")).unwrap();
        let ids: Vec<_> = hits.iter().map(|e| e.entry_id.as_str()).collect();
        assert_eq!(ids, ["s-a-000001", "s-b-000001", "s-b-000002"]);
        assert_eq!(store.query_entries(&EntryFilter::default()).unwrap().len(), 4);

        let t = |s| parse_rfc3339(s).unwrap();
        let ranged = EntryFilter {
            asset_id: None,
            from: Some(t("2025-03-14T10:01:00.000Z")),
            to: Some(t("2025-03-14T10:05:00.000Z")),
        };
        let ids: Vec<_> = store.query_entries(&ranged).unwrap().into_iter().map(|e| e.entry_id).collect();
        assert_eq!(ids, ["s-b-000001", "s-a-000002"]);

        let backwards = EntryFilter { asset_id: None, from: ranged.to, to: ranged.from };
        assert!(matches!(store.query_entries(&backwards), Err(StoreError::InvalidRange)));
    }

    #[test]
    fn injected_crashes_recover_clean() {
        for point in [CrashPoint::PreTempWrite, CrashPoint::PreRename, CrashPoint::PreIndex] {
            let dir = tempfile::tempdir().unwrap();
            {
                let store = LogStore::open(dir.path())
                    .unwrap()
                    .with_fault(FaultPlan { point, on_append: 3, action: FaultAction::Fail });
                store.append_entry(&entry("s-1", 1, "2025-03-14T10:00:00.000Z", None)).unwrap();
                store.append_entry(&entry("s-1", 2, "2025-03-14T10:00:01.000Z", None)).unwrap();
                let err = store.append_entry(&entry("s-1", 3, "2025-03-14T10:00:02.000Z", None)).unwrap_err();
                assert!(matches!(err, StoreError::InjectedCrash(p) if p == point));
            }
            let store = LogStore::open(dir.path()).unwrap();
            let report = store.fsck().unwrap();
            assert!(report.is_clean(), "{point}: {:?}", report.problems);
            let seqs: Vec<_> =
                store.read_session_entries("s-1", day()).entries.iter().map(|e| e.entry_seq).collect();
            let expected: Vec<u64> = if point == CrashPoint::PreIndex { vec![1, 2, 3] } else { vec![1, 2] };
            assert_eq!(seqs, expected, "{point}");
        }
    }

    #[test]
    fn torn_index_tail_dropped() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = LogStore::open(dir.path()).unwrap();
            store.append_entry(&entry("s-1", 1, "2025-03-14T10:00:00.000Z", None)).unwrap();
        }
        let index = dir.path().join("logs/2025-03-14/s-1/index.jsonl");
        let mut f = OpenOptions::new().append(true).open(&index).unwrap();
        f.write_all(b"{\"entry_seq\":2,\"entry").unwrap();
        drop(f);
        let store = LogStore::open(dir.path()).unwrap();
        assert!(store.fsck().unwrap().is_clean());
        assert_eq!(store.read_session_entries("s-1", day()).entries.len(), 1);
    }

    #[test]
    fn fsck_flags_orphans() {
        let dir = tempfile::tempdir().unwrap();
        let store = LogStore::open(dir.path()).unwrap();
        store.append_entry(&entry("s-1", 1, "2025-03-14T10:00:00.000Z", None)).unwrap();
        fs::remove_file(dir.path().join("logs/2025-03-14/s-1/000001.json")).unwrap();
        let report = store.fsck().unwrap();
        assert!(!report.is_clean());
    }

    #[test]
    fn crash_point_names() {
        for p in CrashPoint::ALL {
            assert_eq!(p.as_str().parse::<CrashPoint>().unwrap(), p);
        }
    }
}
