//! Asset registry and QR label payloads.
//!
//! A QR label carries `MAINT1:{asset_id}:{crc}` where `crc` is the CRC-32
//! (IEEE 802.3, reflected, init and final xor `0xFFFFFFFF`) of the UTF-8
//! bytes of `MAINT1:{asset_id}`, written as 8 lowercase hex digits.
//!
//! Service history is not stored with the asset; it is read from the log
//! store by asset id.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::pipeline::LogEntry;
use crate::store::{EntryFilter, LogStore, StoreError};
use crate::time::parse_rfc3339;

pub const QR_PREFIX: &str = "MAINT1";

#[derive(Debug, Error)]
pub enum AssetError {
    #[error("invalid asset id {0:?}")]
    InvalidAssetId(String),
    #[error("QR payload does not start with {QR_PREFIX}:")]
    BadPrefix,
    #[error("QR payload is not of the form {QR_PREFIX}:<asset_id>:<crc32>")]
    BadStructure,
    #[error("QR payload checksum mismatch")]
    ChecksumMismatch,
    #[error("asset {0} is already registered")]
    DuplicateAsset(String),
    #[error("asset {0} not found")]
    AssetNotFound(String),
    #[error("invalid asset: {0}")]
    InvalidAsset(String),
    #[error("registry I/O at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt registry line {line}: {reason}")]
    CorruptRegistry { line: usize, reason: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// True if `s` matches `[A-Z0-9]+(-[A-Z0-9]+)*`.
pub fn is_asset_code(s: &str) -> bool {
    !s.is_empty()
        && s.split('-')
            .all(|part| !part.is_empty() && part.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit()))
}

/// A normalized asset code.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AssetId(String);

impl AssetId {
    pub fn new(code: impl Into<String>) -> Result<Self, AssetError> {
        let code = code.into();
        if is_asset_code(&code) {
            Ok(Self(code))
        } else {
            Err(AssetError::InvalidAssetId(code))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for AssetId {
    type Error = AssetError;

    fn try_from(s: String) -> Result<Self, AssetError> {
        Self::new(s)
    }
}

impl From<AssetId> for String {
    fn from(id: AssetId) -> String {
        id.0
    }
}

impl fmt::Display for AssetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

const CRC32_TABLE: [u32; 256] = {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
};

/// CRC-32/ISO-HDLC, the checksum used by zlib and Ethernet.
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = CRC32_TABLE[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}

pub fn encode_qr_payload(asset_id: &str) -> Result<String, AssetError> {
    let id = AssetId::new(asset_id)?;
    let body = format!("{QR_PREFIX}:{id}");
    Ok(format!("{body}:{:08x}", crc32(body.as_bytes())))
}

pub fn decode_qr_payload(payload: &str) -> Result<AssetId, AssetError> {
    let rest = payload.strip_prefix(QR_PREFIX).and_then(|r| r.strip_prefix(':')).ok_or(AssetError::BadPrefix)?;
    let (id, checksum) = rest.split_once(':').ok_or(AssetError::BadStructure)?;
    if id.is_empty()
        || checksum.contains(':')
        || checksum.len() != 8
        || !checksum.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
    {
        return Err(AssetError::BadStructure);
    }
    let expected = u32::from_str_radix(checksum, 16).map_err(|_| AssetError::BadStructure)?;
    let body_len = payload.len() - checksum.len() - 1;
    if crc32(&payload.as_bytes()[..body_len]) != expected {
        return Err(AssetError::ChecksumMismatch);
    }
    AssetId::new(id).map_err(|_| AssetError::BadStructure)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Asset {
    pub asset_id: AssetId,
    pub asset_type: String,
    pub location: String,
    #[serde(default)]
    pub doc_refs: Vec<String>,
    pub created_at: String,
}

impl Asset {
    fn check(&self) -> Result<(), AssetError> {
        if self.asset_type.is_empty() {
            return Err(AssetError::InvalidAsset("asset_type is empty".into()));
        }
        if parse_rfc3339(&self.created_at).is_none() {
            return Err(AssetError::InvalidAsset(format!("created_at {:?} is not RFC 3339", self.created_at)));
        }
        Ok(())
    }
}

/// Assets persisted as one canonical JSON object per line.
#[derive(Debug)]
pub struct AssetRegistry {
    path: PathBuf,
    assets: RwLock<HashMap<AssetId, Asset>>,
}

impl AssetRegistry {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, AssetError> {
        let path = path.into();
        let mut assets = HashMap::new();
        match fs::read_to_string(&path) {
            Ok(text) => {
                for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                    let asset: Asset = serde_json::from_str(line)
                        .map_err(|e| AssetError::CorruptRegistry { line: n + 1, reason: e.to_string() })?;
                    assets.insert(asset.asset_id.clone(), asset);
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(source) => return Err(AssetError::Io { path, source }),
        }
        Ok(Self { path, assets: RwLock::new(assets) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn register_asset(&self, asset: Asset) -> Result<(), AssetError> {
        asset.check()?;
        let mut assets = self.assets.write().unwrap_or_else(|e| e.into_inner());
        if assets.contains_key(&asset.asset_id) {
            return Err(AssetError::DuplicateAsset(asset.asset_id.to_string()));
        }
        let mut line = canonical::to_string(&asset).expect("assets always serialize");
        line.push('\n');
        let io_err = |source| AssetError::Io { path: self.path.clone(), source };
        if let Some(parent) = self.path.parent() {
            fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut f: File = OpenOptions::new().create(true).append(true).open(&self.path).map_err(io_err)?;
        f.write_all(line.as_bytes()).map_err(io_err)?;
        f.sync_data().map_err(io_err)?;
        assets.insert(asset.asset_id.clone(), asset);
        Ok(())
    }

    pub fn get(&self, asset_id: &str) -> Option<Asset> {
        let id = AssetId::new(asset_id).ok()?;
        self.assets.read().unwrap_or_else(|e| e.into_inner()).get(&id).cloned()
    }

    pub fn contains(&self, asset_id: &str) -> bool {
        self.get(asset_id).is_some()
    }

    pub fn len(&self) -> usize {
        self.assets.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The asset plus every log entry recorded against it, in time order.
pub fn get_asset_with_history(
    registry: &AssetRegistry,
    store: &LogStore,
    asset_id: &str,
) -> Result<(Asset, Vec<LogEntry>), AssetError> {
    let asset = registry.get(asset_id).ok_or_else(|| AssetError::AssetNotFound(asset_id.to_string()))?;
    let history = store.query_entries(&EntryFilter::asset(asset.asset_id.as_str()))?;
    Ok((asset, history))
}
