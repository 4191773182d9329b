//! HS256 access tokens authorizing field clients to open streaming sessions.
//!
//! Tokens use a minimal JWT-compatible profile:
//! `b64url(header) "." b64url(payload) "." b64url(sig)` with unpadded
//! base64url, a fixed header `{"alg":"HS256","ver":1,"kid":...}`, canonical
//! JSON claims, and an HMAC-SHA256 signature over the first two segments.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical;

type HmacSha256 = Hmac<Sha256>;

/// Default token lifetime in seconds.
pub const DEFAULT_TTL_SECONDS: i64 = 3600;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuthError {
    #[error("invalid claims: {0}")]
    InvalidClaims(String),
    #[error("malformed token: {0}")]
    Malformed(String),
    #[error("bad signature")]
    BadSignature,
    #[error("token expired")]
    Expired,
    #[error("invalid signing key: {0}")]
    InvalidKey(String),
}

/// Authorization scopes a token can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scope {
    #[serde(rename = "assets:read")]
    AssetsRead,
    #[serde(rename = "assets:write")]
    AssetsWrite,
    #[serde(rename = "logs:read")]
    LogsRead,
    #[serde(rename = "session:stream")]
    SessionStream,
}

impl Scope {
    pub const ALL: [Scope; 4] = [Scope::AssetsRead, Scope::AssetsWrite, Scope::LogsRead, Scope::SessionStream];

    pub fn as_str(self) -> &'static str {
        match self {
            Scope::AssetsRead => "assets:read",
            Scope::AssetsWrite => "assets:write",
            Scope::LogsRead => "logs:read",
            Scope::SessionStream => "session:stream",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenClaims {
    #[serde(rename = "sub")]
    pub subject: String,
    pub scopes: BTreeSet<Scope>,
    #[serde(rename = "iat")]
    pub issued_at: i64,
    #[serde(rename = "exp")]
    pub expires_at: i64,
    #[serde(rename = "jti")]
    pub token_id: String,
}

impl TokenClaims {
    /// Builds claims valid for `ttl_seconds` from `issued_at` with a fresh
    /// random token id.
    pub fn new(
        subject: impl Into<String>,
        scopes: impl IntoIterator<Item = Scope>,
        issued_at: i64,
        ttl_seconds: i64,
    ) -> Self {
        Self {
            subject: subject.into(),
            scopes: scopes.into_iter().collect(),
            issued_at,
            expires_at: issued_at.saturating_add(ttl_seconds),
            token_id: random_token_id(),
        }
    }

    pub fn validate(&self) -> Result<(), AuthError> {
        if self.subject.is_empty() {
            return Err(AuthError::InvalidClaims("subject is empty".into()));
        }
        if self.scopes.is_empty() {
            return Err(AuthError::InvalidClaims("scopes are empty".into()));
        }
        if self.expires_at <= self.issued_at {
            return Err(AuthError::InvalidClaims("expires_at must be after issued_at".into()));
        }
        if self.token_id.len() != 16 || !self.token_id.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(AuthError::InvalidClaims("token_id must be 16 lowercase hex chars".into()));
        }
        Ok(())
    }

    pub fn has_scope(&self, scope: Scope) -> bool {
        self.scopes.contains(&scope)
    }
}

fn random_token_id() -> String {
    hex::encode(rand::random::<[u8; 8]>())
}

/// A 32-byte HMAC secret plus the identifier advertised in token headers.
#[derive(Clone, PartialEq, Eq)]
pub struct SigningKey {
    key_bytes: [u8; 32],
    key_id: String,
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningKey").field("key_id", &self.key_id).finish_non_exhaustive()
    }
}

impl SigningKey {
    pub fn new(key_bytes: [u8; 32], key_id: impl Into<String>) -> Self {
        Self { key_bytes, key_id: key_id.into() }
    }

    /// Builds a key whose id is derived from the key material: the first
    /// four bytes of its SHA-256 digest, hex encoded.
    pub fn from_bytes(key_bytes: [u8; 32]) -> Self {
        let digest = Sha256::digest(key_bytes);
        let key_id = hex::encode(&digest[..4]);
        Self { key_bytes, key_id }
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, AuthError> {
        let key_bytes: [u8; 32] = bytes
            .try_into()
            .map_err(|_| AuthError::InvalidKey(format!("expected 32 bytes, got {}", bytes.len())))?;
        Ok(Self::from_bytes(key_bytes))
    }

    /// Parses a 64-hex-char key; surrounding whitespace is ignored.
    pub fn from_hex(text: &str) -> Result<Self, AuthError> {
        let text = text.trim();
        if text.len() != 64 {
            return Err(AuthError::InvalidKey(format!("expected 64 hex chars, got {}", text.len())));
        }
        let bytes = hex::decode(text).map_err(|e| AuthError::InvalidKey(e.to_string()))?;
        Self::from_slice(&bytes)
    }

    pub fn load(path: &Path) -> Result<Self, AuthError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AuthError::InvalidKey(format!("{}: {e}", path.display())))?;
        Self::from_hex(&text)
    }

    pub fn generate() -> Self {
        Self::from_bytes(rand::random())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.key_bytes)
    }

    pub fn key_id(&self) -> &str {
        &self.key_id
    }

    fn mac(&self) -> HmacSha256 {
        HmacSha256::new_from_slice(&self.key_bytes).expect("HMAC accepts any key length")
    }
}

/// Computes HMAC-SHA256 of `data` under `key`.
pub fn hmac_sha256(key: &[u8], data: &[u8]) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(data);
    mac.finalize().into_bytes().into()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    alg: String,
    ver: u32,
    kid: String,
}

fn header_json(key_id: &str) -> String {
    // Field order is fixed: alg, ver, kid.
    let kid = serde_json::to_string(key_id).expect("strings always serialize");
    format!(r#"{{"alg":"HS256","ver":1,"kid":{kid}}}"#)
}

pub fn issue_token(claims: &TokenClaims, key: &SigningKey) -> Result<String, AuthError> {
    claims.validate()?;
    let header_b64 = URL_SAFE_NO_PAD.encode(header_json(&key.key_id));
    let payload = canonical::to_string(claims).map_err(|e| AuthError::InvalidClaims(e.to_string()))?;
    let payload_b64 = URL_SAFE_NO_PAD.encode(payload);
    let signing_input = format!("{header_b64}.{payload_b64}");
    let mut mac = key.mac();
    mac.update(signing_input.as_bytes());
    let sig = mac.finalize().into_bytes();
    Ok(format!("{signing_input}.{}", URL_SAFE_NO_PAD.encode(sig)))
}

pub fn verify_token(token: &str, key: &SigningKey, now: i64) -> Result<TokenClaims, AuthError> {
    let mut parts = token.split('.');
    let (Some(header_b64), Some(payload_b64), Some(sig_b64), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err(AuthError::Malformed("expected 3 segments".into()));
    };

    let sig = decode_segment(sig_b64, "signature")?;
    let mut mac = key.mac();
    mac.update(header_b64.as_bytes());
    mac.update(b".");
    mac.update(payload_b64.as_bytes());
    // verify_slice compares in constant time.
    mac.verify_slice(&sig).map_err(|_| AuthError::BadSignature)?;

    let header: Header = serde_json::from_slice(&decode_segment(header_b64, "header")?)
        .map_err(|e| AuthError::Malformed(format!("header: {e}")))?;
    if header.alg != "HS256" || header.ver != 1 {
        return Err(AuthError::Malformed(format!("unsupported header alg={} ver={}", header.alg, header.ver)));
    }
    let claims: TokenClaims = serde_json::from_slice(&decode_segment(payload_b64, "payload")?)
        .map_err(|e| AuthError::Malformed(format!("payload: {e}")))?;
    claims.validate().map_err(|e| AuthError::Malformed(e.to_string()))?;

    if now >= claims.expires_at {
        return Err(AuthError::Expired);
    }
    Ok(claims)
}

fn decode_segment(segment: &str, what: &str) -> Result<Vec<u8>, AuthError> {
    URL_SAFE_NO_PAD
        .decode(segment)
        .map_err(|e| AuthError::Malformed(format!("{what}: {e}")))
}
