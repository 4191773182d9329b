use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use hfm_core::store::FaultPlan;

use crate::GatewayError;

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub listen_address: SocketAddr,
    pub data_dir: PathBuf,
    /// File holding the 64-hex-char signing key; generated if missing.
    pub key_file: PathBuf,
    pub token_ttl_seconds: i64,
    pub max_sessions: usize,
    pub heartbeat_timeout: Duration,
    /// Shared passphrase for `POST /api/v1/auth/token`; issuance is disabled
    /// when unset.
    pub dev_passphrase: Option<String>,
    /// Crash injection for the store's commit path.
    pub fault: Option<FaultPlan>,
}

impl GatewayConfig {
    pub fn new(listen_address: SocketAddr, data_dir: impl Into<PathBuf>, key_file: impl Into<PathBuf>) -> Self {
        Self {
            listen_address,
            data_dir: data_dir.into(),
            key_file: key_file.into(),
            token_ttl_seconds: hfm_core::auth::DEFAULT_TTL_SECONDS,
            max_sessions: 64,
            heartbeat_timeout: Duration::from_secs(30),
            dev_passphrase: None,
            fault: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.token_ttl_seconds <= 0 {
            return Err(GatewayError::Config("token TTL must be positive".into()));
        }
        if self.max_sessions == 0 {
            return Err(GatewayError::Config("max sessions must be positive".into()));
        }
        if self.heartbeat_timeout.is_zero() {
            return Err(GatewayError::Config("heartbeat timeout must be positive".into()));
        }
        Ok(())
    }
}
