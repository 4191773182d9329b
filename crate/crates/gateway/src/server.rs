use std::fs;
use std::io;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::serve::ListenerExt;
use axum::{Json, Router};
use chrono::{NaiveDate, Utc};
use hfm_core::assets::{get_asset_with_history, Asset, AssetError, AssetRegistry};
use hfm_core::auth::{issue_token, verify_token, Scope, SigningKey, TokenClaims};
use hfm_core::pipeline::{Clock, LogEntry, SystemClock};
use hfm_core::store::{EntryFilter, LogStore, StoreError};
use hfm_core::time::parse_rfc3339;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::{oneshot, Semaphore};
use tokio::task::JoinHandle;
use tracing::{info, warn};

use crate::session::{SessionDriver, SessionServices};
use crate::{GatewayConfig, GatewayError};

#[derive(Clone)]
pub struct AppState {
    pub services: SessionServices,
    token_ttl_seconds: i64,
    dev_passphrase: Option<Arc<str>>,
    heartbeat_timeout: Duration,
    sessions: Arc<Semaphore>,
}

impl AppState {
    /// Opens the key, store and registry described by `config`.
    pub fn open(config: &GatewayConfig, clock: Arc<dyn Clock>) -> Result<Self, GatewayError> {
        config.validate()?;
        let key = load_or_create_key(&config.key_file)?;
        let mut store = LogStore::open(&config.data_dir)?;
        if let Some(plan) = config.fault {
            store = store.with_fault(plan);
        }
        let registry = AssetRegistry::open(config.data_dir.join("assets.jsonl"))?;
        Ok(Self {
            services: SessionServices { key, store: Arc::new(store), registry: Arc::new(registry), clock },
            token_ttl_seconds: config.token_ttl_seconds,
            dev_passphrase: config.dev_passphrase.as_deref().map(Arc::from),
            heartbeat_timeout: config.heartbeat_timeout,
            sessions: Arc::new(Semaphore::new(config.max_sessions)),
        })
    }
}

/// Reads a hex key file, creating it with a fresh key if absent.
pub fn load_or_create_key(path: &Path) -> Result<SigningKey, GatewayError> {
    match SigningKey::load(path) {
        Ok(key) => Ok(key),
        Err(_) if !path.exists() => {
            let key = SigningKey::generate();
            let io_err = |source| GatewayError::Io { path: path.to_path_buf(), source };
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(io_err)?;
            }
            write_private(path, &key.to_hex()).map_err(io_err)?;
            info!(path = %path.display(), kid = key.key_id(), "generated signing key");
            Ok(key)
        }
        Err(e) => Err(e.into()),
    }
}

#[cfg(unix)]
fn write_private(path: &Path, text: &str) -> io::Result<()> {
    use std::io::Write;
    use std::os::unix::fs::OpenOptionsExt;
    let mut f = fs::OpenOptions::new().write(true).create_new(true).mode(0o600).open(path)?;
    f.write_all(text.as_bytes())?;
    f.sync_all()
}

#[cfg(not(unix))]
fn write_private(path: &Path, text: &str) -> io::Result<()> {
    fs::write(path, text)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/api/v1/auth/token", post(issue))
        .route("/api/v1/sessions/{id}/entries", get(session_entries))
        .route("/api/v1/entries", get(query_entries))
        .route("/api/v1/assets", post(register_asset))
        .route("/api/v1/assets/{id}", get(get_asset))
        .route("/api/v1/stream", get(stream))
        .with_state(state)
}

/// A gateway serving on a background task.
pub struct RunningGateway {
    pub addr: SocketAddr,
    pub state: AppState,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<io::Result<()>>,
}

impl RunningGateway {
    pub async fn start(config: &GatewayConfig) -> Result<Self, GatewayError> {
        Self::start_with_clock(config, Arc::new(SystemClock)).await
    }

    pub async fn start_with_clock(config: &GatewayConfig, clock: Arc<dyn Clock>) -> Result<Self, GatewayError> {
        let state = AppState::open(config, clock)?;
        let listener = TcpListener::bind(config.listen_address).await.map_err(GatewayError::Bind)?;
        let addr = listener.local_addr().map_err(GatewayError::Bind)?;
        let (tx, rx) = oneshot::channel();
        let app = router(state.clone());
        let task = tokio::spawn(async move {
            let listener = listener.tap_io(|tcp| {
                if let Err(e) = tcp.set_nodelay(true) {
                    warn!(error = %e, "cannot set TCP_NODELAY");
                }
            });
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        });
        info!(%addr, "gateway listening");
        Ok(Self { addr, state, shutdown: Some(tx), task })
    }

    /// Stops accepting connections and waits for the server task.
    pub async fn shutdown(mut self) -> io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.task.await.map_err(io::Error::other)?
    }

    /// Waits until the server stops on its own.
    pub async fn wait(self) -> io::Result<()> {
        let Self { task, shutdown, .. } = self;
        let _keep = shutdown;
        task.await.map_err(io::Error::other)?
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::InvalidRange | StoreError::InvalidSessionId(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl From<AssetError> for ApiError {
    fn from(e: AssetError) -> Self {
        let status = match e {
            AssetError::AssetNotFound(_) => StatusCode::NOT_FOUND,
            AssetError::DuplicateAsset(_) => StatusCode::CONFLICT,
            AssetError::InvalidAssetId(_) | AssetError::InvalidAsset(_) => StatusCode::BAD_REQUEST,
            AssetError::Store(e) => return e.into(),
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn require(state: &AppState, headers: &HeaderMap, scope: Scope) -> Result<TokenClaims, ApiError> {
    let unauthorized = |m: &str| ApiError(StatusCode::UNAUTHORIZED, m.to_string());
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or_else(|| unauthorized("missing bearer token"))?;
    let now = state.services.clock.now().timestamp();
    let claims = verify_token(token.trim(), &state.services.key, now).map_err(|e| unauthorized(&e.to_string()))?;
    if !claims.has_scope(scope) {
        return Err(ApiError(StatusCode::FORBIDDEN, format!("missing scope {scope}")));
    }
    Ok(claims)
}

#[derive(Deserialize)]
struct TokenRequest {
    subject: String,
    passphrase: String,
}

#[derive(Serialize)]
struct TokenResponse {
    token: String,
    expires_at: i64,
}

async fn issue(State(state): State<AppState>, Json(req): Json<TokenRequest>) -> Result<Json<TokenResponse>, ApiError> {
    let Some(expected) = &state.dev_passphrase else {
        return Err(ApiError(StatusCode::FORBIDDEN, "token issuance is disabled".into()));
    };
    // Compare digests so timing does not depend on the matching prefix length.
    let same = hfm_core::auth::hmac_sha256(b"passphrase", req.passphrase.as_bytes())
        == hfm_core::auth::hmac_sha256(b"passphrase", expected.as_bytes());
    if !same {
        return Err(ApiError(StatusCode::UNAUTHORIZED, "bad credentials".into()));
    }
    let claims = TokenClaims::new(req.subject, Scope::ALL, state.services.clock.now().timestamp(), state.token_ttl_seconds);
    let token = issue_token(&claims, &state.services.key).map_err(|e| bad_request(e.to_string()))?;
    Ok(Json(TokenResponse { token, expires_at: claims.expires_at }))
}

#[derive(Deserialize)]
struct DateQuery {
    date: Option<String>,
}

async fn session_entries(
    State(state): State<AppState>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<DateQuery>,
) -> Result<Json<Vec<LogEntry>>, ApiError> {
    require(&state, &headers, Scope::LogsRead)?;
    let date = match q.date {
        Some(d) => NaiveDate::parse_from_str(&d, "%Y-%m-%d").map_err(|_| bad_request(format!("invalid date {d:?}")))?,
        None => state.services.clock.now().date_naive(),
    };
    let store = state.services.store.clone();
    let read = tokio::task::spawn_blocking(move || {
        if !hfm_core::store::is_safe_session_id(&id) {
            return Err(StoreError::InvalidSessionId(id));
        }
        Ok(store.read_session_entries(&id, date))
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    if let Some(e) = read.errors.first() {
        warn!(error = %e, "unreadable entry");
        return Err(ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()));
    }
    Ok(Json(read.entries))
}

#[derive(Deserialize)]
struct EntryQuery {
    asset: Option<String>,
    from: Option<String>,
    to: Option<String>,
}

fn parse_instant(field: &str, value: Option<String>) -> Result<Option<chrono::DateTime<Utc>>, ApiError> {
    value
        .filter(|v| !v.is_empty())
        .map(|v| parse_rfc3339(&v).ok_or_else(|| bad_request(format!("{field} is not RFC 3339: {v:?}"))))
        .transpose()
}

async fn query_entries(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<EntryQuery>,
) -> Result<Json<Vec<LogEntry>>, ApiError> {
    require(&state, &headers, Scope::LogsRead)?;
    let filter = EntryFilter {
        asset_id: q.asset.filter(|a| !a.is_empty()),
        from: parse_instant("from", q.from)?,
        to: parse_instant("to", q.to)?,
    };
    let store = state.services.store.clone();
    let entries = tokio::task::spawn_blocking(move || store.query_entries(&filter))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(entries))
}

async fn register_asset(
    State(state): State<AppState>,
    headers: HeaderMap,
    Json(asset): Json<Asset>,
) -> Result<(StatusCode, Json<Asset>), ApiError> {
    require(&state, &headers, Scope::AssetsWrite)?;
    let registry = state.services.registry.clone();
    let stored = asset.clone();
    tokio::task::spawn_blocking(move || registry.register_asset(stored))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((StatusCode::CREATED, Json(asset)))
}

#[derive(Deserialize)]
struct HistoryQuery {
    #[serde(default)]
    history: bool,
}

async fn get_asset(
    State(state): State<AppState>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<HistoryQuery>,
) -> Result<Json<serde_json::Value>, ApiError> {
    require(&state, &headers, Scope::AssetsRead)?;
    if !q.history {
        let asset = state.services.registry.get(&id).ok_or(AssetError::AssetNotFound(id))?;
        return Ok(Json(serde_json::to_value(asset).expect("assets serialize")));
    }
    require(&state, &headers, Scope::LogsRead)?;
    let services = state.services.clone();
    let (asset, history) = tokio::task::spawn_blocking(move || get_asset_with_history(&services.registry, &services.store, &id))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(json!({ "asset": asset, "history": history })))
}

async fn stream(State(state): State<AppState>, ws: WebSocketUpgrade) -> Response {
    let Ok(permit) = state.sessions.clone().try_acquire_owned() else {
        return ApiError(StatusCode::SERVICE_UNAVAILABLE, "too many sessions".into()).into_response();
    };
    ws.on_upgrade(move |socket| async move {
        run_session(socket, state).await;
        drop(permit);
    })
}

async fn run_session(mut socket: WebSocket, state: AppState) {
    let mut driver = Some(SessionDriver::new(state.services.clone()));
    loop {
        let frame = match tokio::time::timeout(state.heartbeat_timeout, socket.recv()).await {
            Err(_) => {
                let outcome = driver.as_mut().expect("driver present").on_timeout();
                send_all(&mut socket, outcome.frames).await;
                break;
            }
            Ok(None) | Ok(Some(Err(_))) => break,
            Ok(Some(Ok(msg))) => msg,
        };
        let text = match frame {
            Message::Text(t) => t.as_str().to_owned(),
            // Frames must be UTF-8 text; anything else fails to parse.
            Message::Binary(_) => String::new(),
            Message::Close(_) => break,
            Message::Ping(_) | Message::Pong(_) => continue,
        };
        let mut d = driver.take().expect("driver present");
        let joined = tokio::task::spawn_blocking(move || {
            let outcome = d.handle_frame(&text);
            (d, outcome)
        })
        .await;
        let Ok((d, outcome)) = joined else {
            warn!("session task panicked");
            return;
        };
        driver = Some(d);
        send_all(&mut socket, outcome.frames).await;
        if outcome.close {
            break;
        }
    }
    if let Some(mut d) = driver {
        d.abandon();
        if let Some(sid) = d.session_id() {
            info!(session_id = sid, "session ended");
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}

async fn send_all(socket: &mut WebSocket, frames: Vec<String>) {
    for frame in frames {
        if socket.send(Message::text(frame)).await.is_err() {
            return;
        }
    }
}
