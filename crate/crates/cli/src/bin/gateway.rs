use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand};
use hfm_core::store::{CrashPoint, FaultAction, FaultPlan, LogStore};
use hfm_gateway::{GatewayConfig, RunningGateway};

#[derive(Parser)]
#[command(name = "gateway", version, about = "Hands-free maintenance logging gateway")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the REST API and the session stream.
    Serve(ServeArgs),
    /// Write a new random signing key.
    Keygen {
        #[arg(long, env = "HFM_KEY_FILE")]
        key_file: PathBuf,
        /// Replace an existing key file.
        #[arg(long)]
        force: bool,
    },
    /// Recover the store and check that every index agrees with its entry files.
    Fsck {
        #[arg(long, env = "HFM_DATA_DIR")]
        data_dir: PathBuf,
    },
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long, env = "HFM_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    #[arg(long, env = "HFM_DATA_DIR", default_value = "./data")]
    data_dir: PathBuf,
    /// Created with a fresh key if missing.
    #[arg(long, env = "HFM_KEY_FILE", default_value = "./gateway.key")]
    key_file: PathBuf,
    /// Access token lifetime in seconds.
    #[arg(long, env = "HFM_TOKEN_TTL", default_value_t = hfm_core::auth::DEFAULT_TTL_SECONDS)]
    token_ttl: i64,
    #[arg(long, env = "HFM_MAX_SESSIONS", default_value_t = 64)]
    max_sessions: usize,
    /// Seconds of silence before a session is closed.
    #[arg(long, env = "HFM_HEARTBEAT_TIMEOUT", default_value_t = 30)]
    heartbeat_timeout: u64,
    /// Shared passphrase for development token issuance; issuance is off without it.
    #[arg(long, env = "HFM_DEV_PASSPHRASE", hide_env_values = true)]
    dev_passphrase: Option<String>,
    /// Abort the process at this commit-path point (testing only).
    #[arg(long, env = "HFM_CRASH_AT", hide = true)]
    crash_at: Option<CrashPoint>,
    /// Which append (1-based) triggers `--crash-at`.
    #[arg(long, env = "HFM_CRASH_AFTER", hide = true, default_value_t = 1)]
    crash_after: u64,
}

async fn serve(args: ServeArgs) -> anyhow::Result<()> {
    let mut config = GatewayConfig::new(args.listen, args.data_dir, args.key_file);
    config.token_ttl_seconds = args.token_ttl;
    config.max_sessions = args.max_sessions;
    config.heartbeat_timeout = Duration::from_secs(args.heartbeat_timeout);
    config.dev_passphrase = args.dev_passphrase;
    config.fault = args.crash_at.map(|point| FaultPlan { point, on_append: args.crash_after, action: FaultAction::Abort });
    let gateway = RunningGateway::start(&config).await?;
    // Scripts and tests read the bound address from this line.
    println!("listening on {}", gateway.addr);
    tokio::signal::ctrl_c().await.context("waiting for shutdown signal")?;
    tracing::info!("shutting down");
    gateway.shutdown().await?;
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let result = match Cli::parse().command {
        Command::Serve(args) => tokio::runtime::Runtime::new().context("starting runtime").and_then(|rt| rt.block_on(serve(args))),
        Command::Keygen { key_file, force } => keygen(&key_file, force),
        Command::Fsck { data_dir } => fsck(&data_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn keygen(path: &std::path::Path, force: bool) -> anyhow::Result<()> {
    if path.exists() && !force {
        anyhow::bail!("{} exists; pass --force to replace it", path.display());
    }
    if force {
        std::fs::remove_file(path).ok();
    }
    let key = hfm_gateway::server::load_or_create_key(path)?;
    println!("wrote key {} to {}", key.key_id(), path.display());
    Ok(())
}

fn fsck(data_dir: &std::path::Path) -> anyhow::Result<()> {
    let store = LogStore::open(data_dir)?;
    let report = store.fsck()?;
    println!("checked {} entries", report.entries_checked);
    for p in &report.problems {
        println!("problem: {p}");
    }
    if !report.is_clean() {
        anyhow::bail!("{} problems found", report.problems.len());
    }
    Ok(())
}
