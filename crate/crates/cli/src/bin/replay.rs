use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use hfm_cli::{run_parallel, scripts, ReplayError};
use hfm_core::replay::{load_script, Assertion, ReplayReport};

#[derive(Parser)]
#[command(name = "replay", version, about = "Replay scripted inspection sessions against a gateway")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Drive one or more sessions and verify the stored entries.
    Run {
        #[arg(long)]
        script: PathBuf,
        /// Gateway address, `host:port` or a URL.
        #[arg(long, env = "HFM_GATEWAY")]
        gateway: String,
        /// Number of concurrent sessions.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Threshold such as `p95_commit_ms<100`; repeatable.
        #[arg(long = "assert", value_name = "EXPR")]
        asserts: Vec<Assertion>,
        /// Write the report as JSON (an array when `--parallel` > 1).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a synthetic script.
    Generate {
        #[arg(long, default_value_t = 10)]
        utterances: usize,
        #[arg(long, default_value = "tech-01")]
        operator: String,
        #[arg(long, default_value = "field-demo")]
        passphrase: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn print_summary(i: usize, r: &ReplayReport) {
    let c = &r.counts;
    let fmt = |s: Option<hfm_core::replay::LatencySummary>| match s {
        Some(s) => format!("p50={:.1} p95={:.1} max={:.1}", s.p50, s.p95, s.max),
        None => "n/a".into(),
    };
    println!(
        "session {} ({}): utterances={} partials={} finals={} commits={} failures={} wall={:.0}ms",
        i + 1,
        r.session_id,
        c.utterances_sent,
        c.partials_received,
        c.finals_received,
        c.commits_received,
        c.failures,
        r.wall_time_ms
    );
    println!("  commit latency ms: {}", fmt(r.commit));
    println!("  first partial ms:  {}", fmt(r.first_partial));
    for a in &r.assertions {
        let actual = a.actual.map_or("n/a".to_string(), |v| format!("{v:.3}"));
        println!("  assert {}: {} (actual {actual})", a.expr, if a.passed { "pass" } else { "FAIL" });
    }
}

async fn run(
    script: PathBuf,
    gateway: String,
    parallel: usize,
    asserts: Vec<Assertion>,
    out: Option<PathBuf>,
) -> anyhow::Result<bool> {
    let script = load_script(&script)?;
    let results = run_parallel(&script, &gateway, parallel.max(1)).await;
    let mut reports = Vec::new();
    let mut ok = true;
    for (i, result) in results.into_iter().enumerate() {
        let mut report = match result {
            Ok(r) => r,
            Err(ReplayError::VerificationFailed { problems, report }) => {
                for p in &problems {
                    eprintln!("session {}: {p}", i + 1);
                }
                *report
            }
            Err(e) => {
                eprintln!("session {}: {e}", i + 1);
                ok = false;
                continue;
            }
        };
        report.apply_assertions(&asserts);
        ok &= report.passed;
        print_summary(i, &report);
        reports.push(report);
    }
    if let Some(path) = out {
        let json = if parallel <= 1 && reports.len() == 1 {
            serde_json::to_string_pretty(&reports[0])?
        } else {
            serde_json::to_string_pretty(&reports)?
        };
        std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(ok)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Generate { utterances, operator, passphrase, seed } => {
            let script = scripts::synthetic(&operator, &passphrase, utterances, seed);
            println!("{}", serde_json::to_string_pretty(&script).expect("scripts serialize"));
            ExitCode::SUCCESS
        }
        Command::Run { script, gateway, parallel, asserts, out } => {
            let rt = tokio::runtime::Runtime::new().expect("runtime starts");
            match rt.block_on(run(script, gateway, parallel, asserts, out)) {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => ExitCode::from(1),
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
