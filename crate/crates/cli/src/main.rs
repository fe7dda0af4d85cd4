use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sidelight_cli::replay::{self, load_config, Pace, ProviderMode, ReplayArgs};
use sidelight_cli::server::{app, AppState, ServerConfig};
use sidelight_core::orchestrator::{compute_metrics, read_delivery_log};
use sidelight_core::session::load_session;

#[derive(Parser)]
#[command(name = "sidelight", version, about = "Replay wearable sessions through the proactive knowledge engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a recorded session and write its delivery log.
    Replay {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// full, bl-wo-r or bl-wo-rp
        #[arg(long)]
        variant: Option<String>,
        #[arg(long, value_enum, default_value_t = ProviderMode::Mock)]
        providers: ProviderMode,
        #[arg(long, default_value = "deliveries.jsonl")]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Also write every engine event as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Pace::Fast)]
        pace: Pace,
        /// Rule file for the scripted mock chat backend.
        #[arg(long)]
        mock_script: Option<PathBuf>,
    },
    /// Recompute metrics from an existing delivery log.
    Metrics {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        session: PathBuf,
    },
    /// Serve the HTTP + WebSocket API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8787")]
        addr: SocketAddr,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value = "profiles")]
        profiles: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ProviderMode::Mock)]
        providers: ProviderMode,
        /// Environment variable holding the bearer token clients must send.
        #[arg(long)]
        token_env: Option<String>,
        /// Session directories to register at startup.
        #[arg(long)]
        preload: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Replay { session, profile, config, variant, providers, out, metrics, trace, pace, mock_script } => {
            let args = ReplayArgs { session, profile, config, variant, providers, out, metrics, trace, pace, mock_script };
            match replay::run(&args) {
                Ok(m) => {
                    println!("{}", serde_json::to_string(&m).expect("metrics serialize"));
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("sidelight: {e}");
                    ExitCode::from(e.exit_code())
                }
            }
        }
        Command::Metrics { log, session } => {
            let rec = match load_session(&session) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("sidelight: session: {e}");
                    return ExitCode::from(2);
                }
            };
            match read_delivery_log(&log) {
                Ok(records) => {
                    let m = compute_metrics(&records, rec.duration_ms());
                    println!("{}", serde_json::to_string(&m).expect("metrics serialize"));
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("sidelight: log: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Serve { addr, data, profiles, config, providers, token_env, preload } => {
            let engine = match load_config(config.as_deref(), None) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("sidelight: {e}");
                    return ExitCode::from(e.exit_code());
                }
            };
            let token = match token_env.as_deref().map(std::env::var) {
                None => None,
                Some(Ok(t)) if !t.is_empty() => Some(t),
                Some(_) => {
                    eprintln!("sidelight: token variable {} is unset or empty", token_env.unwrap_or_default());
                    return ExitCode::from(3);
                }
            };
            let state = AppState::new(ServerConfig { data_dir: data, profiles_dir: profiles, engine, providers, token });
            for dir in preload {
                match state.register_session(dir.clone()) {
                    Ok(id) => tracing::info!(session_id = %id, "preloaded {}", dir.display()),
                    Err(e) => {
                        eprintln!("sidelight: session {}: {e}", dir.display());
                        return ExitCode::from(2);
                    }
                }
            }
            let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
            let result = rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                eprintln!("sidelight: listening on http://{}", listener.local_addr()?);
                axum::serve(listener, app(state))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
            });
            match result {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("sidelight: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
