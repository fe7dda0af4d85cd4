//! The `replay` command: runs a recorded session through the engine and
//! writes the delivery log, metrics and optional event trace.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use sidelight_core::config::EngineConfig;
use sidelight_core::orchestrator::{versioned_line, write_jsonl, Engine, EngineEvent, SessionMetrics};
use sidelight_core::session::{event_stream, load_profile, load_session, profile_id};
use sidelight_core::{PipelineVariant, Providers};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pace {
    /// Sleep so events play back at recorded speed.
    Realtime,
    /// Process events as fast as possible.
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ProviderMode {
    /// Offline mocks; chat replies come from a script or the synthetic generator.
    Mock,
    /// Backends as configured (HTTP where the config says so).
    Live,
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("session: {0}")]
    Session(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

impl ReplayError {
    pub fn exit_code(&self) -> u8 {
        match self {
            ReplayError::Session(_) => 2,
            ReplayError::Config(_) => 3,
            ReplayError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayArgs {
    pub session: PathBuf,
    pub profile: PathBuf,
    pub config: Option<PathBuf>,
    pub variant: Option<String>,
    pub providers: ProviderMode,
    pub out: PathBuf,
    pub metrics: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub pace: Pace,
    pub mock_script: Option<PathBuf>,
}

/// Loads and validates the config, applying a variant override.
pub fn load_config(path: Option<&Path>, variant: Option<&str>) -> Result<EngineConfig, ReplayError> {
    let mut config = match path {
        Some(p) => EngineConfig::load(p).map_err(|e| ReplayError::Config(e.to_string()))?,
        None => EngineConfig::default(),
    };
    if let Some(name) = variant {
        config.variant = name.parse::<PipelineVariant>().map_err(ReplayError::Config)?;
    }
    config.validate().map_err(|e| ReplayError::Config(e.to_string()))?;
    Ok(config)
}

/// The script a mock chat backend falls back to: an explicit path, else
/// `mock_chat.json` inside the session directory when present.
pub fn default_script(session_dir: &Path, explicit: Option<&Path>) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| Some(session_dir.join("mock_chat.json")).filter(|p| p.is_file()))
}

pub fn build_providers(
    config: &EngineConfig,
    mode: ProviderMode,
    script: Option<&Path>,
) -> Result<Providers, ReplayError> {
    config
        .build_providers(mode == ProviderMode::Mock, script)
        .map_err(|e| ReplayError::Config(e.to_string()))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ReplayError + '_ {
    move |e| ReplayError::Io(format!("{}: {e}", path.display()))
}

pub fn run(args: &ReplayArgs) -> Result<SessionMetrics, ReplayError> {
    let config = load_config(args.config.as_deref(), args.variant.as_deref())?;
    let rec = load_session(&args.session).map_err(|e| ReplayError::Session(e.to_string()))?;
    let profile = load_profile(&args.profile).map_err(|e| ReplayError::Config(format!("profile: {e}")))?;
    let script = default_script(&args.session, args.mock_script.as_deref());
    let providers = build_providers(&config, args.providers, script.as_deref())?;
    let history = config
        .open_history(&profile_id(&args.profile), &rec.session_id)
        .map_err(|e| ReplayError::Config(format!("history: {e}")))?;
    tracing::info!(session = %rec.session_id, variant = %config.variant, "replay started");

    let rec = Arc::new(rec);
    let events = event_stream(&rec);
    let mut engine = Engine::new(rec.clone(), profile, config, providers, Arc::new(Mutex::new(history)));

    let mut log = BufWriter::new(File::create(&args.out).map_err(io_err(&args.out))?);
    let mut trace = match &args.trace {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(io_err(p))?)),
        None => None,
    };
    let mut emit = |events: Vec<EngineEvent>| -> Result<(), ReplayError> {
        for ev in events {
            if let Some(t) = trace.as_mut() {
                writeln!(t, "{}", versioned_line(&ev)).map_err(|e| ReplayError::Io(e.to_string()))?;
            }
            if let EngineEvent::Delivery(rec) = &ev {
                // written as it happens so an aborted run leaves a partial log
                writeln!(log, "{}", versioned_line(rec)).map_err(|e| ReplayError::Io(e.to_string()))?;
                log.flush().map_err(|e| ReplayError::Io(e.to_string()))?;
            }
        }
        Ok(())
    };

    let wall0 = Instant::now();
    let t0 = rec.start_ms();
    for ev in &events {
        if args.pace == Pace::Realtime {
            let due = Duration::from_millis(ev.t_ms(&rec) - t0);
            if let Some(wait) = due.checked_sub(wall0.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        engine.step(ev);
        emit(engine.drain_events())?;
    }
    engine.finish();
    emit(engine.drain_events())?;
    if let Some(mut t) = trace {
        t.flush().map_err(|e| ReplayError::Io(e.to_string()))?;
    }
    drop(log);

    // rewrite with final cancel flags
    write_jsonl(&args.out, engine.deliveries()).map_err(io_err(&args.out))?;
    let metrics = engine.metrics();
    if let Some(p) = &args.metrics {
        std::fs::write(p, versioned_line(&metrics) + "\n").map_err(io_err(p))?;
    }
    tracing::info!(deliveries = engine.deliveries().len(), "replay finished");
    Ok(metrics)
}
