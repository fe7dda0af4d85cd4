//! Engine for a wearable assistant that watches what its wearer looks at
//! and occasionally offers a short, personally relevant fact.
//!
//! Data flows `session` → `attention` / `trigger` → `agents` → `orchestrator`,
//! with `history` remembering what was already said and `providers`
//! abstracting the model backends.

pub mod agents;
pub mod attention;
pub mod config;
pub mod history;
pub mod orchestrator;
pub mod providers;
pub mod session;
pub mod synth;
pub mod trigger;

pub use agents::PipelineVariant;
pub use config::EngineConfig;
pub use history::{HistoryEntry, HistoryStore};
pub use orchestrator::{
    compute_metrics, run_replay, DeliveryRecord, Engine, EngineEvent, ReplayOutput, SessionMetrics,
};
pub use providers::Providers;
pub use session::{load_profile, load_session, Button, ButtonEvent, SessionRecording, UserProfile};
