//! Engine configuration, read from TOML. Every field has a default, so an
//! empty file is a valid configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{PipelineVariant, SelectionConfig};
use crate::attention::{
    FixationParams, DEFAULT_DISPERSION_DEG, DEFAULT_MIN_CONFIDENCE, DEFAULT_MIN_DURATION_MS,
    DEFAULT_OVERLAY_MAX_POINTS, DEFAULT_SYNC_TOLERANCE_MS,
};
use crate::history::{HistoryError, HistoryStore};
use crate::providers::{
    ChatProvider, HashEmbedder, HttpChatProvider, HttpEmbedder, HttpEndpoint, ImageEmbedder,
    Providers, ScriptedChatProvider, SyntheticChatProvider, TextEmbedder, ThumbnailEmbedder,
    TieredChat,
};
use crate::trigger::TriggerParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub interval_ms: u64,
    pub window_size: usize,
    pub sim_threshold: f64,
    pub frac: f64,
    pub fixation_dispersion_deg: f64,
    pub fixation_min_duration_ms: u64,
    pub dedup_threshold: f64,
    pub history_k: usize,
    pub max_items: usize,
    pub min_total: i32,
    pub min_confidence: f64,
    pub sample_hz: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            interval_ms: 12_000,
            window_size: 16,
            sim_threshold: 0.6,
            frac: 0.8,
            fixation_dispersion_deg: DEFAULT_DISPERSION_DEG,
            fixation_min_duration_ms: DEFAULT_MIN_DURATION_MS,
            dedup_threshold: 0.75,
            history_k: 10,
            max_items: 2,
            min_total: 2,
            min_confidence: DEFAULT_MIN_CONFIDENCE,
            sample_hz: 3.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverlayConfig {
    pub sync_tolerance_ms: u64,
    pub max_points: usize,
    /// Ring radius as a fraction of frame width.
    pub radius_frac: f64,
}

impl Default for OverlayConfig {
    fn default() -> Self {
        Self {
            sync_tolerance_ms: DEFAULT_SYNC_TOLERANCE_MS,
            max_points: DEFAULT_OVERLAY_MAX_POINTS,
            radius_frac: 0.02,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Virtual time between a trigger and its delivery. Triggers arriving
    /// in between are dropped.
    pub job_latency_ms: u64,
    /// Clear the scene-change windows when the system is switched off.
    pub reset_window_on_toggle: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryScope {
    #[default]
    Profile,
    Session,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSpec {
    pub kind: ProviderKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the credential.
    pub api_key_env: Option<String>,
    pub timeout_ms: Option<u64>,
    /// Mock chat only: rule file for the scripted provider.
    pub script: Option<PathBuf>,
}

impl ProviderSpec {
    fn endpoint(&self, what: &str) -> Result<HttpEndpoint, ConfigError> {
        let need = |v: &Option<String>, field: &str| {
            v.clone()
                .filter(|s| !s.trim().is_empty())
                .ok_or_else(|| ConfigError::Invalid(format!("providers.{what}: http kind needs `{field}`")))
        };
        Ok(HttpEndpoint {
            endpoint: need(&self.endpoint, "endpoint")?,
            model: need(&self.model, "model")?,
            api_key_env: self.api_key_env.clone(),
            timeout_ms: self.timeout_ms.unwrap_or(30_000),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub fast: ProviderSpec,
    pub strong: ProviderSpec,
    pub text_embedding: ProviderSpec,
    pub image_embedding: ProviderSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub thresholds: Thresholds,
    pub variant: PipelineVariant,
    pub novelty_mandatory: bool,
    pub providers: ProvidersConfig,
    /// Directory for per-profile history files; in-memory when unset.
    pub history_dir: Option<PathBuf>,
    pub history_scope: HistoryScope,
    /// Overrides the profile's preferred language for output.
    pub language: Option<String>,
    pub overlay: OverlayConfig,
    pub run: RunConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            variant: PipelineVariant::Full,
            novelty_mandatory: true,
            providers: ProvidersConfig::default(),
            history_dir: None,
            history_scope: HistoryScope::Profile,
            language: None,
            overlay: OverlayConfig::default(),
            run: RunConfig::default(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")))
    }
}

impl EngineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: EngineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(v) = p {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        };
        fix(&mut cfg.history_dir);
        for spec in [
            &mut cfg.providers.fast,
            &mut cfg.providers.strong,
            &mut cfg.providers.text_embedding,
            &mut cfg.providers.image_embedding,
        ] {
            fix(&mut spec.script);
        }
        Ok(cfg)
    }

    /// Deep-merges a JSON object of overrides into this config.
    pub fn with_overrides(&self, overrides: &serde_json::Value) -> Result<Self, ConfigError> {
        fn merge(base: &mut serde_json::Value, over: &serde_json::Value) {
            match (base, over) {
                (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
                    for (k, v) in o {
                        merge(b.entry(k.clone()).or_insert(serde_json::Value::Null), v);
                    }
                }
                (b, o) => *b = o.clone(),
            }
        }
        let mut v = serde_json::to_value(self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        merge(&mut v, overrides);
        let cfg: EngineConfig = serde_json::from_value(v).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.thresholds;
        positive("interval_ms", t.interval_ms as f64)?;
        positive("window_size", t.window_size as f64)?;
        positive("sim_threshold", t.sim_threshold)?;
        positive("fixation_dispersion_deg", t.fixation_dispersion_deg)?;
        positive("fixation_min_duration_ms", t.fixation_min_duration_ms as f64)?;
        positive("dedup_threshold", t.dedup_threshold)?;
        positive("history_k", t.history_k as f64)?;
        positive("max_items", t.max_items as f64)?;
        positive("min_total", t.min_total as f64)?;
        positive("min_confidence", t.min_confidence)?;
        positive("sample_hz", t.sample_hz)?;
        if !(t.frac > 0.0 && t.frac <= 1.0) {
            return Err(ConfigError::Invalid(format!("frac must be in (0, 1], got {}", t.frac)));
        }
        if t.sim_threshold > 1.0 || t.dedup_threshold > 1.0 || t.min_confidence > 1.0 {
            return Err(ConfigError::Invalid("similarity and confidence thresholds must be at most 1".into()));
        }
        if t.min_total > 4 {
            return Err(ConfigError::Invalid("min_total above 4 can never be met".into()));
        }
        positive("overlay.max_points", self.overlay.max_points as f64)?;
        positive("overlay.radius_frac", self.overlay.radius_frac)?;
        if let Some(lang) = &self.language {
            if !crate::session::is_language_tag(lang) {
                return Err(ConfigError::Invalid(format!("invalid language tag {lang:?}")));
            }
        }
        let p = &self.providers;
        for (name, spec) in [
            ("fast", &p.fast),
            ("strong", &p.strong),
            ("text_embedding", &p.text_embedding),
            ("image_embedding", &p.image_embedding),
        ] {
            if spec.kind == ProviderKind::Http {
                spec.endpoint(name)?;
            }
        }
        Ok(())
    }

    pub fn trigger_params(&self) -> TriggerParams {
        TriggerParams {
            interval_ms: self.thresholds.interval_ms,
            window_size: self.thresholds.window_size,
            sim_threshold: self.thresholds.sim_threshold,
            frac: self.thresholds.frac,
        }
    }

    pub fn fixation_params(&self) -> FixationParams {
        FixationParams {
            max_dispersion_deg: self.thresholds.fixation_dispersion_deg,
            min_duration_ms: self.thresholds.fixation_min_duration_ms,
            min_confidence: self.thresholds.min_confidence,
        }
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            min_total: self.thresholds.min_total,
            novelty_mandatory: self.novelty_mandatory,
            dedup_threshold: self.thresholds.dedup_threshold,
            max_items: self.thresholds.max_items,
        }
    }

    /// Opens the history store this config asks for.
    pub fn open_history(&self, profile_id: &str, session_id: &str) -> Result<HistoryStore, HistoryError> {
        let mut store = match &self.history_dir {
            Some(dir) => HistoryStore::open(HistoryStore::profile_path(dir, profile_id))?,
            None => HistoryStore::in_memory(),
        };
        if self.history_scope == HistoryScope::Session {
            store.set_session_filter(Some(session_id.to_string()));
        }
        Ok(store)
    }

    /// Builds the provider set. With `force_mock`, every backend is a mock
    /// regardless of its configured kind. `default_script` is used for mock
    /// chat tiers that name no script; without one they are synthetic.
    pub fn build_providers(&self, force_mock: bool, default_script: Option<&Path>) -> Result<Providers, ConfigError> {
        let p = &self.providers;
        let chat = |name: &str, spec: &ProviderSpec| -> Result<Arc<dyn ChatProvider>, ConfigError> {
            if spec.kind == ProviderKind::Http && !force_mock {
                let mut http = HttpChatProvider::new(spec.endpoint(name)?);
                http.overlay_radius_frac = self.overlay.radius_frac;
                return Ok(Arc::new(http));
            }
            match spec.script.as_deref().or(default_script) {
                Some(path) => ScriptedChatProvider::load(path)
                    .map(|s| Arc::new(s) as Arc<dyn ChatProvider>)
                    .map_err(|e| ConfigError::Invalid(format!("providers.{name}: {e}"))),
                None => Ok(Arc::new(SyntheticChatProvider)),
            }
        };
        let tiered = TieredChat {
            fast: Some(chat("fast", &p.fast)?),
            strong: Some(chat("strong", &p.strong)?),
        };
        let text: Arc<dyn TextEmbedder> = if p.text_embedding.kind == ProviderKind::Http && !force_mock {
            Arc::new(HttpEmbedder {
                endpoint: p.text_embedding.endpoint("text_embedding")?,
            })
        } else {
            Arc::new(HashEmbedder)
        };
        let image: Arc<dyn ImageEmbedder> = if p.image_embedding.kind == ProviderKind::Http && !force_mock {
            Arc::new(HttpEmbedder {
                endpoint: p.image_embedding.endpoint("image_embedding")?,
            })
        } else {
            Arc::new(ThumbnailEmbedder)
        };
        Ok(Providers {
            chat: Arc::new(tiered),
            text,
            image,
        })
    }
}
