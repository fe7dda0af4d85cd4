//! Backend-neutral chat and embedding interfaces.
//!
//! Every backend implements one of three small traits. Deterministic mocks
//! live next to the HTTP implementations so replays can run fully offline.

mod embed;
mod http;
mod render;
mod scripted;
mod synthetic;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use embed::{HashEmbedder, ScriptedImageEmbedder, ThumbnailEmbedder, HASH_EMBED_DIM};
pub use http::{HttpChatProvider, HttpEmbedder, HttpEndpoint};
pub use render::{draw_gaze_circles, render_overlay_jpeg};
pub use scripted::{ScriptRule, ScriptedChatProvider};
pub use synthetic::SyntheticChatProvider;

/// Most images a single chat request may carry.
pub const MAX_IMAGES_PER_REQUEST: usize = 16;

const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("blocked by content safety filter: {0}")]
    SafetyBlocked(String),
    #[error("empty input")]
    EmptyInput,
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("vector is not unit-norm (norm {0})")]
    NonUnitEmbedding(f64),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl ProviderError {
    /// Errors worth one more attempt.
    pub fn is_transient(&self) -> bool {
        matches!(self, Self::ProviderUnavailable(_) | Self::RateLimited(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Fast,
    Strong,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePart {
    pub frame_t_ms: u64,
    /// Reference as recorded in the session (relative path).
    pub image_ref: String,
    /// Resolved file location.
    pub path: PathBuf,
    /// Normalized gaze points to draw as red circles when `render_overlay` is set.
    pub gaze_circles: Vec<(f64, f64)>,
    pub render_overlay: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChatPart {
    Text { text: String },
    Image(ImagePart),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub tier: Tier,
    pub parts: Vec<ChatPart>,
    /// Schema tag of the structured block the caller expects back.
    pub expected_format: String,
}

impl ChatRequest {
    pub fn new(tier: Tier, expected_format: impl Into<String>) -> Self {
        Self {
            tier,
            parts: Vec::new(),
            expected_format: expected_format.into(),
        }
    }

    pub fn text(mut self, text: impl Into<String>) -> Self {
        self.parts.push(ChatPart::Text { text: text.into() });
        self
    }

    pub fn image(mut self, image: ImagePart) -> Self {
        self.parts.push(ChatPart::Image(image));
        self
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.parts.is_empty() {
            return Err(ProviderError::InvalidRequest("request has no parts".into()));
        }
        let images = self.images().count();
        if images > MAX_IMAGES_PER_REQUEST {
            return Err(ProviderError::InvalidRequest(format!(
                "{images} images exceeds the limit of {MAX_IMAGES_PER_REQUEST}"
            )));
        }
        Ok(())
    }

    pub fn images(&self) -> impl Iterator<Item = &ImagePart> {
        self.parts.iter().filter_map(|p| match p {
            ChatPart::Image(i) => Some(i),
            _ => None,
        })
    }

    /// All text segments joined by newlines.
    pub fn joined_text(&self) -> String {
        let mut out = String::new();
        for p in &self.parts {
            if let ChatPart::Text { text } = p {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(text);
            }
        }
        out
    }

    /// Stable hex digest of everything a provider can observe, excluding
    /// resolved filesystem paths.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}|{}|", self.tier, self.expected_format));
        for p in &self.parts {
            match p {
                ChatPart::Text { text } => {
                    h.update(b"T");
                    h.update(text.as_bytes());
                }
                ChatPart::Image(img) => {
                    h.update(b"I");
                    h.update(img.image_ref.as_bytes());
                    h.update(format!("{}|{:?}|{}", img.frame_t_ms, img.gaze_circles, img.render_overlay));
                }
            }
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

pub trait ChatProvider: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError>;
}

impl<T: ChatProvider + ?Sized> ChatProvider for Arc<T> {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        (**self).chat(req)
    }
}

impl<T: ChatProvider + ?Sized> ChatProvider for &T {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        (**self).chat(req)
    }
}

pub trait TextEmbedder: Send + Sync {
    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError>;
}

pub trait ImageEmbedder: Send + Sync {
    fn embed_image(&self, image: &ImagePart) -> Result<Embedding, ProviderError>;
}

/// Unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Scales `values` to unit length. Fails on empty or all-zero input.
    pub fn normalized(values: Vec<f64>) -> Result<Self, ProviderError> {
        let norm = l2(&values);
        if values.is_empty() || norm == 0.0 || !norm.is_finite() {
            return Err(ProviderError::EmptyInput);
        }
        Ok(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    /// Wraps an already-normalized vector, checking its norm.
    pub fn from_unit(values: Vec<f64>) -> Result<Self, ProviderError> {
        let norm = l2(&values);
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(ProviderError::NonUnitEmbedding(norm));
        }
        Ok(Self(values))
    }

    /// The `i`-th standard basis vector of dimension `dim`.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[i % dim] = 1.0;
        Self(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = ProviderError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::from_unit(v)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity of two unit vectors, clamped to [-1, 1].
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, ProviderError> {
    if a.dim() != b.dim() {
        return Err(ProviderError::DimensionMismatch(a.dim(), b.dim()));
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// Routes requests to a per-tier backend.
#[derive(Clone, Default)]
pub struct TieredChat {
    pub fast: Option<Arc<dyn ChatProvider>>,
    pub strong: Option<Arc<dyn ChatProvider>>,
}

impl TieredChat {
    pub fn both(provider: Arc<dyn ChatProvider>) -> Self {
        Self {
            fast: Some(provider.clone()),
            strong: Some(provider),
        }
    }
}

impl ChatProvider for TieredChat {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        req.validate()?;
        let backend = match req.tier {
            Tier::Fast => self.fast.as_ref(),
            Tier::Strong => self.strong.as_ref(),
        };
        backend
            .ok_or_else(|| ProviderError::ProviderUnavailable(format!("no provider configured for {:?} tier", req.tier)))?
            .chat(req)
    }
}

/// Retries a transient failure exactly once.
pub struct RetryOnce<P>(pub P);

impl<P: ChatProvider> ChatProvider for RetryOnce<P> {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        match self.0.chat(req) {
            Err(e) if e.is_transient() => {
                tracing::warn!(error = %e, "provider call failed, retrying once");
                self.0.chat(req)
            }
            other => other,
        }
    }
}

/// Counts calls; handy for asserting retry behavior.
pub struct CountingChat<P> {
    inner: P,
    calls: AtomicUsize,
}

impl<P> CountingChat<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<P: ChatProvider> ChatProvider for CountingChat<P> {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.chat(req)
    }
}

/// A provider that always fails with the given error.
pub struct FailingChat(pub ProviderError);

impl ChatProvider for FailingChat {
    fn chat(&self, _req: &ChatRequest) -> Result<String, ProviderError> {
        Err(self.0.clone())
    }
}

/// The full set of backends an engine run needs.
#[derive(Clone)]
pub struct Providers {
    pub chat: Arc<dyn ChatProvider>,
    pub text: Arc<dyn TextEmbedder>,
    pub image: Arc<dyn ImageEmbedder>,
}

impl Providers {
    /// Offline providers: synthetic chat, hash text embeddings, thumbnail image embeddings.
    pub fn mock() -> Self {
        Self {
            chat: Arc::new(SyntheticChatProvider),
            text: Arc::new(HashEmbedder),
            image: Arc::new(ThumbnailEmbedder),
        }
    }

    pub fn with_chat(mut self, chat: Arc<dyn ChatProvider>) -> Self {
        self.chat = chat;
        self
    }

    pub fn with_image(mut self, image: Arc<dyn ImageEmbedder>) -> Self {
        self.image = image;
        self
    }
}
