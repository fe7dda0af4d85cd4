use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    render_overlay_jpeg, ChatPart, ChatProvider, ChatRequest, Embedding, ImageEmbedder, ImagePart,
    ProviderError, TextEmbedder,
};

/// Connection settings for an OpenAI-compatible endpoint. The credential
/// itself is never stored: only the name of the environment variable that
/// holds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpEndpoint {
    /// Base URL, e.g. `https://host/v1`.
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_timeout() -> u64 {
    30_000
}

impl HttpEndpoint {
    fn agent(&self) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(self.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into()
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.endpoint.trim_end_matches('/'), path)
    }

    fn api_key(&self) -> Result<Option<String>, ProviderError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var).map(Some).map_err(|_| {
                ProviderError::ProviderUnavailable(format!("credential variable {var} is not set"))
            }),
        }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let mut req = self.agent().post(&self.url(path));
        if let Some(key) = self.api_key()? {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(map_transport)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(map_transport)?;
        if status == 429 {
            return Err(ProviderError::RateLimited(snippet(&text)));
        }
        if status >= 500 {
            return Err(ProviderError::ProviderUnavailable(format!("HTTP {status}: {}", snippet(&text))));
        }
        if status >= 400 {
            let lower = text.to_lowercase();
            if lower.contains("content_policy") || lower.contains("content policy") || lower.contains("safety") {
                return Err(ProviderError::SafetyBlocked(snippet(&text)));
            }
            return Err(ProviderError::InvalidRequest(format!("HTTP {status}: {}", snippet(&text))));
        }
        serde_json::from_str(&text)
            .map_err(|e| ProviderError::ProviderUnavailable(format!("malformed response body: {e}")))
    }
}

fn snippet(text: &str) -> String {
    text.chars().take(200).collect()
}

fn map_transport(e: ureq::Error) -> ProviderError {
    match e {
        ureq::Error::Timeout(t) => ProviderError::ProviderUnavailable(format!("timeout ({t})")),
        other => ProviderError::ProviderUnavailable(other.to_string()),
    }
}

fn data_url(part: &ImagePart, radius_frac: f64) -> Result<String, ProviderError> {
    let jpeg = render_overlay_jpeg(part, radius_frac)?;
    Ok(format!(
        "data:image/jpeg;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(jpeg)
    ))
}

/// Chat completions over HTTP. Images are rendered with their gaze overlay
/// and inlined as JPEG data URLs.
#[derive(Debug, Clone)]
pub struct HttpChatProvider {
    pub endpoint: HttpEndpoint,
    pub overlay_radius_frac: f64,
}

impl HttpChatProvider {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        Self {
            endpoint,
            overlay_radius_frac: 0.02,
        }
    }
}

impl ChatProvider for HttpChatProvider {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        req.validate()?;
        let mut content = Vec::with_capacity(req.parts.len());
        for part in &req.parts {
            content.push(match part {
                ChatPart::Text { text } => json!({"type": "text", "text": text}),
                ChatPart::Image(img) => json!({
                    "type": "image_url",
                    "image_url": {"url": data_url(img, self.overlay_radius_frac)?}
                }),
            });
        }
        let body = json!({
            "model": self.endpoint.model,
            "messages": [{"role": "user", "content": content}],
        });
        let v = self.endpoint.post("chat/completions", &body)?;
        let choice = &v["choices"][0];
        if choice["finish_reason"] == "content_filter" {
            return Err(ProviderError::SafetyBlocked("response withheld by content filter".into()));
        }
        choice["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::ProviderUnavailable("response has no message content".into()))
    }
}

/// Embeddings over HTTP; the result is re-normalized to unit length.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    pub endpoint: HttpEndpoint,
}

impl HttpEmbedder {
    fn embed(&self, input: Value) -> Result<Embedding, ProviderError> {
        let body = json!({"model": self.endpoint.model, "input": input});
        let v = self.endpoint.post("embeddings", &body)?;
        let values: Vec<f64> = v["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| ProviderError::ProviderUnavailable("response has no embedding".into()))?
            .iter()
            .map(|x| x.as_f64().unwrap_or(f64::NAN))
            .collect();
        if values.iter().any(|x| !x.is_finite()) {
            return Err(ProviderError::ProviderUnavailable("embedding has non-numeric values".into()));
        }
        Embedding::normalized(values)
    }
}

impl TextEmbedder for HttpEmbedder {
    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        self.embed(json!(text))
    }
}

impl ImageEmbedder for HttpEmbedder {
    fn embed_image(&self, image: &ImagePart) -> Result<Embedding, ProviderError> {
        let plain = ImagePart {
            render_overlay: false,
            ..image.clone()
        };
        self.embed(json!([{"type": "image_url", "image_url": {"url": data_url(&plain, 0.0)?}}]))
    }
}
