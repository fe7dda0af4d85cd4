use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChatProvider, ChatRequest, ProviderError};

/// One canned reply. A rule matches when the request's expected format
/// equals `format` (if given) and every `contains` needle occurs in the
/// request's text or image references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default)]
    pub format: Option<String>,
    #[serde(default)]
    pub contains: Vec<String>,
    pub response: String,
}

impl ScriptRule {
    fn matches(&self, req: &ChatRequest, haystack: &str) -> bool {
        self.format.as_ref().map_or(true, |f| *f == req.expected_format)
            && self.contains.iter().all(|needle| haystack.contains(needle.as_str()))
    }
}

#[derive(Debug, Deserialize)]
struct ScriptFile {
    rules: Vec<ScriptRule>,
}

/// Mock chat backend answering from an ordered rule list. The first
/// matching rule wins, so the reply is a pure function of the request.
#[derive(Debug, Clone, Default)]
pub struct ScriptedChatProvider {
    rules: Vec<ScriptRule>,
}

impl ScriptedChatProvider {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self { rules }
    }

    pub fn rule(
        mut self,
        format: Option<&str>,
        contains: &[&str],
        response: impl Into<String>,
    ) -> Self {
        self.rules.push(ScriptRule {
            format: format.map(str::to_string),
            contains: contains.iter().map(|s| s.to_string()).collect(),
            response: response.into(),
        });
        self
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let file: ScriptFile = serde_json::from_str(text)?;
        Ok(Self::new(file.rules))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::ProviderUnavailable(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
            .map_err(|e| ProviderError::ProviderUnavailable(format!("{}: {e}", path.display())))
    }

    pub fn rules(&self) -> &[ScriptRule] {
        &self.rules
    }
}

impl ChatProvider for ScriptedChatProvider {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        let mut haystack = req.joined_text();
        for img in req.images() {
            haystack.push('\n');
            haystack.push_str(&img.image_ref);
        }
        self.rules
            .iter()
            .find(|r| r.matches(req, &haystack))
            .map(|r| r.response.clone())
            .ok_or_else(|| {
                ProviderError::ProviderUnavailable(format!(
                    "no scripted response for {} request {}",
                    req.expected_format,
                    &req.fingerprint()[..12]
                ))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::Tier;

    #[test]
    fn first_match_wins() {
        let p = ScriptedChatProvider::default()
            .rule(Some("a"), &["lily"], "one")
            .rule(Some("a"), &[], "two")
            .rule(None, &["tree"], "three");
        let req = |fmt: &str, text: &str| ChatRequest::new(Tier::Fast, fmt).text(text);
        assert_eq!(p.chat(&req("a", "spider lily")).unwrap(), "one");
        assert_eq!(p.chat(&req("a", "palm")).unwrap(), "two");
        assert_eq!(p.chat(&req("b", "palm tree")).unwrap(), "three");
        assert!(matches!(p.chat(&req("b", "rock")), Err(ProviderError::ProviderUnavailable(_))));
    }

    #[test]
    fn parses_rule_file() {
        let p = ScriptedChatProvider::from_json(
            r#"{"rules":[{"format":"x","contains":["q"],"response":"r"}]}"#,
        )
        .unwrap();
        assert_eq!(p.rules().len(), 1);
        let req = ChatRequest::new(Tier::Strong, "x").text("q?");
        assert_eq!(p.chat(&req).unwrap(), "r");
        assert_eq!(p.chat(&req).unwrap(), "r");
    }
}
