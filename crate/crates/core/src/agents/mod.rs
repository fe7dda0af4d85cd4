//! The pipeline agents: scene analysis, knowledge generation with
//! prioritization, and the two output agents.
//!
//! Each agent is a prompt builder plus a strict parser for a fenced,
//! schema-tagged JSON reply. Model output that fails to parse gets one
//! reformat retry before surfacing as [`AgentError::Parse`].

mod parse;
mod prompt;
mod select;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::HistoryEntry;
use crate::providers::{ChatProvider, ChatRequest, ImagePart, ProviderError, RetryOnce};
use crate::session::UserProfile;
use crate::trigger::TriggerEvent;

pub use parse::{extract_block, parse_candidates, parse_context, parse_locate, parse_transform};
pub use prompt::{
    context_request, knowledge_request, locate_request, render_template, transform_request,
    PROFILE_HEADING, RULES_HEADING,
};
pub use select::{score_filter_select, DropReason, Selected, Selection, SelectionConfig, Verdict};

pub const CONTEXT_FORMAT: &str = "context.v1";
pub const KNOWLEDGE_FORMAT: &str = "knowledge.v1";
pub const TRANSFORM_FORMAT: &str = "transform.v1";
pub const LOCATE_FORMAT: &str = "locate.v1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("unparseable model reply: {0}")]
    Parse(String),
    #[error("model found nothing worth delivering")]
    NoCandidates,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Which prompt family a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum PipelineVariant {
    /// Rules and profile both present.
    #[default]
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "bl-wo-r")]
    BaselineWithoutRules,
    #[serde(rename = "bl-wo-rp")]
    BaselineWithoutRulesAndProfile,
}

impl PipelineVariant {
    pub const ALL: [PipelineVariant; 3] = [
        PipelineVariant::Full,
        PipelineVariant::BaselineWithoutRules,
        PipelineVariant::BaselineWithoutRulesAndProfile,
    ];

    pub fn includes_rules(self) -> bool {
        matches!(self, PipelineVariant::Full)
    }

    pub fn includes_profile(self) -> bool {
        !matches!(self, PipelineVariant::BaselineWithoutRulesAndProfile)
    }

    pub fn name(self) -> &'static str {
        match self {
            PipelineVariant::Full => "full",
            PipelineVariant::BaselineWithoutRules => "bl-wo-r",
            PipelineVariant::BaselineWithoutRulesAndProfile => "bl-wo-rp",
        }
    }
}

impl fmt::Display for PipelineVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PipelineVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant {s:?} (expected full, bl-wo-r or bl-wo-rp)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GazeMode {
    Saccade,
    QuickBrowse,
    Focused,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Familiarity {
    pub entity: String,
    pub level: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextDescription {
    pub activity: String,
    pub gaze_mode: GazeMode,
    pub primary_entities: Vec<String>,
    pub peripheral_entities: Vec<String>,
    pub predicted_desires: Vec<String>,
    pub familiarity_notes: Vec<Familiarity>,
    pub raw_text: String,
}

impl ContextDescription {
    /// Compact text used as the history retrieval query and prompt input.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "Activity: {}\nGaze pattern: {}\nPrimary entities: {}\nPeripheral entities: {}\nLikely wants: {}",
            self.activity,
            serde_json::to_value(self.gaze_mode).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
            list_or_none(&self.primary_entities),
            list_or_none(&self.peripheral_entities),
            list_or_none(&self.predicted_desires),
        );
        if !self.familiarity_notes.is_empty() {
            let notes: Vec<String> = self
                .familiarity_notes
                .iter()
                .map(|f| format!("{} ({})", f.entity, f.level))
                .collect();
            s.push_str(&format!("\nFamiliarity: {}", notes.join("; ")));
        }
        s
    }
}

fn list_or_none(items: &[String]) -> String {
    if items.is_empty() {
        "none".to_string()
    } else {
        items.join(", ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeType {
    Factual,
    Conceptual,
    Procedural,
}

/// The four prioritization factors, each 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Factors {
    pub novelty: u8,
    pub interest_alignment: u8,
    pub usefulness: u8,
    pub unexpectedness: u8,
}

impl Factors {
    pub fn from_bits(bits: u8) -> Self {
        Self {
            novelty: bits & 1,
            interest_alignment: (bits >> 1) & 1,
            usefulness: (bits >> 2) & 1,
            unexpectedness: (bits >> 3) & 1,
        }
    }

    pub fn total(&self) -> i32 {
        (self.novelty + self.interest_alignment + self.usefulness + self.unexpectedness) as i32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeCandidate {
    pub content: String,
    pub knowledge_type: KnowledgeType,
    pub entities: Vec<String>,
    /// Absent for variants that do not ask the model to score.
    pub factors: Option<Factors>,
    pub factor_reasoning: String,
    /// Sum of factors, or -1 when unscored.
    pub total: i32,
}

impl KnowledgeCandidate {
    pub fn new(content: impl Into<String>, factors: Option<Factors>) -> Self {
        Self {
            content: content.into(),
            knowledge_type: KnowledgeType::Factual,
            entities: Vec::new(),
            factors,
            factor_reasoning: String::new(),
            total: factors.map_or(-1, |f| f.total()),
        }
    }

    pub fn with_entities(mut self, entities: &[&str]) -> Self {
        self.entities = entities.iter().map(|s| s.to_string()).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordEmoji {
    pub keyword: String,
    pub emoji: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformedItem {
    pub keyword_emoji_pairs: Vec<KeywordEmoji>,
    pub voiceover_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformedOutput {
    pub items: Vec<TransformedItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub entity_label: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    /// Forces the box inside the unit square. Returns the box and whether
    /// anything changed.
    pub fn clamped(&self) -> (BoundingBox, bool) {
        let c = |v: f64| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        let x = c(self.x);
        let y = c(self.y);
        let w = c(self.w).min(1.0 - x);
        let h = c(self.h).min(1.0 - y);
        let out = BoundingBox {
            entity_label: self.entity_label.clone(),
            x,
            y,
            w,
            h,
        };
        let changed = out.x != self.x || out.y != self.y || out.w != self.w || out.h != self.h;
        (out, changed)
    }

    pub fn in_bounds(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        unit(self.x) && unit(self.y) && unit(self.w) && unit(self.h) && self.x + self.w <= 1.0 && self.y + self.h <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReference {
    pub chosen_frame_t_ms: u64,
    pub image_ref: String,
    pub boxes: Vec<BoundingBox>,
    /// True when at least one box was clamped into range.
    pub clamped: bool,
}

/// Everything about the moment that the prompts need.
#[derive(Debug, Clone, Copy)]
pub struct AgentInputs<'a> {
    pub variant: PipelineVariant,
    pub profile: &'a UserProfile,
    pub wallclock: &'a str,
    pub location: &'a str,
    pub trigger: &'a TriggerEvent,
}

fn reformat_note(format: &str, reason: &str) -> String {
    format!(
        "Your previous reply could not be read ({reason}). Answer again with only one fenced block tagged `json {format}` that follows the reply format exactly."
    )
}

/// Sends `req`, parses the reply, and on a parse failure asks once more
/// with a reformat instruction appended.
fn call_structured<T>(
    chat: &dyn ChatProvider,
    req: ChatRequest,
    parse: impl Fn(&str) -> Result<T, AgentError>,
) -> Result<T, AgentError> {
    let raw = RetryOnce(chat).chat(&req)?;
    match parse(&raw) {
        Err(AgentError::Parse(reason)) => {
            tracing::debug!(format = %req.expected_format, %reason, "reply unparseable, asking again");
            let note = reformat_note(&req.expected_format, &reason);
            let retry = req.text(note);
            let raw = RetryOnce(chat).chat(&retry)?;
            parse(&raw)
        }
        other => other,
    }
}

pub fn analyze_context(
    chat: &dyn ChatProvider,
    inputs: &AgentInputs<'_>,
    frames: &[ImagePart],
) -> Result<ContextDescription, AgentError> {
    if frames.is_empty() {
        return Err(AgentError::Provider(ProviderError::InvalidRequest(
            "scene analysis needs at least one frame".into(),
        )));
    }
    call_structured(chat, context_request(inputs, frames), parse_context)
}

pub fn generate_candidates(
    chat: &dyn ChatProvider,
    inputs: &AgentInputs<'_>,
    ctx: &ContextDescription,
    best_frame: &ImagePart,
    history: &[&HistoryEntry],
) -> Result<Vec<KnowledgeCandidate>, AgentError> {
    let variant = inputs.variant;
    call_structured(chat, knowledge_request(inputs, ctx, best_frame, history), |raw| {
        parse_candidates(raw, variant)
    })
}

pub fn transform_text(
    chat: &dyn ChatProvider,
    selected: &[KnowledgeCandidate],
    language: &str,
) -> Result<TransformedOutput, AgentError> {
    let n = selected.len();
    call_structured(chat, transform_request(selected, language), |raw| parse_transform(raw, n))
}

pub fn locate_entities(
    chat: &dyn ChatProvider,
    selected: &[KnowledgeCandidate],
    evidence: &[ImagePart],
) -> Result<ImageReference, AgentError> {
    call_structured(chat, locate_request(selected, evidence), |raw| parse_locate(raw, evidence))
}

/// Runs both output agents concurrently and joins them.
pub fn transform_and_locate(
    chat: &dyn ChatProvider,
    selected: &[KnowledgeCandidate],
    language: &str,
    evidence: &[ImagePart],
) -> (
    Result<TransformedOutput, AgentError>,
    Result<ImageReference, AgentError>,
) {
    std::thread::scope(|s| {
        let locate = s.spawn(|| locate_entities(chat, selected, evidence));
        let text = transform_text(chat, selected, language);
        let image = locate.join().unwrap_or_else(|_| {
            Err(AgentError::Parse("image reference agent panicked".into()))
        });
        (text, image)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{CountingChat, ScriptedChatProvider, Tier};
    use crate::trigger::TriggerKind;

    fn profile() -> UserProfile {
        crate::session::parse_profile(
            r#"{"Values/Interest": ["coffee lover"], "Age": "30", "Gender": "female",
                "Citizenship": "XX", "Residence": "XX", "Education": "MSc", "Occupation": "nurse"}"#,
        )
        .unwrap()
    }

    fn trigger() -> TriggerEvent {
        TriggerEvent {
            kind: TriggerKind::ConstantSensing,
            t_ms: 48_000,
            evidence_frames: vec![47_000, 48_000],
            query_text: None,
            fixation: None,
            changed_pairs: Some(14),
        }
    }

    fn frame(t: u64) -> ImagePart {
        ImagePart {
            frame_t_ms: t,
            image_ref: format!("frames/{t:06}.jpg"),
            path: format!("/nonexistent/{t}.jpg").into(),
            gaze_circles: vec![(0.5, 0.5)],
            render_overlay: true,
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in PipelineVariant::ALL {
            assert_eq!(v.name().parse::<PipelineVariant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
        }
        assert!("deluxe".parse::<PipelineVariant>().is_err());
    }

    #[test]
    fn clamp_example() {
        let b = BoundingBox {
            entity_label: "lily".into(),
            x: 0.9,
            y: 0.9,
            w: 0.3,
            h: 0.3,
        };
        let (c, changed) = b.clamped();
        assert!(changed);
        assert_eq!((c.x, c.y), (0.9, 0.9));
        assert!((c.w - 0.1).abs() < 1e-12 && (c.h - 0.1).abs() < 1e-12);
        assert!(c.in_bounds());
        let ok = BoundingBox { entity_label: "x".into(), x: 0.4, y: 0.3, w: 0.2, h: 0.3 };
        assert_eq!(ok.clamped(), (ok.clone(), false));
    }

    #[test]
    fn focused_context_from_script() {
        let chat = ScriptedChatProvider::default().rule(
            Some(CONTEXT_FORMAT),
            &[],
            "```json context.v1\n{\"activity\":\"walking\",\"gaze_mode\":\"focused\",\"primary_entities\":[\"spider lily\"],\"peripheral_entities\":[],\"predicted_desires\":[],\"familiarity\":[]}\n```",
        );
        let p = profile();
        let t = trigger();
        let inputs = AgentInputs {
            variant: PipelineVariant::Full,
            profile: &p,
            wallclock: "2024-05-01T10:00:48+08:00",
            location: "park",
            trigger: &t,
        };
        let ctx = analyze_context(&chat, &inputs, &[frame(48_000)]).unwrap();
        assert_eq!(ctx.gaze_mode, GazeMode::Focused);
        assert_eq!(ctx.primary_entities, ["spider lily"]);
    }

    #[test]
    fn missing_gaze_mode_retries_once_then_fails() {
        let chat = CountingChat::new(ScriptedChatProvider::default().rule(
            Some(CONTEXT_FORMAT),
            &[],
            "The wearer is walking past some flowers.",
        ));
        let p = profile();
        let t = trigger();
        let inputs = AgentInputs {
            variant: PipelineVariant::Full,
            profile: &p,
            wallclock: "w",
            location: "l",
            trigger: &t,
        };
        let err = analyze_context(&chat, &inputs, &[frame(0)]).unwrap_err();
        assert!(matches!(err, AgentError::Parse(_)));
        assert_eq!(chat.calls(), 2);
    }

    #[test]
    fn output_agents_run_and_join() {
        let chat = ScriptedChatProvider::default()
            .rule(
                Some(TRANSFORM_FORMAT),
                &[],
                "```json transform.v1\n{\"items\":[{\"keywords\":[{\"keyword\":\"toxic to pets\",\"emoji\":\"⚠️\"}],\"voiceover\":\"Keep cats away from it.\"}]}\n```",
            )
            .rule(
                Some(LOCATE_FORMAT),
                &[],
                "```json locate.v1\n{\"frame_t_ms\":48000,\"boxes\":[{\"entity\":\"spider lily\",\"x\":0.4,\"y\":0.3,\"w\":0.2,\"h\":0.3}]}\n```",
            );
        let sel = vec![KnowledgeCandidate::new("Spider lilies are toxic to cats.", None)];
        let (text, image) = transform_and_locate(&chat, &sel, "en", &[frame(47_000), frame(48_000)]);
        let text = text.unwrap();
        assert_eq!(text.items[0].keyword_emoji_pairs[0].keyword, "toxic to pets");
        assert_eq!(text.items[0].keyword_emoji_pairs[0].emoji, "⚠️");
        let image = image.unwrap();
        assert_eq!(image.chosen_frame_t_ms, 48_000);
        assert_eq!(image.boxes.len(), 1);
        assert!(!image.clamped);
    }

    #[test]
    fn request_tiers() {
        let p = profile();
        let t = trigger();
        let inputs = AgentInputs {
            variant: PipelineVariant::Full,
            profile: &p,
            wallclock: "w",
            location: "l",
            trigger: &t,
        };
        assert_eq!(context_request(&inputs, &[frame(0)]).tier, Tier::Fast);
        let sel = [KnowledgeCandidate::new("x", None)];
        assert_eq!(transform_request(&sel, "en").tier, Tier::Fast);
        assert_eq!(locate_request(&sel, &[frame(0)]).tier, Tier::Fast);
    }
}
