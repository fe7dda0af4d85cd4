use crate::history::HistoryEntry;
use crate::providers::{ChatRequest, ImagePart, Tier};
use crate::trigger::{TriggerEvent, TriggerKind};

use super::{AgentInputs, ContextDescription, KnowledgeCandidate, PipelineVariant};
use super::{CONTEXT_FORMAT, KNOWLEDGE_FORMAT, LOCATE_FORMAT, TRANSFORM_FORMAT};

const CONTEXT: &str = include_str!("../../prompts/context_analysis.txt");
const CONTEXT_RULES: &str = include_str!("../../prompts/context_rules.txt");
const PROFILE: &str = include_str!("../../prompts/profile.txt");
const KNOWLEDGE_FULL: &str = include_str!("../../prompts/knowledge_generation.txt");
const KNOWLEDGE_WO_R: &str = include_str!("../../prompts/baseline_wo_r.txt");
const KNOWLEDGE_WO_RP: &str = include_str!("../../prompts/baseline_wo_rp.txt");
const TRANSFORM: &str = include_str!("../../prompts/output_text_audio.txt");
const LOCATE: &str = include_str!("../../prompts/output_image_reference.txt");

pub const RULES_HEADING: &str = "## Rules";
pub const PROFILE_HEADING: &str = "## Wearer profile";

/// Replaces every `{{name}}` slot and collapses the blank lines left by
/// empty sections. Unknown slots are left in place.
pub fn render_template(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in slots {
        out = out.replace(&format!("{{{{{name}}}}}"), value);
    }
    let mut tidy = String::with_capacity(out.len());
    let mut newlines = 0;
    for ch in out.chars() {
        if ch == '\n' {
            newlines += 1;
            if newlines > 2 {
                continue;
            }
        } else {
            newlines = 0;
        }
        tidy.push(ch);
    }
    tidy
}

fn seconds(t_ms: u64) -> String {
    format!("{}.{:03} s", t_ms / 1000, t_ms % 1000)
}

fn describe_trigger(t: &TriggerEvent) -> String {
    match t.kind {
        TriggerKind::ConstantSensing => "the view changed noticeably (automatic)".to_string(),
        TriggerKind::Fixation => match &t.fixation {
            Some(fx) => format!(
                "the wearer held their gaze near ({:.2}, {:.2}) for {} ms (automatic)",
                fx.centroid.0,
                fx.centroid.1,
                fx.duration_ms()
            ),
            None => "the wearer held their gaze on one spot (automatic)".to_string(),
        },
        TriggerKind::UserQuery => format!(
            "the wearer asked: \"{}\"",
            t.query_text.as_deref().unwrap_or_default()
        ),
    }
}

fn describe_frames(frames: &[ImagePart]) -> String {
    match (frames.first(), frames.last()) {
        (Some(a), Some(b)) => format!(
            "{} frame(s) from t={} to t={}",
            frames.len(),
            seconds(a.frame_t_ms),
            seconds(b.frame_t_ms)
        ),
        _ => "none".to_string(),
    }
}

fn profile_section(inputs: &AgentInputs<'_>) -> String {
    if !inputs.variant.includes_profile() {
        return String::new();
    }
    let p = inputs.profile;
    render_template(
        PROFILE,
        &[
            ("interests", &p.values_interests.join(", ")),
            ("age", &p.age),
            ("gender", &p.gender),
            ("citizenship", &p.citizenship),
            ("residence", &p.residence),
            ("education", &p.education),
            ("occupation", &p.occupation),
        ],
    )
}

pub fn context_request(inputs: &AgentInputs<'_>, frames: &[ImagePart]) -> ChatRequest {
    let rules = if inputs.variant.includes_rules() { CONTEXT_RULES } else { "" };
    let text = render_template(
        CONTEXT,
        &[
            ("wallclock", inputs.wallclock),
            ("location", inputs.location),
            ("trigger", &describe_trigger(inputs.trigger)),
            ("frames", &describe_frames(frames)),
            ("rules_section", rules),
            ("profile_section", &profile_section(inputs)),
        ],
    );
    frames
        .iter()
        .cloned()
        .fold(ChatRequest::new(Tier::Fast, CONTEXT_FORMAT).text(text), ChatRequest::image)
}

fn history_lines(history: &[&HistoryEntry]) -> String {
    if history.is_empty() {
        return "(nothing yet)".to_string();
    }
    history
        .iter()
        .map(|e| format!("- {}", e.content))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn knowledge_request(
    inputs: &AgentInputs<'_>,
    ctx: &ContextDescription,
    best_frame: &ImagePart,
    history: &[&HistoryEntry],
) -> ChatRequest {
    let template = match inputs.variant {
        PipelineVariant::Full => KNOWLEDGE_FULL,
        PipelineVariant::BaselineWithoutRules => KNOWLEDGE_WO_R,
        PipelineVariant::BaselineWithoutRulesAndProfile => KNOWLEDGE_WO_RP,
    };
    let text = render_template(
        template,
        &[
            ("context", &ctx.summary()),
            ("wallclock", inputs.wallclock),
            ("location", inputs.location),
            ("trigger", &describe_trigger(inputs.trigger)),
            ("history", &history_lines(history)),
            ("profile_section", &profile_section(inputs)),
        ],
    );
    ChatRequest::new(Tier::Strong, KNOWLEDGE_FORMAT)
        .text(text)
        .image(best_frame.clone())
}

fn item_lines(selected: &[KnowledgeCandidate]) -> String {
    selected
        .iter()
        .enumerate()
        .map(|(i, c)| format!("<item n=\"{}\">{}</item>", i + 1, c.content))
        .collect::<Vec<_>>()
        .join("\n")
}

fn language_instruction(language: &str) -> String {
    let primary = language.split('-').next().unwrap_or(language).to_ascii_lowercase();
    if primary == "en" {
        String::new()
    } else {
        format!(
            "Translate the keywords and the voiceover into the language with tag \"{language}\". Keep the emoji unchanged.\n"
        )
    }
}

pub fn transform_request(selected: &[KnowledgeCandidate], language: &str) -> ChatRequest {
    let text = render_template(
        TRANSFORM,
        &[
            ("language_instruction", &language_instruction(language)),
            ("items", &item_lines(selected)),
        ],
    );
    ChatRequest::new(Tier::Fast, TRANSFORM_FORMAT).text(text)
}

pub fn locate_request(selected: &[KnowledgeCandidate], evidence: &[ImagePart]) -> ChatRequest {
    let frames = evidence
        .iter()
        .enumerate()
        .map(|(i, f)| format!("{i}: t={}", seconds(f.frame_t_ms)))
        .collect::<Vec<_>>()
        .join("\n");
    let text = render_template(LOCATE, &[("frames", &frames), ("items", &item_lines(selected))]);
    evidence.iter().fold(ChatRequest::new(Tier::Fast, LOCATE_FORMAT).text(text), |req, f| {
        req.image(ImagePart {
            render_overlay: false,
            gaze_circles: Vec::new(),
            ..f.clone()
        })
    })
}
