use serde::Deserialize;
use serde_json::Value;

use crate::providers::ImagePart;

use super::{
    AgentError, BoundingBox, ContextDescription, Factors, Familiarity, GazeMode, ImageReference,
    KeywordEmoji, KnowledgeCandidate, KnowledgeType, PipelineVariant, TransformedItem,
    TransformedOutput,
};

fn parse_err(msg: impl Into<String>) -> AgentError {
    AgentError::Parse(msg.into())
}

/// Finds the JSON payload in a model reply. Prefers a fence tagged with
/// `tag`, then any ```json fence, then a reply that is itself a JSON object.
pub fn extract_block<'a>(raw: &'a str, tag: &str) -> Result<&'a str, String> {
    let fence_body = |opener: &str| -> Option<&'a str> {
        let start = raw.find(opener)?;
        let after = &raw[start + opener.len()..];
        // the opener must end its line
        let nl = after.find('\n')?;
        if !after[..nl].trim().is_empty() {
            return None;
        }
        let body = &after[nl + 1..];
        let end = body.find("```")?;
        Some(body[..end].trim())
    };
    if let Some(b) = fence_body(&format!("```json {tag}")) {
        return Ok(b);
    }
    if let Some(b) = fence_body("```json") {
        return Ok(b);
    }
    let t = raw.trim();
    if t.starts_with('{') && t.ends_with('}') {
        return Ok(t);
    }
    Err(format!("no `json {tag}` block found"))
}

fn is_nothing(raw: &str) -> bool {
    raw.lines().any(|l| l.trim().trim_matches('*').trim() == "NOTHING")
}

fn object(raw: &str, tag: &str) -> Result<serde_json::Map<String, Value>, AgentError> {
    let block = extract_block(raw, tag).map_err(parse_err)?;
    match serde_json::from_str::<Value>(block) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(parse_err("reply block is not a JSON object")),
        Err(e) => Err(parse_err(format!("invalid JSON: {e}"))),
    }
}

fn string_list(m: &serde_json::Map<String, Value>, key: &str) -> Result<Vec<String>, AgentError> {
    match m.get(key) {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str()
                    .map(|s| s.trim().to_string())
                    .ok_or_else(|| parse_err(format!("{key} must contain strings")))
            })
            .collect(),
        Some(Value::Null) | None => Err(parse_err(format!("missing field {key}"))),
        Some(_) => Err(parse_err(format!("{key} must be a list"))),
    }
}

fn required_str(m: &serde_json::Map<String, Value>, key: &str) -> Result<String, AgentError> {
    m.get(key)
        .and_then(Value::as_str)
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| parse_err(format!("missing or empty field {key}")))
}

pub fn parse_context(raw: &str) -> Result<ContextDescription, AgentError> {
    let m = object(raw, super::CONTEXT_FORMAT)?;
    let gaze_mode = match m.get("gaze_mode").and_then(Value::as_str).map(|s| s.trim().to_ascii_lowercase()) {
        Some(s) => match s.replace([' ', '-'], "_").as_str() {
            "saccade" => GazeMode::Saccade,
            "quick_browse" | "quickbrowse" => GazeMode::QuickBrowse,
            "focused" => GazeMode::Focused,
            other => return Err(parse_err(format!("unknown gaze_mode {other:?}"))),
        },
        None => return Err(parse_err("missing field gaze_mode")),
    };
    #[derive(Deserialize)]
    struct Fam {
        entity: String,
        level: String,
    }
    let familiarity_notes = match m.get("familiarity") {
        None | Some(Value::Null) => Vec::new(),
        Some(v) => serde_json::from_value::<Vec<Fam>>(v.clone())
            .map_err(|e| parse_err(format!("familiarity: {e}")))?
            .into_iter()
            .map(|f| Familiarity {
                entity: f.entity,
                level: f.level,
            })
            .collect(),
    };
    Ok(ContextDescription {
        activity: required_str(&m, "activity")?,
        gaze_mode,
        primary_entities: string_list(&m, "primary_entities")?,
        peripheral_entities: string_list(&m, "peripheral_entities")?,
        predicted_desires: match m.get("predicted_desires") {
            None => Vec::new(),
            Some(_) => string_list(&m, "predicted_desires")?,
        },
        familiarity_notes,
        raw_text: raw.to_string(),
    })
}

fn factor(f: &serde_json::Map<String, Value>, key: &str) -> Result<u8, AgentError> {
    match f.get(key).and_then(Value::as_i64) {
        Some(0) => Ok(0),
        Some(1) => Ok(1),
        Some(v) => Err(parse_err(format!("factor {key} is {v}, must be 0 or 1"))),
        None => Err(parse_err(format!("factor {key} missing or not an integer"))),
    }
}

/// Parses generated candidates. Totals are always recomputed from the
/// factors; any total the model states is ignored. Unscored variants get
/// `factors = None` and `total = -1`.
pub fn parse_candidates(raw: &str, variant: PipelineVariant) -> Result<Vec<KnowledgeCandidate>, AgentError> {
    let m = match object(raw, super::KNOWLEDGE_FORMAT) {
        Ok(m) => m,
        Err(_) if is_nothing(raw) => return Err(AgentError::NoCandidates),
        Err(e) => return Err(e),
    };
    let list = match m.get("candidates") {
        Some(Value::Array(a)) => a,
        _ => return Err(parse_err("missing candidates list")),
    };
    if list.is_empty() {
        return Err(AgentError::NoCandidates);
    }
    let scored = variant.includes_rules();
    list.iter()
        .enumerate()
        .map(|(i, v)| {
            let c = v
                .as_object()
                .ok_or_else(|| parse_err(format!("candidate {i} is not an object")))?;
            let content = required_str(c, "content")?;
            let knowledge_type = match c.get("type").and_then(Value::as_str).map(|s| s.trim().to_ascii_lowercase()).as_deref() {
                Some("factual") => KnowledgeType::Factual,
                Some("conceptual") => KnowledgeType::Conceptual,
                Some("procedural") => KnowledgeType::Procedural,
                Some(other) => return Err(parse_err(format!("candidate {i}: knowledge type {other:?} not allowed"))),
                None => return Err(parse_err(format!("candidate {i}: missing type"))),
            };
            let entities = match c.get("entities") {
                None | Some(Value::Null) => Vec::new(),
                Some(_) => string_list(c, "entities")?,
            };
            let factors = if scored {
                let f = c
                    .get("factors")
                    .and_then(Value::as_object)
                    .ok_or_else(|| parse_err(format!("candidate {i}: missing factors")))?;
                Some(Factors {
                    novelty: factor(f, "novelty")?,
                    interest_alignment: factor(f, "interest_alignment")?,
                    usefulness: factor(f, "usefulness")?,
                    unexpectedness: factor(f, "unexpectedness")?,
                })
            } else {
                None
            };
            Ok(KnowledgeCandidate {
                content,
                knowledge_type,
                entities,
                factor_reasoning: c
                    .get("reasoning")
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_string(),
                total: factors.map_or(-1, |f| f.total()),
                factors,
            })
        })
        .collect()
}

pub fn parse_transform(raw: &str, expected_items: usize) -> Result<TransformedOutput, AgentError> {
    let m = object(raw, super::TRANSFORM_FORMAT)?;
    #[derive(Deserialize)]
    struct Pair {
        keyword: String,
        emoji: String,
    }
    #[derive(Deserialize)]
    struct Item {
        keywords: Vec<Pair>,
        voiceover: String,
    }
    let items: Vec<Item> = serde_json::from_value(m.get("items").cloned().unwrap_or(Value::Null))
        .map_err(|e| parse_err(format!("items: {e}")))?;
    if items.len() != expected_items {
        return Err(parse_err(format!("expected {expected_items} items, got {}", items.len())));
    }
    let items = items
        .into_iter()
        .enumerate()
        .map(|(i, it)| {
            let pairs: Vec<KeywordEmoji> = it
                .keywords
                .into_iter()
                .filter(|p| !p.keyword.trim().is_empty())
                .map(|p| KeywordEmoji {
                    keyword: p.keyword.trim().to_string(),
                    emoji: p.emoji.trim().to_string(),
                })
                .collect();
            if pairs.is_empty() {
                return Err(parse_err(format!("item {i} has no keywords")));
            }
            if it.voiceover.trim().is_empty() {
                return Err(parse_err(format!("item {i} has an empty voiceover")));
            }
            Ok(TransformedItem {
                keyword_emoji_pairs: pairs,
                voiceover_text: it.voiceover.trim().to_string(),
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(TransformedOutput { items })
}

/// Parses the chosen frame (by `frame_index` into `evidence`, or by
/// `frame_t_ms`) and its boxes. Out-of-range boxes are clamped and the
/// reference is flagged; boxes with no area left are dropped.
pub fn parse_locate(raw: &str, evidence: &[ImagePart]) -> Result<ImageReference, AgentError> {
    let m = object(raw, super::LOCATE_FORMAT)?;
    let frame = if let Some(i) = m.get("frame_index").and_then(Value::as_u64) {
        evidence
            .get(i as usize)
            .ok_or_else(|| parse_err(format!("frame_index {i} outside the {} frames", evidence.len())))?
    } else if let Some(t) = m.get("frame_t_ms").and_then(Value::as_u64) {
        evidence
            .iter()
            .find(|f| f.frame_t_ms == t)
            .ok_or_else(|| parse_err(format!("frame_t_ms {t} is not one of the evidence frames")))?
    } else {
        return Err(parse_err("missing frame_index"));
    };
    #[derive(Deserialize)]
    struct RawBox {
        entity: String,
        x: f64,
        y: f64,
        w: f64,
        h: f64,
    }
    let raw_boxes: Vec<RawBox> = match m.get("boxes") {
        None | Some(Value::Null) => Vec::new(),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| parse_err(format!("boxes: {e}")))?,
    };
    let mut clamped = false;
    let mut boxes = Vec::with_capacity(raw_boxes.len());
    for b in raw_boxes {
        let (b, changed) = BoundingBox {
            entity_label: b.entity,
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
        }
        .clamped();
        clamped |= changed;
        if b.w > 0.0 && b.h > 0.0 {
            boxes.push(b);
        }
    }
    Ok(ImageReference {
        chosen_frame_t_ms: frame.frame_t_ms,
        image_ref: frame.image_ref.clone(),
        boxes,
        clamped,
    })
}
