use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ChatProvider, ChatRequest, ProviderError};

const ENTITIES: &[&str] = &[
    "palm tree", "bicycle", "street sign", "coffee cup", "bookshelf", "fountain", "lamp post",
    "bench", "mural", "vending machine", "bus stop", "flower bed", "clock tower", "menu board",
];

const WORDS: &[&str] = &[
    "the", "local", "variety", "was", "first", "recorded", "near", "coastal", "markets", "and",
    "often", "signals", "seasonal", "change", "because", "its", "fibers", "absorb", "heat",
    "slowly", "during", "long", "summer", "evenings", "which", "surprises", "most", "visitors",
];

/// Offline chat backend that fabricates well-formed replies for each known
/// schema tag. The reply is drawn from a generator seeded by the request
/// fingerprint, so identical requests always get identical text.
///
/// Knowledge replies carry factor scores only when the prompt asks for
/// them (mentions `"factors"`). Transform replies produce one item per
/// `<item ` marker in the prompt; locate replies pick one attached image.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticChatProvider;

fn fenced(tag: &str, body: serde_json::Value) -> String {
    format!("```json {tag}\n{body}\n```")
}

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(6..12);
    let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).expect("non-empty")).collect();
    let mut s = words.join(" ");
    if let Some(first) = s.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    s.push('.');
    s
}

impl ChatProvider for SyntheticChatProvider {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        req.validate()?;
        let digest = hex::decode(req.fingerprint()).expect("fingerprint is hex");
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest[..32]);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let text = req.joined_text();
        let out = match req.expected_format.as_str() {
            "context.v1" => {
                let mode = *["saccade", "quick_browse", "focused"].choose(&mut rng).unwrap();
                let mut ents: Vec<&str> = ENTITIES.choose_multiple(&mut rng, 4).copied().collect();
                let peripheral = ents.split_off(rng.gen_range(1..3));
                fenced(
                    "context.v1",
                    serde_json::json!({
                        "activity": "walking through a street",
                        "gaze_mode": mode,
                        "primary_entities": ents,
                        "peripheral_entities": peripheral,
                        "predicted_desires": ["learn something about the surroundings"],
                        "familiarity": [{"entity": ents[0], "level": "probably familiar"}],
                    }),
                )
            }
            "knowledge.v1" => {
                if rng.gen_bool(0.1) {
                    return Ok("NOTHING".to_string());
                }
                let scored = text.contains("\"factors\"");
                let n = rng.gen_range(1..=4);
                let candidates: Vec<serde_json::Value> = (0..n)
                    .map(|_| {
                        let mut c = serde_json::json!({
                            "content": sentence(&mut rng),
                            "type": *["factual", "conceptual", "procedural"].choose(&mut rng).unwrap(),
                            "entities": [*ENTITIES.choose(&mut rng).unwrap()],
                            "reasoning": "synthetic",
                        });
                        if scored {
                            c["factors"] = serde_json::json!({
                                "novelty": rng.gen_range(0..=1),
                                "interest_alignment": rng.gen_range(0..=1),
                                "usefulness": rng.gen_range(0..=1),
                                "unexpectedness": rng.gen_range(0..=1),
                            });
                        }
                        c
                    })
                    .collect();
                fenced("knowledge.v1", serde_json::json!({ "candidates": candidates }))
            }
            "transform.v1" => {
                let n = text.matches("<item ").count().max(1);
                let items: Vec<serde_json::Value> = (0..n)
                    .map(|_| {
                        serde_json::json!({
                            "keywords": [{"keyword": *WORDS.choose(&mut rng).unwrap(), "emoji": "💡"}],
                            "voiceover": sentence(&mut rng),
                        })
                    })
                    .collect();
                fenced("transform.v1", serde_json::json!({ "items": items }))
            }
            "locate.v1" => {
                let m = req.images().count().max(1);
                let x: f64 = rng.gen_range(0.0..0.6);
                let y: f64 = rng.gen_range(0.0..0.6);
                fenced(
                    "locate.v1",
                    serde_json::json!({
                        "frame_index": rng.gen_range(0..m),
                        "boxes": [{"entity": *ENTITIES.choose(&mut rng).unwrap(),
                                   "x": x, "y": y, "w": 0.3, "h": 0.3}],
                    }),
                )
            }
            other => {
                return Err(ProviderError::InvalidRequest(format!(
                    "synthetic provider has no generator for {other:?}"
                )))
            }
        };
        Ok(out)
    }
}
