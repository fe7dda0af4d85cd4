use serde::{Deserialize, Serialize};

use crate::history::HistoryStore;
use crate::providers::{Embedding, TextEmbedder};

use super::{ContextDescription, GazeMode, KnowledgeCandidate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub min_total: i32,
    pub novelty_mandatory: bool,
    pub dedup_threshold: f64,
    pub max_items: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            min_total: 2,
            novelty_mandatory: true,
            dedup_threshold: 0.75,
            max_items: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    LowScore,
    NoNovelty,
    SimilarToHistory,
    Unembeddable,
    OverCap,
}

/// Outcome for one candidate, in model order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub index: usize,
    pub content: String,
    pub total: i32,
    pub max_history_similarity: f64,
    pub affinity: u8,
    pub dropped: Option<DropReason>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selected {
    pub candidate: KnowledgeCandidate,
    pub embedding: Embedding,
    pub max_history_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Selection {
    pub selected: Vec<Selected>,
    pub verdicts: Vec<Verdict>,
}

fn norm(s: &str) -> String {
    s.trim().to_lowercase()
}

fn mentions(candidate: &KnowledgeCandidate, labels: &[String]) -> bool {
    candidate
        .entities
        .iter()
        .any(|e| labels.iter().any(|l| norm(l) == norm(e)))
}

/// 1 when the candidate suits the gaze pattern, else 0. Focused gaze
/// favors items that tie a primary entity to a peripheral one; browsing
/// favors items about the scanned (primary) entities.
fn affinity(candidate: &KnowledgeCandidate, ctx: &ContextDescription) -> u8 {
    let hit = match ctx.gaze_mode {
        GazeMode::Focused => {
            mentions(candidate, &ctx.primary_entities) && mentions(candidate, &ctx.peripheral_entities)
        }
        GazeMode::QuickBrowse => mentions(candidate, &ctx.primary_entities),
        GazeMode::Saccade => false,
    };
    hit as u8
}

/// Applies retention, novelty, history dedup, ordering and the item cap.
///
/// Totals are recomputed from the factors. Unscored candidates (baseline
/// variants) skip the two score gates but are still deduplicated and capped.
pub fn score_filter_select(
    candidates: &[KnowledgeCandidate],
    ctx: &ContextDescription,
    history: &HistoryStore,
    embedder: &dyn TextEmbedder,
    cfg: &SelectionConfig,
) -> Selection {
    let mut verdicts = Vec::with_capacity(candidates.len());
    let mut survivors: Vec<(usize, Selected, u8)> = Vec::new();
    for (index, c) in candidates.iter().enumerate() {
        let mut c = c.clone();
        c.total = c.factors.map_or(-1, |f| f.total());
        let aff = affinity(&c, ctx);
        let mut verdict = Verdict {
            index,
            content: c.content.clone(),
            total: c.total,
            max_history_similarity: -1.0,
            affinity: aff,
            dropped: None,
        };
        if let Some(f) = c.factors {
            if c.total < cfg.min_total {
                verdict.dropped = Some(DropReason::LowScore);
            } else if cfg.novelty_mandatory && f.novelty == 0 {
                verdict.dropped = Some(DropReason::NoNovelty);
            }
        }
        if verdict.dropped.is_none() {
            match embedder.embed_text(&c.content) {
                Ok(e) => {
                    let sim = history.max_similarity(&e);
                    verdict.max_history_similarity = sim;
                    if sim >= cfg.dedup_threshold {
                        verdict.dropped = Some(DropReason::SimilarToHistory);
                    } else {
                        survivors.push((
                            index,
                            Selected {
                                candidate: c,
                                embedding: e,
                                max_history_similarity: sim,
                            },
                            aff,
                        ));
                    }
                }
                Err(err) => {
                    tracing::warn!(error = %err, "candidate could not be embedded");
                    verdict.dropped = Some(DropReason::Unembeddable);
                }
            }
        }
        verdicts.push(verdict);
    }
    survivors.sort_by(|a, b| {
        b.1.candidate
            .total
            .cmp(&a.1.candidate.total)
            .then(b.2.cmp(&a.2))
            .then(a.0.cmp(&b.0))
    });
    for (index, _, _) in survivors.iter().skip(cfg.max_items) {
        verdicts[*index].dropped = Some(DropReason::OverCap);
    }
    survivors.truncate(cfg.max_items);
    Selection {
        selected: survivors.into_iter().map(|(_, s, _)| s).collect(),
        verdicts,
    }
}
