//! Decides when a knowledge request starts.
//!
//! Three sources feed one state: scene change under constant sensing,
//! gaze fixations, and explicit user queries. The two AI-initiated sources
//! share a minimum interval; user queries bypass it and leave the state
//! untouched.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::FixationEvent;
use crate::providers::{cosine, Embedding, ProviderError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TriggerError {
    #[error("embedding is not unit-norm (norm {0})")]
    NonUnitEmbedding(f64),
    #[error("embedding at t={t_ms} does not follow t={last_ms}")]
    NonMonotonicTime { last_ms: u64, t_ms: u64 },
    #[error("embedding dimension {got} differs from window dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("query text is empty")]
    EmptyQuery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    ConstantSensing,
    Fixation,
    UserQuery,
}

impl TriggerKind {
    pub fn is_ai_initiated(self) -> bool {
        !matches!(self, TriggerKind::UserQuery)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TriggerKind::ConstantSensing => "constant_sensing",
            TriggerKind::Fixation => "fixation",
            TriggerKind::UserQuery => "user_query",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub kind: TriggerKind,
    pub t_ms: u64,
    /// Timestamps of up to `window_size` recent sampled frames.
    pub evidence_frames: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixation: Option<FixationEvent>,
    /// For constant sensing: how many window pairs fell below the similarity threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub changed_pairs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerParams {
    pub interval_ms: u64,
    pub window_size: usize,
    pub sim_threshold: f64,
    pub frac: f64,
}

impl Default for TriggerParams {
    fn default() -> Self {
        Self {
            interval_ms: 12_000,
            window_size: 16,
            sim_threshold: 0.6,
            frac: 0.8,
        }
    }
}

impl TriggerParams {
    /// Pairs that must differ for a scene change: ceil(frac * window_size).
    pub fn required_pairs(&self) -> usize {
        (self.frac * self.window_size as f64).ceil() as usize
    }
}

/// Outcome of offering an observation to the trigger state.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Idle,
    Fire(TriggerEvent),
    /// Conditions were met but the caller reported a job in flight; state unchanged.
    Busy(TriggerKind),
}

impl Decision {
    pub fn fired(self) -> Option<TriggerEvent> {
        match self {
            Decision::Fire(ev) => Some(ev),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TriggerState {
    params: TriggerParams,
    last_ai_trigger_ms: Option<u64>,
    reference: Vec<(u64, Embedding)>,
    current: VecDeque<(u64, Embedding)>,
    last_embedding_ms: Option<u64>,
}

impl TriggerState {
    pub fn new(params: TriggerParams) -> Self {
        Self {
            params,
            last_ai_trigger_ms: None,
            reference: Vec::new(),
            current: VecDeque::with_capacity(params.window_size),
            last_embedding_ms: None,
        }
    }

    pub fn params(&self) -> &TriggerParams {
        &self.params
    }

    pub fn last_ai_trigger_ms(&self) -> Option<u64> {
        self.last_ai_trigger_ms
    }

    pub fn reference_window(&self) -> &[(u64, Embedding)] {
        &self.reference
    }

    pub fn current_window(&self) -> impl Iterator<Item = &(u64, Embedding)> {
        self.current.iter()
    }

    fn window_full(&self) -> bool {
        self.current.len() >= self.params.window_size
    }

    fn interval_elapsed(&self, t_ms: u64) -> bool {
        self.last_ai_trigger_ms
            .map_or(true, |last| t_ms.saturating_sub(last) >= self.params.interval_ms)
    }

    fn evidence(&self) -> Vec<u64> {
        self.current.iter().map(|(t, _)| *t).collect()
    }

    fn snapshot_reference(&mut self) {
        if self.window_full() {
            self.reference = self.current.iter().cloned().collect();
        }
    }

    /// Clears both windows; the next full window becomes the new reference.
    pub fn reset_windows(&mut self) {
        self.reference.clear();
        self.current.clear();
        self.last_embedding_ms = None;
    }

    fn changed_pairs(&self) -> Result<usize, TriggerError> {
        let mut n = 0;
        for ((_, cur), (_, reference)) in self.current.iter().zip(&self.reference) {
            let c = cosine(cur, reference).map_err(|e| match e {
                ProviderError::DimensionMismatch(a, b) => TriggerError::DimensionMismatch {
                    expected: b,
                    got: a,
                },
                _ => unreachable!("cosine only fails on dimension mismatch"),
            })?;
            if c < self.params.sim_threshold {
                n += 1;
            }
        }
        Ok(n)
    }

    pub fn on_frame_embedding(
        &mut self,
        t_ms: u64,
        embedding: Embedding,
    ) -> Result<Option<TriggerEvent>, TriggerError> {
        self.offer_frame(t_ms, embedding, false).map(Decision::fired)
    }

    /// Appends a sampled frame embedding and evaluates scene change.
    pub fn offer_frame(
        &mut self,
        t_ms: u64,
        embedding: Embedding,
        busy: bool,
    ) -> Result<Decision, TriggerError> {
        let norm = embedding.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(TriggerError::NonUnitEmbedding(norm));
        }
        if let Some(last) = self.last_embedding_ms {
            if t_ms <= last {
                return Err(TriggerError::NonMonotonicTime { last_ms: last, t_ms });
            }
        }
        if let Some((_, first)) = self.current.front() {
            if first.dim() != embedding.dim() {
                return Err(TriggerError::DimensionMismatch {
                    expected: first.dim(),
                    got: embedding.dim(),
                });
            }
        }
        self.last_embedding_ms = Some(t_ms);
        self.current.push_back((t_ms, embedding));
        while self.current.len() > self.params.window_size {
            self.current.pop_front();
        }
        if !self.window_full() {
            return Ok(Decision::Idle);
        }
        if self.reference.is_empty() {
            self.snapshot_reference();
            return Ok(Decision::Idle);
        }
        let changed = self.changed_pairs()?;
        if changed < self.params.required_pairs() || !self.interval_elapsed(t_ms) {
            return Ok(Decision::Idle);
        }
        if busy {
            return Ok(Decision::Busy(TriggerKind::ConstantSensing));
        }
        self.last_ai_trigger_ms = Some(t_ms);
        self.snapshot_reference();
        Ok(Decision::Fire(TriggerEvent {
            kind: TriggerKind::ConstantSensing,
            t_ms,
            evidence_frames: self.evidence(),
            query_text: None,
            fixation: None,
            changed_pairs: Some(changed),
        }))
    }

    pub fn on_fixation(&mut self, fx: FixationEvent, t_ms: u64) -> Option<TriggerEvent> {
        self.offer_fixation(fx, t_ms, false).fired()
    }

    pub fn offer_fixation(&mut self, fx: FixationEvent, t_ms: u64, busy: bool) -> Decision {
        if !self.interval_elapsed(t_ms) {
            return Decision::Idle;
        }
        if busy {
            return Decision::Busy(TriggerKind::Fixation);
        }
        self.last_ai_trigger_ms = Some(t_ms);
        self.snapshot_reference();
        Decision::Fire(TriggerEvent {
            kind: TriggerKind::Fixation,
            t_ms,
            evidence_frames: self.evidence(),
            query_text: None,
            fixation: Some(fx),
            changed_pairs: None,
        })
    }

    /// User queries always fire and never touch the interval or windows.
    pub fn on_user_query(&self, text: &str, t_ms: u64) -> Result<TriggerEvent, TriggerError> {
        if text.trim().is_empty() {
            return Err(TriggerError::EmptyQuery);
        }
        Ok(TriggerEvent {
            kind: TriggerKind::UserQuery,
            t_ms,
            evidence_frames: self.evidence(),
            query_text: Some(text.to_string()),
            fixation: None,
            changed_pairs: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PERIOD: u64 = 312;

    fn e(i: usize) -> Embedding {
        Embedding::basis(8, i)
    }

    fn fx(t: u64) -> FixationEvent {
        FixationEvent {
            start_ms: t - 1000,
            end_ms: t,
            centroid: (0.5, 0.5),
            dispersion_deg: 0.0,
            sample_count: 100,
        }
    }

    /// Feeds `n` copies of `emb` starting at `*t`, returning fired events.
    fn feed(state: &mut TriggerState, t: &mut u64, emb: &Embedding, n: usize) -> Vec<TriggerEvent> {
        let mut out = Vec::new();
        for _ in 0..n {
            out.extend(state.on_frame_embedding(*t, emb.clone()).unwrap());
            *t += PERIOD;
        }
        out
    }

    #[test]
    fn required_pairs_is_thirteen() {
        assert_eq!(TriggerParams::default().required_pairs(), 13);
    }

    #[test]
    fn identical_scene_never_fires() {
        let mut s = TriggerState::new(TriggerParams::default());
        let mut t = 0;
        assert!(feed(&mut s, &mut t, &e(0), 200).is_empty());
        assert_eq!(s.reference_window().len(), 16);
    }

    #[test]
    fn orthogonal_scene_fires() {
        let mut s = TriggerState::new(TriggerParams::default());
        let mut t = 0;
        assert!(feed(&mut s, &mut t, &e(0), 16).is_empty());
        t = 13_000;
        let fired = feed(&mut s, &mut t, &e(1), 16);
        assert_eq!(fired.len(), 1);
        let ev = &fired[0];
        assert_eq!(ev.kind, TriggerKind::ConstantSensing);
        // fires as soon as 13 of 16 aligned pairs differ
        assert_eq!(ev.changed_pairs, Some(13));
        assert_eq!(ev.t_ms, 13_000 + 12 * PERIOD);
        assert_eq!(ev.evidence_frames.len(), 16);
        assert_eq!(s.last_ai_trigger_ms(), Some(ev.t_ms));
    }

    #[test]
    fn full_window_change_counts_all_pairs() {
        // reference all e0, current all e1: 16 of 16 pairs at cosine 0
        let mut s = TriggerState::new(TriggerParams {
            frac: 1.0,
            ..TriggerParams::default()
        });
        let mut t = 0;
        feed(&mut s, &mut t, &e(0), 16);
        let fired = feed(&mut s, &mut t, &e(1), 16);
        assert_eq!(fired.len(), 1);
        assert_eq!(fired[0].changed_pairs, Some(16));
    }

    #[test]
    fn twelve_of_sixteen_does_not_fire() {
        let mut s = TriggerState::new(TriggerParams::default());
        let mut t = 0;
        feed(&mut s, &mut t, &e(0), 16);
        t = 13_000;
        assert!(feed(&mut s, &mut t, &e(1), 12).is_empty());
        assert!(feed(&mut s, &mut t, &e(0), 4).is_empty());
        assert!(s.last_ai_trigger_ms().is_none());
    }

    #[test]
    fn interval_blocks_then_releases() {
        let mut s = TriggerState::new(TriggerParams::default());
        let mut t = 0;
        feed(&mut s, &mut t, &e(0), 16);
        let first = feed(&mut s, &mut t, &e(1), 16);
        assert_eq!(first.len(), 1);
        let t0 = first[0].t_ms;
        // new scene immediately: blocked until 12 s have passed
        let second = feed(&mut s, &mut t, &e(2), 60);
        assert_eq!(second.len(), 1);
        assert!(second[0].t_ms - t0 >= 12_000);
        assert!(second[0].t_ms - t0 < 12_000 + PERIOD);
    }

    #[test]
    fn errors() {
        let mut s = TriggerState::new(TriggerParams::default());
        s.on_frame_embedding(100, e(0)).unwrap();
        assert_eq!(
            s.on_frame_embedding(100, e(0)),
            Err(TriggerError::NonMonotonicTime { last_ms: 100, t_ms: 100 })
        );
        assert!(matches!(
            s.on_frame_embedding(200, Embedding::basis(4, 0)),
            Err(TriggerError::DimensionMismatch { expected: 8, got: 4 })
        ));
        assert_eq!(s.on_user_query("  ", 300), Err(TriggerError::EmptyQuery));
    }

    #[test]
    fn fixation_respects_interval() {
        let mut s = TriggerState::new(TriggerParams::default());
        assert!(s.on_fixation(fx(5_000), 5_000).is_some());
        assert!(s.on_fixation(fx(10_000), 10_000).is_none());
        assert!(s.on_fixation(fx(20_000), 20_000).is_some());
    }

    #[test]
    fn fixation_snapshots_full_window() {
        let mut s = TriggerState::new(TriggerParams::default());
        let mut t = 0;
        feed(&mut s, &mut t, &e(0), 16);
        feed(&mut s, &mut t, &e(1), 8);
        let ev = s.on_fixation(fx(t), t).unwrap();
        assert_eq!(ev.fixation.unwrap().end_ms, t);
        let refs: Vec<_> = s.reference_window().iter().map(|(_, e)| e.clone()).collect();
        assert_eq!(refs[15], e(1));
        assert_eq!(refs[0], e(0));
    }

    #[test]
    fn queries_bypass_interval() {
        let mut s = TriggerState::new(TriggerParams::default());
        s.on_fixation(fx(5_000), 5_000).unwrap();
        let q1 = s.on_user_query("what flower is that?", 6_000).unwrap();
        let q2 = s.on_user_query("is it toxic?", 8_000).unwrap();
        assert_eq!(q1.kind, TriggerKind::UserQuery);
        assert_eq!(q2.query_text.as_deref(), Some("is it toxic?"));
        assert_eq!(s.last_ai_trigger_ms(), Some(5_000));
    }

    #[test]
    fn busy_leaves_state_untouched() {
        let mut s = TriggerState::new(TriggerParams::default());
        let mut t = 0;
        feed(&mut s, &mut t, &e(0), 16);
        for _ in 0..12 {
            s.on_frame_embedding(t, e(1)).unwrap();
            t += PERIOD;
        }
        assert_eq!(s.offer_frame(t, e(1), true).unwrap(), Decision::Busy(TriggerKind::ConstantSensing));
        assert!(s.last_ai_trigger_ms().is_none());
        assert_eq!(s.offer_fixation(fx(t), t, true), Decision::Busy(TriggerKind::Fixation));
        t += PERIOD;
        assert!(s.on_frame_embedding(t, e(1)).unwrap().is_some());
    }
}
