//! The engine loop: sampled frames, gaze and queries go in; triggers run
//! the agent pipeline; deliveries, cancels and state changes come out.
//!
//! Time is virtual and comes from event timestamps. An agent job computes
//! its result when its trigger fires and commits `job_latency_ms` later;
//! AI-initiated triggers and queries that arrive before the commit are
//! dropped and reported as suppressed.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::agents::{
    self, AgentError, AgentInputs, ContextDescription, GazeMode, ImageReference,
    KnowledgeCandidate, Selected, TransformedItem, Verdict,
};
use crate::attention::{overlay_at, FixationDetector, FixationEvent};
use crate::config::EngineConfig;
use crate::history::{HistoryEntry, HistoryStore};
use crate::providers::{ChatProvider, ChatRequest, ImagePart, ProviderError, Providers, Tier};
use crate::session::{event_stream, Button, ButtonEvent, Event, SessionRecording, UserProfile};
use crate::trigger::{Decision, TriggerEvent, TriggerKind, TriggerState};

/// Version tag written with every log and trace line.
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlState {
    pub system_on: bool,
    pub muted: bool,
    pub active_delivery: Option<String>,
}

impl Default for ControlState {
    fn default() -> Self {
        Self {
            system_on: true,
            muted: false,
            active_delivery: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryItem {
    pub candidate: KnowledgeCandidate,
    pub output: TransformedItem,
    pub history_id: String,
    /// Highest history cosine just before this item was stored.
    pub max_history_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub id: String,
    pub trigger_id: String,
    pub trigger: TriggerEvent,
    pub gaze_mode: GazeMode,
    pub items: Vec<DeliveryItem>,
    pub image: Option<ImageReference>,
    pub delivered_at_ms: u64,
    pub canceled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canceled_at_ms: Option<u64>,
    pub audio_suppressed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub duration_min: f64,
    pub ai_initiated_count: usize,
    pub cancel_count: usize,
    pub user_query_count: usize,
    pub deliveries_per_minute: f64,
}

/// Counts over a finished delivery log.
pub fn compute_metrics(log: &[DeliveryRecord], duration_ms: u64) -> SessionMetrics {
    let ai = log.iter().filter(|r| r.trigger.kind.is_ai_initiated()).count();
    let duration_min = duration_ms as f64 / 60_000.0;
    SessionMetrics {
        duration_min,
        ai_initiated_count: ai,
        cancel_count: log.iter().filter(|r| r.canceled).count(),
        user_query_count: log.iter().filter(|r| r.trigger.kind == TriggerKind::UserQuery).count(),
        deliveries_per_minute: if duration_min > 0.0 { ai as f64 / duration_min } else { 0.0 },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum EngineEvent {
    FrameTick {
        t_ms: u64,
        frame_index: usize,
        image_ref: String,
        gaze_circles: Vec<(f64, f64)>,
    },
    Trigger {
        trigger_id: String,
        kind: TriggerKind,
        t_ms: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        query_text: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        changed_pairs: Option<usize>,
    },
    TriggerSuppressed {
        kind: TriggerKind,
        t_ms: u64,
        reason: String,
    },
    PromptIssued {
        trigger_id: String,
        format: String,
        tier: Tier,
        text: String,
        images: Vec<String>,
    },
    ContextReady {
        trigger_id: String,
        gaze_mode: GazeMode,
        primary_entities: Vec<String>,
        peripheral_entities: Vec<String>,
    },
    CandidatesScored {
        trigger_id: String,
        verdicts: Vec<Verdict>,
    },
    JobSkipped {
        trigger_id: String,
        t_ms: u64,
        reason: String,
    },
    Delivery(Box<DeliveryRecord>),
    Canceled {
        delivery_id: String,
        t_ms: u64,
    },
    StateChanged {
        t_ms: u64,
        system_on: bool,
        muted: bool,
    },
    Metrics {
        t_ms: u64,
        ai_initiated_count: usize,
        cancel_count: usize,
        user_query_count: usize,
    },
}

/// Records every request passing through so prompts can be traced.
struct TracingChat {
    inner: Arc<dyn ChatProvider>,
    seen: Mutex<Vec<ChatRequest>>,
}

impl ChatProvider for TracingChat {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        self.seen.lock().expect("trace lock").push(req.clone());
        self.inner.chat(req)
    }
}

struct PreparedItem {
    selected: Selected,
    output: TransformedItem,
}

struct Pending {
    commit_at: u64,
    trigger_id: String,
    trigger: TriggerEvent,
    gaze_mode: GazeMode,
    items: Vec<PreparedItem>,
    image: Option<ImageReference>,
}

pub struct Engine {
    rec: Arc<SessionRecording>,
    profile: UserProfile,
    config: EngineConfig,
    providers: Providers,
    chat: Arc<TracingChat>,
    history: Arc<Mutex<HistoryStore>>,
    trigger: TriggerState,
    detector: FixationDetector,
    control: ControlState,
    evidence: VecDeque<usize>,
    next_sample_ms: f64,
    pending: Option<Pending>,
    deliveries: Vec<DeliveryRecord>,
    events: Vec<EngineEvent>,
    trigger_seq: usize,
    now_ms: u64,
}

impl Engine {
    pub fn new(
        rec: Arc<SessionRecording>,
        profile: UserProfile,
        config: EngineConfig,
        providers: Providers,
        history: Arc<Mutex<HistoryStore>>,
    ) -> Self {
        let chat = Arc::new(TracingChat {
            inner: providers.chat.clone(),
            seen: Mutex::new(Vec::new()),
        });
        Self {
            trigger: TriggerState::new(config.trigger_params()),
            detector: FixationDetector::new(rec.geometry, config.fixation_params()),
            now_ms: rec.start_ms(),
            rec,
            profile,
            config,
            providers,
            chat,
            history,
            control: ControlState::default(),
            evidence: VecDeque::new(),
            next_sample_ms: f64::NEG_INFINITY,
            pending: None,
            deliveries: Vec::new(),
            events: Vec::new(),
            trigger_seq: 0,
        }
    }

    pub fn control(&self) -> &ControlState {
        &self.control
    }

    pub fn deliveries(&self) -> &[DeliveryRecord] {
        &self.deliveries
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn recording(&self) -> &SessionRecording {
        &self.rec
    }

    pub fn drain_events(&mut self) -> Vec<EngineEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn metrics(&self) -> SessionMetrics {
        compute_metrics(&self.deliveries, self.rec.duration_ms())
    }

    fn emit(&mut self, ev: EngineEvent) {
        self.events.push(ev);
    }

    fn emit_metrics(&mut self) {
        let m = self.metrics();
        self.emit(EngineEvent::Metrics {
            t_ms: self.now_ms,
            ai_initiated_count: m.ai_initiated_count,
            cancel_count: m.cancel_count,
            user_query_count: m.user_query_count,
        });
    }

    /// Moves the clock forward, committing a due job.
    pub fn advance_to(&mut self, t_ms: u64) {
        if t_ms > self.now_ms {
            self.now_ms = t_ms;
        }
        if self.pending.as_ref().is_some_and(|p| p.commit_at <= self.now_ms) {
            let p = self.pending.take().expect("checked above");
            self.commit(p);
        }
    }

    fn busy(&self) -> bool {
        self.pending.is_some()
    }

    /// Processes one recorded event.
    pub fn step(&mut self, ev: &Event) {
        let t = ev.t_ms(&self.rec);
        self.advance_to(t);
        match ev {
            Event::FrameArrived(i) => self.on_frame(*i),
            Event::GazeArrived(g) => match self.detector.push(*g) {
                Ok(Some(fx)) => self.on_fixation(fx, g.t_ms),
                Ok(None) => {}
                Err(e) => tracing::warn!(error = %e, "gaze sample rejected"),
            },
            Event::QueryArrived(q) => self.on_query(&q.text, q.t_ms),
            Event::ButtonArrived(b) => self.press(b),
        }
    }

    fn on_frame(&mut self, index: usize) {
        let frame = self.rec.frames[index].clone();
        let overlay = overlay_at(
            frame.t_ms,
            &self.rec.gaze,
            self.config.overlay.sync_tolerance_ms,
            self.config.overlay.max_points,
        );
        self.emit(EngineEvent::FrameTick {
            t_ms: frame.t_ms,
            frame_index: index,
            image_ref: frame.image_ref.clone(),
            gaze_circles: overlay.circle_centers,
        });
        let t = frame.t_ms as f64;
        if t < self.next_sample_ms {
            return;
        }
        let period = 1000.0 / self.config.thresholds.sample_hz;
        self.next_sample_ms = if self.next_sample_ms.is_finite() {
            let mut next = self.next_sample_ms;
            while next <= t {
                next += period;
            }
            next
        } else {
            t + period
        };
        self.evidence.push_back(index);
        while self.evidence.len() > self.config.thresholds.window_size {
            self.evidence.pop_front();
        }
        if !self.control.system_on {
            return;
        }
        let part = self.image_part(index, false);
        let embedding = match self.providers.image.embed_image(&part) {
            Ok(e) => e,
            Err(e) => {
                tracing::warn!(error = %e, t_ms = frame.t_ms, "frame embedding failed");
                return;
            }
        };
        let busy = self.busy();
        match self.trigger.offer_frame(frame.t_ms, embedding, busy) {
            Ok(decision) => self.on_decision(decision, frame.t_ms),
            Err(e) => tracing::warn!(error = %e, "frame rejected by trigger"),
        }
    }

    fn on_fixation(&mut self, fx: FixationEvent, t_ms: u64) {
        if !self.control.system_on {
            return;
        }
        let busy = self.busy();
        let decision = self.trigger.offer_fixation(fx, t_ms, busy);
        self.on_decision(decision, t_ms);
    }

    fn on_decision(&mut self, decision: Decision, t_ms: u64) {
        match decision {
            Decision::Idle => {}
            Decision::Busy(kind) => self.emit(EngineEvent::TriggerSuppressed {
                kind,
                t_ms,
                reason: "job_in_flight".into(),
            }),
            Decision::Fire(ev) => self.run_job(ev),
        }
    }

    fn on_query(&mut self, text: &str, t_ms: u64) {
        if self.busy() {
            self.emit(EngineEvent::TriggerSuppressed {
                kind: TriggerKind::UserQuery,
                t_ms,
                reason: "job_in_flight".into(),
            });
            return;
        }
        match self.trigger.on_user_query(text, t_ms) {
            Ok(ev) => self.run_job(ev),
            Err(e) => self.emit(EngineEvent::TriggerSuppressed {
                kind: TriggerKind::UserQuery,
                t_ms,
                reason: e.to_string(),
            }),
        }
    }

    /// Applies a ring-button press at `ev.t_ms` (or now, if that is earlier).
    pub fn press(&mut self, ev: &ButtonEvent) {
        self.advance_to(ev.t_ms);
        let t = self.now_ms;
        match ev.button {
            Button::Up => {
                if let Some(id) = self.control.active_delivery.take() {
                    if let Some(rec) = self.deliveries.iter_mut().find(|d| d.id == id) {
                        rec.canceled = true;
                        rec.canceled_at_ms = Some(t);
                    }
                    self.emit(EngineEvent::Canceled { delivery_id: id, t_ms: t });
                    self.emit_metrics();
                }
            }
            Button::Left => {
                self.control.muted = !self.control.muted;
                self.emit_state();
            }
            Button::Bottom => {
                self.control.system_on = !self.control.system_on;
                if !self.control.system_on && self.config.run.reset_window_on_toggle {
                    self.trigger.reset_windows();
                }
                self.emit_state();
            }
            Button::Right => match &ev.query_text {
                Some(q) => self.on_query(q, t),
                None => self.emit(EngineEvent::TriggerSuppressed {
                    kind: TriggerKind::UserQuery,
                    t_ms: t,
                    reason: "query text missing".into(),
                }),
            },
        }
    }

    fn emit_state(&mut self) {
        self.emit(EngineEvent::StateChanged {
            t_ms: self.now_ms,
            system_on: self.control.system_on,
            muted: self.control.muted,
        });
    }

    /// Flushes the fixation detector and commits any outstanding job.
    pub fn finish(&mut self) {
        if let Some(fx) = self.detector.finish() {
            let t = self.now_ms.max(fx.end_ms);
            self.on_fixation(fx, t);
        }
        if let Some(p) = self.pending.take() {
            self.now_ms = self.now_ms.max(p.commit_at);
            self.commit(p);
        }
        self.emit_metrics();
    }

    fn image_part(&self, index: usize, with_overlay: bool) -> ImagePart {
        let f = &self.rec.frames[index];
        let circles = if with_overlay {
            overlay_at(
                f.t_ms,
                &self.rec.gaze,
                self.config.overlay.sync_tolerance_ms,
                self.config.overlay.max_points,
            )
            .circle_centers
        } else {
            Vec::new()
        };
        ImagePart {
            frame_t_ms: f.t_ms,
            image_ref: f.image_ref.clone(),
            path: self.rec.frame_path(f),
            gaze_circles: circles,
            render_overlay: with_overlay,
        }
    }

    fn wallclock(&self, t_ms: u64) -> String {
        let t = self.rec.start_wallclock + chrono::Duration::milliseconds(t_ms as i64);
        t.to_rfc3339_opts(chrono::SecondsFormat::Secs, false)
    }

    fn language(&self) -> String {
        self.config
            .language
            .clone()
            .unwrap_or_else(|| self.profile.preferred_language.clone())
    }

    fn flush_prompts(&mut self, trigger_id: &str) {
        let mut seen = std::mem::take(&mut *self.chat.seen.lock().expect("trace lock"));
        // the two output agents race; order their prompts by agent
        let rank = |f: &str| match f {
            agents::CONTEXT_FORMAT => 0,
            agents::KNOWLEDGE_FORMAT => 1,
            agents::TRANSFORM_FORMAT => 2,
            agents::LOCATE_FORMAT => 3,
            _ => 4,
        };
        seen.sort_by_key(|r| rank(&r.expected_format));
        for req in seen {
            self.emit(EngineEvent::PromptIssued {
                trigger_id: trigger_id.to_string(),
                format: req.expected_format.clone(),
                tier: req.tier,
                text: req.joined_text(),
                images: req.images().map(|i| i.image_ref.clone()).collect(),
            });
        }
    }

    fn skip(&mut self, trigger_id: &str, t_ms: u64, reason: impl Into<String>) {
        let reason = reason.into();
        tracing::info!(trigger_id, %reason, "job skipped");
        self.emit(EngineEvent::JobSkipped {
            trigger_id: trigger_id.to_string(),
            t_ms,
            reason,
        });
    }

    fn run_job(&mut self, mut trigger: TriggerEvent) {
        self.trigger_seq += 1;
        let trigger_id = format!("t{:04}", self.trigger_seq);
        let t = trigger.t_ms;
        trigger.evidence_frames = self.evidence.iter().map(|i| self.rec.frames[*i].t_ms).collect();
        self.emit(EngineEvent::Trigger {
            trigger_id: trigger_id.clone(),
            kind: trigger.kind,
            t_ms: t,
            query_text: trigger.query_text.clone(),
            changed_pairs: trigger.changed_pairs,
        });
        if self.evidence.is_empty() {
            self.skip(&trigger_id, t, "no frames sampled yet");
            return;
        }
        let frames: Vec<ImagePart> = self.evidence.iter().map(|i| self.image_part(*i, true)).collect();
        match self.prepare(&trigger_id, &trigger, &frames) {
            Ok(Some((ctx, items, image))) => {
                let pending = Pending {
                    commit_at: t + self.config.run.job_latency_ms,
                    trigger_id,
                    trigger,
                    gaze_mode: ctx.gaze_mode,
                    items,
                    image,
                };
                if pending.commit_at <= self.now_ms {
                    self.commit(pending);
                } else {
                    self.pending = Some(pending);
                }
            }
            Ok(None) => {}
            Err(e) => {
                self.flush_prompts(&trigger_id);
                let reason = match e {
                    AgentError::NoCandidates => "no_candidates".to_string(),
                    other => other.to_string(),
                };
                self.skip(&trigger_id, t, reason);
            }
        }
    }

    #[allow(clippy::type_complexity)]
    fn prepare(
        &mut self,
        trigger_id: &str,
        trigger: &TriggerEvent,
        frames: &[ImagePart],
    ) -> Result<Option<(ContextDescription, Vec<PreparedItem>, Option<ImageReference>)>, AgentError> {
        let wallclock = self.wallclock(trigger.t_ms);
        let chat = self.chat.clone();
        let profile = self.profile.clone();
        let location = self.rec.location.clone();
        let inputs = AgentInputs {
            variant: self.config.variant,
            profile: &profile,
            wallclock: &wallclock,
            location: &location,
            trigger,
        };

        let ctx = agents::analyze_context(chat.as_ref(), &inputs, frames);
        self.flush_prompts(trigger_id);
        let ctx = ctx?;
        self.emit(EngineEvent::ContextReady {
            trigger_id: trigger_id.to_string(),
            gaze_mode: ctx.gaze_mode,
            primary_entities: ctx.primary_entities.clone(),
            peripheral_entities: ctx.peripheral_entities.clone(),
        });

        let best = match &trigger.fixation {
            Some(fx) => {
                let mid = fx.midpoint_ms();
                frames
                    .iter()
                    .min_by_key(|f| f.frame_t_ms.abs_diff(mid))
                    .expect("frames non-empty")
            }
            None => frames.last().expect("frames non-empty"),
        };
        let related: Vec<HistoryEntry> = match self.providers.text.embed_text(&ctx.summary()) {
            Ok(q) => {
                let store = self.history.lock().expect("history lock");
                store
                    .top_k(&q, self.config.thresholds.history_k)
                    .into_iter()
                    .cloned()
                    .collect()
            }
            Err(e) => {
                tracing::warn!(error = %e, "history query could not be embedded");
                Vec::new()
            }
        };
        let related_refs: Vec<&HistoryEntry> = related.iter().collect();
        let candidates = agents::generate_candidates(chat.as_ref(), &inputs, &ctx, best, &related_refs);
        self.flush_prompts(trigger_id);
        let candidates = candidates?;

        let selection = {
            let store = self.history.lock().expect("history lock");
            agents::score_filter_select(
                &candidates,
                &ctx,
                &store,
                self.providers.text.as_ref(),
                &self.config.selection(),
            )
        };
        self.emit(EngineEvent::CandidatesScored {
            trigger_id: trigger_id.to_string(),
            verdicts: selection.verdicts.clone(),
        });
        if selection.selected.is_empty() {
            self.skip(trigger_id, trigger.t_ms, "nothing_selected");
            return Ok(None);
        }

        let chosen: Vec<KnowledgeCandidate> = selection.selected.iter().map(|s| s.candidate.clone()).collect();
        let plain: Vec<ImagePart> = frames
            .iter()
            .map(|f| ImagePart {
                render_overlay: false,
                gaze_circles: Vec::new(),
                ..f.clone()
            })
            .collect();
        let (text, image) = agents::transform_and_locate(chat.as_ref(), &chosen, &self.language(), &plain);
        self.flush_prompts(trigger_id);
        let text = text?;
        let image = match image {
            Ok(i) => Some(i),
            Err(e) => {
                tracing::warn!(error = %e, "image reference unavailable");
                None
            }
        };
        let items = selection
            .selected
            .into_iter()
            .zip(text.items)
            .map(|(selected, output)| PreparedItem { selected, output })
            .collect();
        Ok(Some((ctx, items, image)))
    }

    fn commit(&mut self, p: Pending) {
        if p.trigger.kind.is_ai_initiated() && !self.control.system_on {
            self.skip(&p.trigger_id, self.now_ms, "system_off");
            return;
        }
        let threshold = self.config.thresholds.dedup_threshold;
        let session_id = self.rec.session_id.clone();
        let mut items = Vec::with_capacity(p.items.len());
        {
            let mut store = self.history.lock().expect("history lock");
            for it in p.items {
                let sim = store.max_similarity(&it.selected.embedding);
                if sim >= threshold {
                    tracing::info!(trigger_id = %p.trigger_id, sim, "item now duplicates history, dropped");
                    continue;
                }
                let id = format!("{}#{}", session_id, store.len() + 1);
                let entry = HistoryEntry {
                    id: id.clone(),
                    content: it.selected.candidate.content.clone(),
                    embedding: it.selected.embedding.clone(),
                    entities: it.selected.candidate.entities.clone(),
                    session_id: session_id.clone(),
                    t_ms: self.now_ms,
                    delivered: true,
                };
                if let Err(e) = store.add(entry) {
                    tracing::error!(error = %e, "history write failed, item dropped");
                    continue;
                }
                items.push(DeliveryItem {
                    candidate: it.selected.candidate,
                    output: it.output,
                    history_id: id,
                    max_history_similarity: sim,
                });
            }
        }
        if items.is_empty() {
            self.skip(&p.trigger_id, self.now_ms, "duplicate_at_commit");
            return;
        }
        let record = DeliveryRecord {
            id: format!("d{:04}", self.deliveries.len() + 1),
            trigger_id: p.trigger_id,
            trigger: p.trigger,
            gaze_mode: p.gaze_mode,
            items,
            image: p.image,
            delivered_at_ms: self.now_ms,
            canceled: false,
            canceled_at_ms: None,
            audio_suppressed: self.control.muted,
        };
        self.control.active_delivery = Some(record.id.clone());
        self.deliveries.push(record.clone());
        self.emit(EngineEvent::Delivery(Box::new(record)));
        self.emit_metrics();
    }
}

/// Everything a replay produces.
#[derive(Debug, Clone)]
pub struct ReplayOutput {
    pub deliveries: Vec<DeliveryRecord>,
    pub metrics: SessionMetrics,
    pub trace: Vec<EngineEvent>,
}

/// Replays a whole recording as fast as possible.
pub fn run_replay(
    rec: Arc<SessionRecording>,
    profile: UserProfile,
    config: EngineConfig,
    providers: Providers,
    history: Arc<Mutex<HistoryStore>>,
) -> ReplayOutput {
    let events = event_stream(&rec);
    let mut engine = Engine::new(rec, profile, config, providers, history);
    let mut trace = Vec::new();
    for ev in &events {
        engine.step(ev);
        trace.append(&mut engine.drain_events());
    }
    engine.finish();
    trace.append(&mut engine.drain_events());
    ReplayOutput {
        deliveries: engine.deliveries().to_vec(),
        metrics: engine.metrics(),
        trace,
    }
}

#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    v: u32,
    #[serde(flatten)]
    inner: &'a T,
}

/// One log or trace line: the value's fields plus a `v` version key.
pub fn versioned_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(&Versioned {
        v: LOG_VERSION,
        inner: value,
    })
    .expect("log records serialize")
}

pub fn write_jsonl<T: Serialize>(path: &Path, values: &[T]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in values {
        writeln!(f, "{}", versioned_line(v))?;
    }
    f.flush()
}

/// Reads a delivery log written by [`write_jsonl`].
pub fn read_delivery_log(path: &Path) -> Result<Vec<DeliveryRecord>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let mut v: serde_json::Value = serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1))?;
            match v.as_object_mut().and_then(|o| o.remove("v")).and_then(|v| v.as_u64()) {
                Some(n) if n == LOG_VERSION as u64 => {}
                other => return Err(format!("line {}: unsupported log version {other:?}", i + 1)),
            }
            serde_json::from_value(v).map_err(|e| format!("line {}: {e}", i + 1))
        })
        .collect()
}
