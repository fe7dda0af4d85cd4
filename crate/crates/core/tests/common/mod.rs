//! Shared test support: brute-force oracles, random stream generators,
//! fixture loading and scripted control scenarios.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::Rng;
use sidelight_core::agents::{
    context_request, knowledge_request, AgentInputs, ContextDescription, GazeMode, PipelineVariant,
};
use sidelight_core::attention::{FixationEvent, FixationParams};
use sidelight_core::config::EngineConfig;
use sidelight_core::orchestrator::{run_replay, EngineEvent, ReplayOutput};
use sidelight_core::history::HistoryEntry;
use sidelight_core::providers::{Embedding, ImagePart};
use sidelight_core::session::{
    load_profile, load_session, Button, ButtonEvent, CameraGeometry, GazeSample, SessionRecording,
    UserProfile,
};
use sidelight_core::trigger::{TriggerEvent, TriggerKind};
use sidelight_core::HistoryStore;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn demo_session() -> SessionRecording {
    load_session(fixtures_dir().join("demo_session")).expect("demo session loads")
}

pub fn sample_profile() -> UserProfile {
    load_profile(fixtures_dir().join("profiles/sample.json")).expect("sample profile loads")
}

pub fn demo_script() -> PathBuf {
    fixtures_dir().join("demo_session/mock_chat.json")
}

/// Replays `rec` on scripted mock providers with a fresh in-memory history.
pub fn replay_scripted(rec: SessionRecording, config: EngineConfig) -> ReplayOutput {
    let providers = config
        .build_providers(true, Some(&demo_script()))
        .expect("mock providers");
    run_replay(
        Arc::new(rec),
        sample_profile(),
        config,
        providers,
        Arc::new(Mutex::new(HistoryStore::in_memory())),
    )
}

// ---------- vector helpers ----------

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if dot(&v, &v) > 1e-3 {
            return unit(v);
        }
    }
}

pub fn emb(v: &[f64]) -> Embedding {
    Embedding::normalized(v.to_vec()).expect("non-zero vector")
}

// ---------- trigger oracle ----------

/// Frame-embedding stream with scene changes of varying abruptness, so
/// that pair counts land on both sides of the firing threshold.
pub fn random_embedding_stream(rng: &mut impl Rng, len: usize) -> Vec<(u64, Vec<f64>)> {
    let dim = 6;
    let mut scene = random_unit(rng, dim);
    let mut t = 0u64;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        if rng.gen_bool(0.06) {
            scene = random_unit(rng, dim);
        }
        let v = if rng.gen_bool(0.15) {
            random_unit(rng, dim)
        } else {
            let noise = rng.gen_range(0.0..0.9);
            let r = random_unit(rng, dim);
            unit(scene.iter().zip(&r).map(|(s, n)| s + noise * n).collect())
        };
        out.push((t, v));
        t += rng.gen_range(150..700);
    }
    out
}

/// Recomputes every window from scratch at every step. The first full
/// window becomes the reference; each firing replaces it.
pub fn trigger_oracle(
    stream: &[(u64, Vec<f64>)],
    window: usize,
    threshold: f64,
    required: usize,
    interval_ms: u64,
) -> Vec<(u64, usize)> {
    let mut reference: Option<Vec<Vec<f64>>> = None;
    let mut last: Option<u64> = None;
    let mut fires = Vec::new();
    for i in 0..stream.len() {
        if i + 1 < window {
            continue;
        }
        let current: Vec<Vec<f64>> = stream[i + 1 - window..=i].iter().map(|(_, v)| v.clone()).collect();
        let t = stream[i].0;
        let Some(r) = &reference else {
            reference = Some(current);
            continue;
        };
        let changed = (0..window).filter(|&j| dot(&r[j], &current[j]) < threshold).count();
        let spaced = last.map_or(true, |l| t - l >= interval_ms);
        if changed >= required && spaced {
            fires.push((t, changed));
            reference = Some(current);
            last = Some(t);
        }
    }
    fires
}

// ---------- fixation oracle ----------

/// Gaze stream mixing dwells of random length and spread, wandering
/// stretches and low-confidence dropouts.
pub fn random_gaze_stream(rng: &mut impl Rng, len: usize) -> Vec<GazeSample> {
    let mut out = Vec::with_capacity(len);
    let mut t = 0u64;
    while out.len() < len {
        let dwell = rng.gen_bool(0.5);
        let n = rng.gen_range(5..90);
        let (cx, cy): (f64, f64) = (rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9));
        let spread: f64 = if dwell { rng.gen_range(0.0..0.03) } else { rng.gen_range(0.02..0.3) };
        for _ in 0..n {
            if out.len() == len {
                break;
            }
            let x = (cx + rng.gen_range(-spread..=spread)).clamp(0.0, 1.0);
            let y = (cy + rng.gen_range(-spread..=spread)).clamp(0.0, 1.0);
            let confidence = if rng.gen_bool(0.05) { rng.gen_range(0.0..0.6) } else { rng.gen_range(0.6..=1.0) };
            out.push(GazeSample::new(t, x, y, confidence));
            t += rng.gen_range(20..45);
        }
    }
    out
}

fn extent_deg(samples: &[GazeSample], geom: &CameraGeometry) -> f64 {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for s in samples {
        x0 = x0.min(s.x);
        x1 = x1.max(s.x);
        y0 = y0.min(s.y);
        y1 = y1.max(s.y);
    }
    (x1 - x0) * geom.hfov_deg + (y1 - y0) * geom.vfov_deg
}

/// For every start index, finds the longest window within the dispersion
/// limit; takes the earliest qualifying one, then continues after it.
pub fn fixation_oracle(samples: &[GazeSample], geom: CameraGeometry, p: FixationParams) -> Vec<FixationEvent> {
    let kept: Vec<GazeSample> = samples.iter().copied().filter(|s| s.confidence >= p.min_confidence).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < kept.len() {
        let mut end = i;
        while end + 1 < kept.len() && extent_deg(&kept[i..=end + 1], &geom) <= p.max_dispersion_deg {
            end += 1;
        }
        let w = &kept[i..=end];
        if w[w.len() - 1].t_ms - w[0].t_ms >= p.min_duration_ms {
            let n = w.len() as f64;
            out.push(FixationEvent {
                start_ms: w[0].t_ms,
                end_ms: w[w.len() - 1].t_ms,
                centroid: (w.iter().map(|s| s.x).sum::<f64>() / n, w.iter().map(|s| s.y).sum::<f64>() / n),
                dispersion_deg: extent_deg(w, &geom),
                sample_count: w.len(),
            });
            i = end + 1;
        } else {
            i += 1;
        }
    }
    out
}

pub fn same_fixation(a: &FixationEvent, b: &FixationEvent) -> bool {
    a.start_ms == b.start_ms
        && a.end_ms == b.end_ms
        && a.sample_count == b.sample_count
        && (a.centroid.0 - b.centroid.0).abs() < 1e-9
        && (a.centroid.1 - b.centroid.1).abs() < 1e-9
        && (a.dispersion_deg - b.dispersion_deg).abs() < 1e-9
}

// ---------- retrieval oracle ----------

/// Ids of the `k` most similar vectors; equal scores favour later inserts.
pub fn top_k_oracle(store: &[(String, Vec<f64>)], q: &[f64], k: usize) -> Vec<(String, f64)> {
    let mut scored: Vec<(usize, f64)> = store.iter().enumerate().map(|(i, (_, v))| (i, dot(q, v))).collect();
    // selection by repeated maximum, no sort
    let mut out = Vec::new();
    while out.len() < k && !scored.is_empty() {
        let mut best = 0;
        for j in 1..scored.len() {
            let (bi, bs) = scored[best];
            let (ji, js) = scored[j];
            if js > bs || (js == bs && ji > bi) {
                best = j;
            }
        }
        let (i, s) = scored.remove(best);
        out.push((store[i].0.clone(), s));
    }
    out
}

// ---------- control scenarios ----------

/// One expected delivery: trigger kind, time of cancel (if any) and
/// whether audio was muted.
#[derive(Debug, Clone, PartialEq)]
pub struct Expect {
    pub kind: TriggerKind,
    pub canceled_at: Option<u64>,
    pub muted: bool,
}

pub fn d(kind: TriggerKind) -> Expect {
    Expect {
        kind,
        canceled_at: None,
        muted: false,
    }
}

impl Expect {
    pub fn canceled(mut self, t: u64) -> Self {
        self.canceled_at = Some(t);
        self
    }
    pub fn muted(mut self) -> Self {
        self.muted = true;
        self
    }
}

pub struct Scenario {
    pub name: &'static str,
    pub buttons: Vec<ButtonEvent>,
    pub job_latency_ms: u64,
    pub expect: Vec<Expect>,
    /// Extra check over the full event trace.
    pub check: fn(&[EngineEvent]) -> Result<(), String>,
}

fn ok(_: &[EngineEvent]) -> Result<(), String> {
    Ok(())
}

fn count<F: Fn(&EngineEvent) -> bool>(trace: &[EngineEvent], f: F) -> usize {
    trace.iter().filter(|e| f(e)).count()
}

fn b(button: Button, t: u64) -> ButtonEvent {
    ButtonEvent::new(button, t)
}

use TriggerKind::{ConstantSensing as CS, Fixation as FX, UserQuery as UQ};

/// Demo-session deliveries happen at 43.75 s and 103 s (scene changes),
/// 130.5 s (fixation) and 160 s (query).
pub fn scenarios() -> Vec<Scenario> {
    vec![
        Scenario {
            name: "no presses",
            buttons: vec![],
            job_latency_ms: 0,
            expect: vec![d(CS), d(CS), d(FX), d(UQ)],
            check: |t| {
                (count(t, |e| matches!(e, EngineEvent::StateChanged { .. })) == 0)
                    .then_some(())
                    .ok_or("unexpected state change".into())
            },
        },
        Scenario {
            name: "up with no delivery is a no-op",
            buttons: vec![b(Button::Up, 10_000)],
            job_latency_ms: 0,
            expect: vec![d(CS), d(CS), d(FX), d(UQ)],
            check: |t| {
                (count(t, |e| matches!(e, EngineEvent::Canceled { .. })) == 0)
                    .then_some(())
                    .ok_or("cancel emitted".into())
            },
        },
        Scenario {
            name: "up cancels the active delivery",
            buttons: vec![b(Button::Up, 50_000)],
            job_latency_ms: 0,
            expect: vec![d(CS).canceled(50_000), d(CS), d(FX), d(UQ)],
            check: ok,
        },
        Scenario {
            name: "second up is a no-op",
            buttons: vec![b(Button::Up, 50_000), b(Button::Up, 51_000)],
            job_latency_ms: 0,
            expect: vec![d(CS).canceled(50_000), d(CS), d(FX), d(UQ)],
            check: |t| {
                (count(t, |e| matches!(e, EngineEvent::Canceled { .. })) == 1)
                    .then_some(())
                    .ok_or("expected exactly one cancel".into())
            },
        },
        Scenario {
            name: "up cancels only the latest delivery",
            buttons: vec![b(Button::Up, 131_000)],
            job_latency_ms: 0,
            expect: vec![d(CS), d(CS), d(FX).canceled(131_000), d(UQ)],
            check: ok,
        },
        Scenario {
            name: "two cancels in different windows",
            buttons: vec![b(Button::Up, 50_000), b(Button::Up, 110_000)],
            job_latency_ms: 0,
            expect: vec![d(CS).canceled(50_000), d(CS).canceled(110_000), d(FX), d(UQ)],
            check: ok,
        },
        Scenario {
            name: "up at the delivery instant cancels it",
            buttons: vec![b(Button::Up, 43_750)],
            job_latency_ms: 0,
            expect: vec![d(CS).canceled(43_750), d(CS), d(FX), d(UQ)],
            check: ok,
        },
        Scenario {
            name: "cancel a query delivery",
            buttons: vec![b(Button::Up, 170_000)],
            job_latency_ms: 0,
            expect: vec![d(CS), d(CS), d(FX), d(UQ).canceled(170_000)],
            check: ok,
        },
        Scenario {
            name: "mute then deliveries",
            buttons: vec![b(Button::Left, 10_000)],
            job_latency_ms: 0,
            expect: vec![d(CS).muted(), d(CS).muted(), d(FX).muted(), d(UQ).muted()],
            check: |t| match t.iter().find(|e| matches!(e, EngineEvent::StateChanged { .. })) {
                Some(EngineEvent::StateChanged {
                    t_ms: 10_000,
                    system_on: true,
                    muted: true,
                }) => Ok(()),
                other => Err(format!("unexpected {other:?}")),
            },
        },
        Scenario {
            name: "mute and unmute",
            buttons: vec![b(Button::Left, 10_000), b(Button::Left, 60_000)],
            job_latency_ms: 0,
            expect: vec![d(CS).muted(), d(CS), d(FX), d(UQ)],
            check: ok,
        },
        Scenario {
            name: "mute mid-session",
            buttons: vec![b(Button::Left, 100_000)],
            job_latency_ms: 0,
            expect: vec![d(CS), d(CS).muted(), d(FX).muted(), d(UQ).muted()],
            check: ok,
        },
        Scenario {
            name: "muted up still cancels",
            buttons: vec![b(Button::Left, 10_000), b(Button::Up, 50_000)],
            job_latency_ms: 0,
            expect: vec![d(CS).muted().canceled(50_000), d(CS).muted(), d(FX).muted(), d(UQ).muted()],
            check: ok,
        },
        Scenario {
            name: "off then query",
            buttons: vec![b(Button::Bottom, 10_000)],
            job_latency_ms: 0,
            expect: vec![d(UQ)],
            check: |t| {
                let triggers = count(t, |e| matches!(e, EngineEvent::Trigger { .. }));
                (triggers == 1).then_some(()).ok_or(format!("{triggers} triggers while off"))
            },
        },
        Scenario {
            name: "off then up has nothing to cancel",
            buttons: vec![b(Button::Bottom, 10_000), b(Button::Up, 50_000)],
            job_latency_ms: 0,
            expect: vec![d(UQ)],
            check: |t| {
                (count(t, |e| matches!(e, EngineEvent::Canceled { .. })) == 0)
                    .then_some(())
                    .ok_or("cancel emitted".into())
            },
        },
        Scenario {
            name: "quick off-on toggle changes nothing",
            buttons: vec![b(Button::Bottom, 10_000), b(Button::Bottom, 11_000)],
            job_latency_ms: 0,
            expect: vec![d(CS), d(CS), d(FX), d(UQ)],
            check: |t| {
                (count(t, |e| matches!(e, EngineEvent::StateChanged { .. })) == 2)
                    .then_some(())
                    .ok_or("expected two state changes".into())
            },
        },
        Scenario {
            name: "back on resumes sensing and spaces the fixation out",
            buttons: vec![b(Button::Bottom, 10_000), b(Button::Bottom, 120_000)],
            job_latency_ms: 0,
            // the frozen window still holds the first scene, so the garden
            // fires right after resuming and the 130.5 s fixation is inside 12 s
            expect: vec![d(CS), d(UQ)],
            check: |t| {
                let at = t.iter().find_map(|e| match e {
                    EngineEvent::Delivery(r) if r.trigger.kind == TriggerKind::ConstantSensing => Some(r.delivered_at_ms),
                    _ => None,
                });
                match at {
                    Some(ms) if (120_000..130_500).contains(&ms) => Ok(()),
                    other => Err(format!("sensing delivery at {other:?}")),
                }
            },
        },
        Scenario {
            name: "off after the fixation delivery, cancel while off",
            buttons: vec![b(Button::Bottom, 150_000), b(Button::Up, 155_000)],
            job_latency_ms: 0,
            expect: vec![d(CS), d(CS), d(FX).canceled(155_000), d(UQ)],
            check: ok,
        },
        Scenario {
            name: "right button with a query",
            buttons: vec![ButtonEvent::query(70_000, "what flower is that?")],
            job_latency_ms: 0,
            // the 160 s query then repeats the same answer and is deduplicated away
            expect: vec![d(CS), d(UQ), d(CS), d(FX)],
            check: |t| {
                let skipped = t.iter().any(|e| matches!(e, EngineEvent::JobSkipped { t_ms: 160_000, reason, .. } if reason == "nothing_selected"));
                skipped.then_some(()).ok_or("second query was not skipped".into())
            },
        },
        Scenario {
            name: "right button without text is rejected",
            buttons: vec![b(Button::Right, 70_000)],
            job_latency_ms: 0,
            expect: vec![d(CS), d(CS), d(FX), d(UQ)],
            check: |t| {
                (count(t, |e| matches!(e, EngineEvent::TriggerSuppressed { kind: TriggerKind::UserQuery, .. })) == 1)
                    .then_some(())
                    .ok_or("missing suppression".into())
            },
        },
        Scenario {
            name: "empty query is rejected",
            buttons: vec![ButtonEvent::query(70_000, "   ")],
            job_latency_ms: 0,
            expect: vec![d(CS), d(CS), d(FX), d(UQ)],
            check: |t| {
                (count(t, |e| matches!(e, EngineEvent::TriggerSuppressed { kind: TriggerKind::UserQuery, .. })) == 1)
                    .then_some(())
                    .ok_or("missing suppression".into())
            },
        },
        Scenario {
            name: "query during a running job is suppressed",
            buttons: vec![ButtonEvent::query(45_000, "what flower is that?")],
            job_latency_ms: 3_000,
            expect: vec![d(CS), d(CS), d(FX), d(UQ)],
            check: |t| {
                let hit = t.iter().any(|e| matches!(e, EngineEvent::TriggerSuppressed { kind: TriggerKind::UserQuery, t_ms: 45_000, reason } if reason == "job_in_flight"));
                hit.then_some(()).ok_or("query was not suppressed".into())
            },
        },
        Scenario {
            name: "turning off drops a running sensing job",
            buttons: vec![b(Button::Bottom, 45_000)],
            job_latency_ms: 3_000,
            expect: vec![d(UQ)],
            check: |t| {
                let hit = t.iter().any(|e| matches!(e, EngineEvent::JobSkipped { reason, .. } if reason == "system_off"));
                hit.then_some(()).ok_or("job was not dropped".into())
            },
        },
        Scenario {
            name: "up before a running job lands is a no-op",
            buttons: vec![b(Button::Up, 45_000)],
            job_latency_ms: 3_000,
            expect: vec![d(CS), d(CS), d(FX), d(UQ)],
            check: |t| match t.iter().find_map(|e| match e {
                EngineEvent::Delivery(r) => Some(r.delivered_at_ms),
                _ => None,
            }) {
                Some(46_750) => Ok(()),
                other => Err(format!("first delivery at {other:?}")),
            },
        },
    ]
}

/// Runs one scenario on the demo session and compares the delivery log.
pub fn run_scenario(s: &Scenario) -> Result<(), String> {
    let mut rec = demo_session();
    rec.buttons = s.buttons.clone();
    let mut config = EngineConfig::default();
    config.run.job_latency_ms = s.job_latency_ms;
    let out = replay_scripted(rec, config);
    let got: Vec<Expect> = out
        .deliveries
        .iter()
        .map(|r| Expect {
            kind: r.trigger.kind,
            canceled_at: r.canceled_at_ms,
            muted: r.audio_suppressed,
        })
        .collect();
    if got != s.expect {
        return Err(format!("deliveries {got:?}, expected {:?}", s.expect));
    }
    if let Some(r) = out.deliveries.iter().find(|r| r.canceled != r.canceled_at_ms.is_some()) {
        return Err(format!("{} has inconsistent cancel fields", r.id));
    }
    (s.check)(&out.trace)
}

// ---------- golden prompts ----------

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn golden_name(variant: PipelineVariant, stage: &str) -> String {
    format!("{}_{stage}.txt", variant.name())
}

/// Context and knowledge prompts for every variant, rendered from fixed
/// inputs: (variant, stage, text).
pub fn golden_prompts() -> Vec<(PipelineVariant, &'static str, String)> {
    let profile = sample_profile();
    let fixation = FixationEvent {
        start_ms: 129_000,
        end_ms: 130_467,
        centroid: (0.52, 0.47),
        dispersion_deg: 1.69,
        sample_count: 45,
    };
    let trigger = TriggerEvent {
        kind: TriggerKind::Fixation,
        t_ms: 130_500,
        evidence_frames: vec![130_000, 130_500],
        query_text: None,
        fixation: Some(fixation),
        changed_pairs: None,
    };
    let frames: Vec<ImagePart> = [130_000u64, 130_500]
        .iter()
        .map(|t| ImagePart {
            frame_t_ms: *t,
            image_ref: format!("frames/c_{t:07}.jpg"),
            path: PathBuf::from(format!("frames/c_{t:07}.jpg")),
            gaze_circles: vec![(0.52, 0.47)],
            render_overlay: true,
        })
        .collect();
    let ctx = ContextDescription {
        activity: "resting on a bench by the garden".into(),
        gaze_mode: GazeMode::Focused,
        primary_entities: vec!["sundial".into()],
        peripheral_entities: vec!["red spider lily".into()],
        predicted_desires: vec!["know what the sundial shows".into()],
        familiarity_notes: vec![],
        raw_text: String::new(),
    };
    let history = [HistoryEntry {
        id: "demo#1".into(),
        content: "Red spider lilies flower on bare stems; their leaves only appear after the blooms fade.".into(),
        embedding: Embedding::basis(4, 0),
        entities: vec!["red spider lily".into()],
        session_id: "demo".into(),
        t_ms: 103_000,
        delivered: true,
    }];
    let history_refs: Vec<&HistoryEntry> = history.iter().collect();
    let mut out = Vec::new();
    for variant in PipelineVariant::ALL {
        let inputs = AgentInputs {
            variant,
            profile: &profile,
            wallclock: "2024-05-18T15:32:10+08:00",
            location: "city park",
            trigger: &trigger,
        };
        out.push((variant, "context", context_request(&inputs, &frames).joined_text()));
        out.push((
            variant,
            "knowledge",
            knowledge_request(&inputs, &ctx, &frames[1], &history_refs).joined_text(),
        ));
    }
    out
}
