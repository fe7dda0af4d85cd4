//! Property tests for the stated invariants of each module.

mod common;

use std::sync::{Arc, Mutex};

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sidelight_core::agents::{score_filter_select, ContextDescription, Factors, GazeMode, KnowledgeCandidate, SelectionConfig};
use sidelight_core::attention::{detect_fixations, FixationDetector, FixationParams};
use sidelight_core::config::EngineConfig;
use sidelight_core::history::HistoryStore;
use sidelight_core::orchestrator::{run_replay, EngineEvent};
use sidelight_core::providers::{HashEmbedder, Providers};
use sidelight_core::session::{event_stream, CameraGeometry, GazeSample};
use sidelight_core::trigger::{TriggerParams, TriggerState};

fn ctx() -> ContextDescription {
    ContextDescription {
        activity: "a".into(),
        gaze_mode: GazeMode::QuickBrowse,
        primary_entities: vec!["x".into()],
        peripheral_entities: vec![],
        predicted_desires: vec![],
        familiarity_notes: vec![],
        raw_text: String::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trigger_matches_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stream = random_embedding_stream(&mut rng, 200);
        let mut state = TriggerState::new(TriggerParams::default());
        let mut got = Vec::new();
        for (t, v) in &stream {
            if let Some(ev) = state.on_frame_embedding(*t, emb(v)).unwrap() {
                got.push((ev.t_ms, ev.changed_pairs.unwrap()));
            }
            prop_assert!(state.current_window().count() <= 16);
            prop_assert!(state.reference_window().len() <= 16);
        }
        prop_assert_eq!(got, trigger_oracle(&stream, 16, 0.6, 13, 12_000));
    }

    #[test]
    fn fixations_respect_thresholds_and_chunking(seed in any::<u64>(), chunk in 1usize..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stream = random_gaze_stream(&mut rng, 600);
        let (geom, params) = (CameraGeometry::default(), FixationParams::default());
        let batch = detect_fixations(&stream, geom, params).unwrap();
        for w in batch.windows(2) {
            prop_assert!(w[0].end_ms < w[1].start_ms);
        }
        for f in &batch {
            prop_assert!(f.duration_ms() >= 1000 && f.dispersion_deg <= 4.91);
        }
        let mut det = FixationDetector::new(geom, params);
        let mut chunked = Vec::new();
        for part in stream.chunks(chunk) {
            chunked.extend(det.push_all(part.iter().copied()).unwrap());
        }
        chunked.extend(det.finish());
        prop_assert_eq!(&chunked, &batch);
        // filtering first changes nothing
        let kept: Vec<GazeSample> = stream.iter().copied().filter(|s| s.confidence >= params.min_confidence).collect();
        prop_assert_eq!(detect_fixations(&kept, geom, params).unwrap(), batch);
    }

    #[test]
    fn selection_caps_and_gates(bits in proptest::collection::vec(0u8..16, 0..8), mandatory in any::<bool>()) {
        let cands: Vec<KnowledgeCandidate> = bits
            .iter()
            .enumerate()
            .map(|(i, b)| KnowledgeCandidate::new(format!("fact number {i} about thing{i}"), Some(Factors::from_bits(*b))))
            .collect();
        let cfg = SelectionConfig { novelty_mandatory: mandatory, ..SelectionConfig::default() };
        let sel = score_filter_select(&cands, &ctx(), &HistoryStore::in_memory(), &HashEmbedder, &cfg);
        prop_assert!(sel.selected.len() <= 2);
        prop_assert_eq!(sel.verdicts.len(), cands.len());
        for s in &sel.selected {
            let f = s.candidate.factors.unwrap();
            prop_assert!(f.total() >= 2);
            prop_assert!(!mandatory || f.novelty == 1);
        }
        for w in sel.selected.windows(2) {
            prop_assert!(w[0].candidate.total >= w[1].candidate.total);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn event_stream_is_a_stable_merge(seed in any::<u64>()) {
        let mut rec = demo_session();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rec.gaze = random_gaze_stream(&mut rng, 300);
        let events = event_stream(&rec);
        prop_assert_eq!(events.len(), rec.frames.len() + rec.gaze.len() + rec.queries.len() + rec.buttons.len());
        let ts: Vec<u64> = events.iter().map(|e| e.t_ms(&rec)).collect();
        prop_assert!(ts.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn every_delivery_event_is_logged_once() {
    let config = EngineConfig::default();
    let out = run_replay(
        Arc::new(demo_session()),
        sample_profile(),
        config,
        Providers::mock(),
        Arc::new(Mutex::new(HistoryStore::in_memory())),
    );
    let on_wire: Vec<_> = out
        .trace
        .iter()
        .filter_map(|e| match e {
            EngineEvent::Delivery(r) => Some(r.id.clone()),
            _ => None,
        })
        .collect();
    let logged: Vec<_> = out.deliveries.iter().map(|r| r.id.clone()).collect();
    assert_eq!(on_wire, logged);
}
