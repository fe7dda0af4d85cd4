//! JSON shapes sent over the service's WebSocket and HTTP endpoints.

use serde_json::{json, Value};
use sidelight_core::orchestrator::{EngineEvent, LOG_VERSION};

/// Wire protocol version carried as `v` on every message.
pub const WIRE_VERSION: u32 = LOG_VERSION;

pub fn frame_url(session_id: &str, image_ref: &str) -> String {
    format!("/sessions/{session_id}/{image_ref}")
}

/// One WebSocket message: the engine event plus `v`, `seq` and resolved
/// frame URLs.
pub fn wire_event(seq: u64, session_id: &str, ev: &EngineEvent) -> Value {
    let mut v = serde_json::to_value(ev).expect("engine events serialize");
    let obj = v.as_object_mut().expect("engine events are objects");
    obj.insert("v".into(), json!(WIRE_VERSION));
    obj.insert("seq".into(), json!(seq));
    match ev {
        EngineEvent::FrameTick { image_ref, .. } => {
            obj.insert("frame_url".into(), json!(frame_url(session_id, image_ref)));
        }
        EngineEvent::Delivery(rec) => {
            if let Some(img) = &rec.image {
                obj.insert("image_url".into(), json!(frame_url(session_id, &img.image_ref)));
            }
        }
        _ => {}
    }
    v
}

/// Terminal message sent once a run has no more events.
pub fn finished_event(seq: u64) -> Value {
    json!({"v": WIRE_VERSION, "seq": seq, "type": "RunFinished"})
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_ticks_carry_urls() {
        let ev = EngineEvent::FrameTick {
            t_ms: 250,
            frame_index: 1,
            image_ref: "frames/a_0000250.jpg".into(),
            gaze_circles: vec![(0.5, 0.5)],
        };
        let v = wire_event(7, "s1", &ev);
        assert_eq!(v["type"], "FrameTick");
        assert_eq!(v["seq"], 7);
        assert_eq!(v["v"], 1);
        assert_eq!(v["frame_url"], "/sessions/s1/frames/a_0000250.jpg");
        assert_eq!(v["gaze_circles"][0][0], 0.5);
    }
}
