//! Builds synthetic recordings: flat-shaded scenes, a roving gaze path
//! with optional dwell periods, and scripted queries and presses.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::session::{
    save_session, write_frame_image, ButtonEvent, CameraGeometry, Frame, GazeSample, ScriptedQuery,
    SessionError, SessionRecording, FRAMES_DIR,
};

/// Layouts whose thumbnails are pairwise orthogonal after mean removal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    LeftBright,
    TopBright,
    CenterBlock,
    Checker,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [Pattern::LeftBright, Pattern::TopBright, Pattern::CenterBlock, Pattern::Checker];

    fn bright(self, u: f64, v: f64) -> bool {
        match self {
            Pattern::LeftBright => u < 0.5,
            Pattern::TopBright => v < 0.5,
            Pattern::CenterBlock => (0.25..0.75).contains(&u) && (0.25..0.75).contains(&v),
            Pattern::Checker => ((u * 4.0) as u32 + (v * 4.0) as u32) % 2 == 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub start_ms: u64,
    pub pattern: Pattern,
    /// Becomes part of every frame file name in this scene.
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dwell {
    pub start_ms: u64,
    pub duration_ms: u64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub session_id: String,
    pub start_wallclock: String,
    pub location: String,
    pub duration_ms: u64,
    pub fps: f64,
    pub gaze_hz: f64,
    pub width: u32,
    pub height: u32,
    pub scenes: Vec<Scene>,
    pub dwells: Vec<Dwell>,
    pub queries: Vec<ScriptedQuery>,
    pub buttons: Vec<ButtonEvent>,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(session_id: &str, duration_ms: u64, seed: u64) -> Self {
        Self {
            session_id: session_id.to_string(),
            start_wallclock: "2024-05-18T15:30:00+08:00".to_string(),
            location: "city park".to_string(),
            duration_ms,
            fps: 4.0,
            gaze_hz: 30.0,
            width: 64,
            height: 48,
            scenes: vec![Scene {
                start_ms: 0,
                pattern: Pattern::LeftBright,
                label: "a".into(),
            }],
            dwells: Vec::new(),
            queries: Vec::new(),
            buttons: Vec::new(),
            seed,
        }
    }

    fn scene_at(&self, t_ms: u64) -> &Scene {
        self.scenes
            .iter()
            .rev()
            .find(|s| s.start_ms <= t_ms)
            .unwrap_or(&self.scenes[0])
    }
}

/// Renders one noisy frame of `pattern`.
pub fn render_pattern(pattern: Pattern, width: u32, height: u32, rng: &mut impl Rng) -> image::RgbImage {
    image::RgbImage::from_fn(width, height, |x, y| {
        let u = (x as f64 + 0.5) / width as f64;
        let v = (y as f64 + 0.5) / height as f64;
        let base: i32 = if pattern.bright(u, v) { 210 } else { 45 };
        let n = |rng: &mut dyn rand::RngCore| (base + rng.gen_range(-10..=10)).clamp(0, 255) as u8;
        image::Rgb([n(rng), n(rng), n(rng)])
    })
}

/// Position of the wandering gaze at `t_ms`: fast enough that no 1 s
/// stretch stays within a few degrees.
pub fn roving_gaze(t_ms: u64) -> (f64, f64) {
    let t = t_ms as f64 / 1000.0;
    let tau = std::f64::consts::TAU;
    (
        0.5 + 0.3 * (tau * t / 1.7).sin(),
        0.5 + 0.25 * (tau * t / 1.1 + 0.7).sin(),
    )
}

/// Writes the frames and streams described by `spec` into `dir` and
/// returns the loaded recording.
pub fn build_session(spec: &SynthSpec, dir: &Path) -> Result<SessionRecording, SessionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let frame_period = 1000.0 / spec.fps;
    let mut frames = Vec::new();
    let mut k = 0u64;
    loop {
        let t_ms = (k as f64 * frame_period).round() as u64;
        if t_ms > spec.duration_ms {
            break;
        }
        let scene = spec.scene_at(t_ms);
        let image_ref = format!("{FRAMES_DIR}/{}_{:07}.jpg", scene.label, t_ms);
        let img = render_pattern(scene.pattern, spec.width, spec.height, &mut rng);
        write_frame_image(&dir.join(&image_ref), &img)?;
        frames.push(Frame {
            t_ms,
            image_ref,
            width_px: spec.width,
            height_px: spec.height,
        });
        k += 1;
    }

    let gaze_period = 1000.0 / spec.gaze_hz;
    let mut gaze = Vec::new();
    let mut k = 0u64;
    loop {
        let t_ms = (k as f64 * gaze_period).round() as u64;
        if t_ms > spec.duration_ms {
            break;
        }
        let (x, y) = match spec
            .dwells
            .iter()
            .find(|d| (d.start_ms..d.start_ms + d.duration_ms).contains(&t_ms))
        {
            Some(d) => (
                d.x + rng.gen_range(-0.004..0.004),
                d.y + rng.gen_range(-0.004..0.004),
            ),
            None => roving_gaze(t_ms),
        };
        gaze.push(GazeSample::new(t_ms, x.clamp(0.0, 1.0), y.clamp(0.0, 1.0), 1.0));
        k += 1;
    }

    let rec = SessionRecording {
        session_id: spec.session_id.clone(),
        start_wallclock: chrono::DateTime::parse_from_rfc3339(&spec.start_wallclock)
            .map_err(|e| SessionError::MalformedManifest(e.to_string()))?,
        location: spec.location.clone(),
        geometry: CameraGeometry::default(),
        fps_hint: Some(spec.fps),
        frames,
        gaze,
        queries: spec.queries.clone(),
        buttons: spec.buttons.clone(),
        root: dir.to_path_buf(),
    };
    save_session(&rec, dir)?;
    crate::session::load_session(dir)
}
