//! On-disk session recordings and user profiles.
//!
//! A session directory looks like:
//!
//! ```text
//! session/
//!   manifest.json     session_id, start_wallclock, location, geometry, fps hint, frame index
//!   frames/000000.jpg
//!   gaze.jsonl        one GazeSample per line
//!   queries.jsonl     optional, one {"t_ms", "text"} per line
//!   buttons.jsonl     optional, scripted ring-button presses for replay
//! ```
//!
//! Loaders reject malformed input; they never sort or repair it.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GAZE_FILE: &str = "gaze.jsonl";
pub const QUERIES_FILE: &str = "queries.jsonl";
pub const BUTTONS_FILE: &str = "buttons.jsonl";
pub const FRAMES_DIR: &str = "frames";

/// Current manifest schema version.
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("missing manifest: {0}")]
    MissingManifest(PathBuf),
    #[error("missing required file: {0}")]
    MissingFile(PathBuf),
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("corrupt frame {path}: {reason}")]
    CorruptFrame { path: PathBuf, reason: String },
    #[error("unsorted timestamps in {stream}: t={t_ms} follows t={prev_ms} (line {line})")]
    UnsortedTimestamps {
        stream: &'static str,
        line: usize,
        prev_ms: u64,
        t_ms: u64,
    },
    #[error("invalid record in {file} line {line}: {reason}")]
    InvalidRecord {
        file: &'static str,
        line: usize,
        reason: String,
    },
    #[error("empty session: {0}")]
    EmptySession(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile has no values/interests")]
    EmptyInterests,
    #[error("malformed profile: {0}")]
    MalformedProfile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub t_ms: u64,
    pub x: f64,
    pub y: f64,
    #[serde(default = "full_confidence")]
    pub confidence: f64,
}

fn full_confidence() -> f64 {
    1.0
}

impl GazeSample {
    pub fn new(t_ms: u64, x: f64, y: f64, confidence: f64) -> Self {
        Self {
            t_ms,
            x,
            y,
            confidence,
        }
    }

    fn check(&self) -> Result<(), String> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.x) || !unit(self.y) {
            return Err(format!("gaze position ({}, {}) outside [0,1]", self.x, self.y));
        }
        if !unit(self.confidence) {
            return Err(format!("confidence {} outside [0,1]", self.confidence));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub t_ms: u64,
    /// Path relative to the session directory.
    pub image_ref: String,
    pub width_px: u32,
    pub height_px: u32,
}

/// Angular size of the world camera, used to convert normalized gaze
/// extents into degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraGeometry {
    pub hfov_deg: f64,
    pub vfov_deg: f64,
}

impl Default for CameraGeometry {
    fn default() -> Self {
        Self {
            hfov_deg: 139.0,
            vfov_deg: 83.0,
        }
    }
}

impl CameraGeometry {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("hfov_deg", self.hfov_deg), ("vfov_deg", self.vfov_deg)] {
            if !(v > 0.0 && v < 180.0) {
                return Err(format!("{name}={v} must lie in (0, 180)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedQuery {
    pub t_ms: u64,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Button {
    Up,
    Left,
    Bottom,
    Right,
}

/// A ring-mouse press. `Right` carries the spoken query when replayed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ButtonEvent {
    pub button: Button,
    pub t_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_text: Option<String>,
}

impl ButtonEvent {
    pub fn new(button: Button, t_ms: u64) -> Self {
        Self {
            button,
            t_ms,
            query_text: None,
        }
    }

    pub fn query(t_ms: u64, text: impl Into<String>) -> Self {
        Self {
            button: Button::Right,
            t_ms,
            query_text: Some(text.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecording {
    pub session_id: String,
    pub start_wallclock: chrono::DateTime<chrono::FixedOffset>,
    pub location: String,
    pub geometry: CameraGeometry,
    pub fps_hint: Option<f64>,
    pub frames: Vec<Frame>,
    pub gaze: Vec<GazeSample>,
    pub queries: Vec<ScriptedQuery>,
    pub buttons: Vec<ButtonEvent>,
    /// Directory frame references resolve against. Not part of the recording's identity.
    #[serde(skip)]
    pub root: PathBuf,
}

impl SessionRecording {
    pub fn frame_path(&self, frame: &Frame) -> PathBuf {
        self.root.join(&frame.image_ref)
    }

    pub fn start_ms(&self) -> u64 {
        self.timestamps().min().unwrap_or(0)
    }

    pub fn end_ms(&self) -> u64 {
        self.timestamps().max().unwrap_or(0)
    }

    pub fn duration_ms(&self) -> u64 {
        self.end_ms() - self.start_ms()
    }

    fn timestamps(&self) -> impl Iterator<Item = u64> + '_ {
        self.frames
            .iter()
            .map(|f| f.t_ms)
            .chain(self.gaze.iter().map(|g| g.t_ms))
            .chain(self.queries.iter().map(|q| q.t_ms))
            .chain(self.buttons.iter().map(|b| b.t_ms))
    }

    /// Checks every recording invariant except image decodability.
    pub fn validate(&self) -> Result<(), SessionError> {
        self.geometry
            .validate()
            .map_err(SessionError::MalformedManifest)?;
        if self.frames.is_empty() {
            return Err(SessionError::EmptySession("no frames".into()));
        }
        check_sorted("frames", self.frames.iter().map(|f| f.t_ms))?;
        check_sorted("gaze", self.gaze.iter().map(|g| g.t_ms))?;
        check_sorted("queries", self.queries.iter().map(|q| q.t_ms))?;
        check_sorted("buttons", self.buttons.iter().map(|b| b.t_ms))?;
        for (i, g) in self.gaze.iter().enumerate() {
            g.check().map_err(|reason| SessionError::InvalidRecord {
                file: GAZE_FILE,
                line: i + 1,
                reason,
            })?;
        }
        for (i, q) in self.queries.iter().enumerate() {
            if q.text.trim().is_empty() {
                return Err(SessionError::InvalidRecord {
                    file: QUERIES_FILE,
                    line: i + 1,
                    reason: "empty query text".into(),
                });
            }
        }
        for (i, b) in self.buttons.iter().enumerate() {
            if b.button == Button::Right && b.query_text.as_deref().map_or(true, |t| t.trim().is_empty()) {
                return Err(SessionError::InvalidRecord {
                    file: BUTTONS_FILE,
                    line: i + 1,
                    reason: "right button requires query_text in replay".into(),
                });
            }
        }
        if self.duration_ms() == 0 {
            return Err(SessionError::EmptySession("duration is zero".into()));
        }
        Ok(())
    }
}

fn check_sorted(stream: &'static str, ts: impl Iterator<Item = u64>) -> Result<(), SessionError> {
    let mut prev: Option<u64> = None;
    for (i, t) in ts.enumerate() {
        if let Some(p) = prev {
            if t < p {
                return Err(SessionError::UnsortedTimestamps {
                    stream,
                    line: i + 1,
                    prev_ms: p,
                    t_ms: t,
                });
            }
        }
        prev = Some(t);
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    #[serde(default = "manifest_version")]
    version: u32,
    session_id: String,
    start_wallclock: chrono::DateTime<chrono::FixedOffset>,
    location: String,
    #[serde(default)]
    geometry: CameraGeometry,
    #[serde(default)]
    fps_hint: Option<f64>,
    frames: Vec<Frame>,
}

fn manifest_version() -> u32 {
    MANIFEST_VERSION
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SessionError + '_ {
    move |source| SessionError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(
    path: &Path,
    file: &'static str,
) -> Result<Vec<T>, SessionError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| SessionError::InvalidRecord {
            file,
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn read_optional_jsonl<T: for<'de> Deserialize<'de>>(
    dir: &Path,
    file: &'static str,
) -> Result<Vec<T>, SessionError> {
    let path = dir.join(file);
    if path.exists() {
        read_jsonl(&path, file)
    } else {
        Ok(Vec::new())
    }
}

fn check_frame_image(root: &Path, frame: &Frame) -> Result<(), SessionError> {
    let path = root.join(&frame.image_ref);
    let corrupt = |reason: String| SessionError::CorruptFrame {
        path: path.clone(),
        reason,
    };
    if !path.is_file() {
        return Err(corrupt("file not found".into()));
    }
    let img = image::open(&path).map_err(|e| corrupt(e.to_string()))?;
    if img.width() != frame.width_px || img.height() != frame.height_px {
        return Err(corrupt(format!(
            "decoded {}x{}, manifest says {}x{}",
            img.width(),
            img.height(),
            frame.width_px,
            frame.height_px
        )));
    }
    Ok(())
}

/// Loads and validates a session directory.
pub fn load_session(dir: impl AsRef<Path>) -> Result<SessionRecording, SessionError> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(SessionError::MissingManifest(manifest_path));
    }
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| SessionError::MalformedManifest(e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(SessionError::MalformedManifest(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }

    let gaze_path = dir.join(GAZE_FILE);
    if !gaze_path.is_file() {
        return Err(SessionError::MissingFile(gaze_path));
    }
    let gaze = read_jsonl(&gaze_path, GAZE_FILE)?;
    let queries = read_optional_jsonl(dir, QUERIES_FILE)?;
    let buttons = read_optional_jsonl(dir, BUTTONS_FILE)?;

    let rec = SessionRecording {
        session_id: manifest.session_id,
        start_wallclock: manifest.start_wallclock,
        location: manifest.location,
        geometry: manifest.geometry,
        fps_hint: manifest.fps_hint,
        frames: manifest.frames,
        gaze,
        queries,
        buttons,
        root: dir.to_path_buf(),
    };
    rec.validate()?;
    for frame in &rec.frames {
        check_frame_image(dir, frame)?;
    }
    Ok(rec)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), SessionError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("session records serialize");
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(io_err(path))
}

/// Writes `rec` into `dir`, copying frame images from `rec.root` when the
/// two directories differ.
pub fn save_session(rec: &SessionRecording, dir: impl AsRef<Path>) -> Result<(), SessionError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join(FRAMES_DIR)).map_err(io_err(dir))?;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        session_id: rec.session_id.clone(),
        start_wallclock: rec.start_wallclock,
        location: rec.location.clone(),
        geometry: rec.geometry,
        fps_hint: rec.fps_hint,
        frames: rec.frames.clone(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
    write_jsonl(&dir.join(GAZE_FILE), &rec.gaze)?;
    if !rec.queries.is_empty() {
        write_jsonl(&dir.join(QUERIES_FILE), &rec.queries)?;
    }
    if !rec.buttons.is_empty() {
        write_jsonl(&dir.join(BUTTONS_FILE), &rec.buttons)?;
    }
    if rec.root != dir {
        for frame in &rec.frames {
            let src = rec.root.join(&frame.image_ref);
            let dst = dir.join(&frame.image_ref);
            if let Some(parent) = dst.parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            fs::copy(&src, &dst).map_err(io_err(&src))?;
        }
    }
    Ok(())
}

/// Long-term user context passed to the agents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    #[serde(rename = "Values/Interest")]
    pub values_interests: Vec<String>,
    #[serde(rename = "Age")]
    pub age: String,
    #[serde(rename = "Gender")]
    pub gender: String,
    #[serde(rename = "Citizenship")]
    pub citizenship: String,
    #[serde(rename = "Residence")]
    pub residence: String,
    #[serde(rename = "Education")]
    pub education: String,
    #[serde(rename = "Occupation")]
    pub occupation: String,
    #[serde(rename = "Preferred Language", default = "default_language")]
    pub preferred_language: String,
}

fn default_language() -> String {
    "en".to_string()
}

/// Loose BCP-47 shape check: a 2-3 letter primary subtag followed by
/// alphanumeric subtags of 1-8 characters.
pub fn is_language_tag(tag: &str) -> bool {
    let mut parts = tag.split('-');
    let primary = parts.next().unwrap_or("");
    if !(2..=3).contains(&primary.len()) || !primary.chars().all(|c| c.is_ascii_alphabetic()) {
        return false;
    }
    parts.all(|p| (1..=8).contains(&p.len()) && p.chars().all(|c| c.is_ascii_alphanumeric()))
}

pub fn parse_profile(text: &str) -> Result<UserProfile, ProfileError> {
    // Profiles are sometimes pasted with a doubled outer brace.
    let trimmed = text.trim();
    let body = if trimmed.starts_with("{{") && trimmed.ends_with("}}") {
        &trimmed[1..trimmed.len() - 1]
    } else {
        trimmed
    };
    let profile: UserProfile =
        serde_json::from_str(body).map_err(|e| ProfileError::MalformedProfile(e.to_string()))?;
    if profile.values_interests.iter().all(|v| v.trim().is_empty()) {
        return Err(ProfileError::EmptyInterests);
    }
    if !is_language_tag(&profile.preferred_language) {
        return Err(ProfileError::MalformedProfile(format!(
            "invalid language tag {:?}",
            profile.preferred_language
        )));
    }
    Ok(profile)
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<UserProfile, ProfileError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| ProfileError::MalformedProfile(format!("{}: {e}", path.display())))?;
    parse_profile(&text)
}

/// Identifier used to scope history: the profile file stem.
pub fn profile_id(path: impl AsRef<Path>) -> String {
    path.as_ref()
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "default".to_string())
}

/// One item of the merged session stream.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    FrameArrived(usize),
    GazeArrived(GazeSample),
    QueryArrived(ScriptedQuery),
    ButtonArrived(ButtonEvent),
}

impl Event {
    pub fn t_ms(&self, rec: &SessionRecording) -> u64 {
        match self {
            Event::FrameArrived(i) => rec.frames[*i].t_ms,
            Event::GazeArrived(g) => g.t_ms,
            Event::QueryArrived(q) => q.t_ms,
            Event::ButtonArrived(b) => b.t_ms,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Event::FrameArrived(_) => 0,
            Event::GazeArrived(_) => 1,
            Event::QueryArrived(_) => 2,
            Event::ButtonArrived(_) => 3,
        }
    }
}

/// Merges all streams of `rec` into one time-ordered sequence.
/// Ties are ordered Frame < Gaze < Query < Button; within a stream the
/// recorded order is kept.
pub fn event_stream(rec: &SessionRecording) -> Vec<Event> {
    let mut events: Vec<(u64, Event)> = Vec::with_capacity(
        rec.frames.len() + rec.gaze.len() + rec.queries.len() + rec.buttons.len(),
    );
    events.extend(rec.frames.iter().enumerate().map(|(i, f)| (f.t_ms, Event::FrameArrived(i))));
    events.extend(rec.gaze.iter().map(|g| (g.t_ms, Event::GazeArrived(*g))));
    events.extend(rec.queries.iter().map(|q| (q.t_ms, Event::QueryArrived(q.clone()))));
    events.extend(rec.buttons.iter().map(|b| (b.t_ms, Event::ButtonArrived(b.clone()))));
    // stable sort keeps per-stream order for equal keys
    events.sort_by_key(|(t, e)| (*t, e.rank()));
    events.into_iter().map(|(_, e)| e).collect()
}

/// Writes frame images for tests and fixture generation.
pub fn write_frame_image(path: &Path, img: &image::RgbImage) -> Result<(), SessionError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Jpeg)
        .map_err(|e| SessionError::CorruptFrame {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    f.write_all(buf.get_ref()).map_err(io_err(path))
}
