//! HTTP + WebSocket service: upload sessions, start paced runs, stream
//! their events and feed ring-button presses back into them.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use sidelight_core::config::EngineConfig;
use sidelight_core::orchestrator::{DeliveryRecord, Engine, EngineEvent, SessionMetrics};
use sidelight_core::session::{event_stream, load_profile, load_session, Button, ButtonEvent, Event, SessionRecording};
use sidelight_core::HistoryStore;
use tokio::sync::watch;

use crate::archive::unpack_session;
use crate::replay::{build_providers, default_script, Pace, ProviderMode};
use crate::wire::{finished_event, wire_event, WIRE_VERSION};

const MAX_UPLOAD_BYTES: usize = 512 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Uploaded sessions and finished run logs are stored here.
    pub data_dir: PathBuf,
    /// Holds `<profile_id>.json` files.
    pub profiles_dir: PathBuf,
    pub engine: EngineConfig,
    pub providers: ProviderMode,
    /// Static bearer token; when set every endpoint except `/health` needs it.
    pub token: Option<String>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

struct Inner {
    cfg: ServerConfig,
    sessions: RwLock<HashMap<String, PathBuf>>,
    runs: RwLock<HashMap<String, Arc<Run>>>,
    histories: Mutex<HashMap<String, Arc<Mutex<HistoryStore>>>>,
}

pub struct Run {
    id: String,
    session_id: String,
    events: Mutex<Vec<Arc<str>>>,
    deliveries: Mutex<Vec<DeliveryRecord>>,
    metrics: Mutex<Option<SessionMetrics>>,
    finished: AtomicBool,
    seq: watch::Sender<usize>,
    buttons: Mutex<Option<mpsc::Sender<ButtonEvent>>>,
}

impl Run {
    fn publish(&self, events: &[EngineEvent]) {
        if events.is_empty() {
            return;
        }
        let len = {
            let mut log = self.events.lock().expect("run events lock");
            for ev in events {
                let line = wire_event(log.len() as u64, &self.session_id, ev).to_string();
                log.push(line.into());
            }
            log.len()
        };
        self.seq.send_replace(len);
    }

    fn is_finished(&self) -> bool {
        self.finished.load(Ordering::SeqCst)
    }
}

impl AppState {
    pub fn new(cfg: ServerConfig) -> Self {
        Self(Arc::new(Inner {
            cfg,
            sessions: RwLock::new(HashMap::new()),
            runs: RwLock::new(HashMap::new()),
            histories: Mutex::new(HashMap::new()),
        }))
    }

    /// Makes an existing session directory available under its own id.
    pub fn register_session(&self, dir: PathBuf) -> Result<String, String> {
        let rec = load_session(&dir).map_err(|e| e.to_string())?;
        self.0
            .sessions
            .write()
            .expect("sessions lock")
            .insert(rec.session_id.clone(), dir);
        Ok(rec.session_id)
    }

    fn session_dir(&self, id: &str) -> Option<PathBuf> {
        self.0.sessions.read().expect("sessions lock").get(id).cloned()
    }

    fn run(&self, id: &str) -> Option<Arc<Run>> {
        self.0.runs.read().expect("runs lock").get(id).cloned()
    }

    /// In-memory history per run unless a history directory is configured,
    /// in which case runs of one profile share a store.
    fn history_for(&self, config: &EngineConfig, profile_id: &str, session_id: &str) -> Result<Arc<Mutex<HistoryStore>>, String> {
        if config.history_dir.is_none() {
            return Ok(Arc::new(Mutex::new(HistoryStore::in_memory())));
        }
        let key = match config.history_scope {
            sidelight_core::config::HistoryScope::Profile => profile_id.to_string(),
            sidelight_core::config::HistoryScope::Session => format!("{profile_id}\u{1f}{session_id}"),
        };
        let mut map = self.0.histories.lock().expect("histories lock");
        if let Some(h) = map.get(&key) {
            return Ok(h.clone());
        }
        let store = config.open_history(profile_id, session_id).map_err(|e| e.to_string())?;
        let store = Arc::new(Mutex::new(store));
        map.insert(key, store.clone());
        Ok(store)
    }
}

pub fn app(state: AppState) -> Router {
    let protected = Router::new()
        .route("/sessions", post(upload_session).get(list_sessions))
        .route("/sessions/{id}/frames/{file}", get(get_frame))
        .route("/runs", post(create_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/deliveries", get(get_deliveries))
        .route("/runs/{id}/events", get(events_ws))
        .route("/runs/{id}/buttons", post(press_button))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/health", get(|| async { Json(json!({"v": WIRE_VERSION, "status": "ok"})) }))
        .merge(protected)
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .layer(tower_http::cors::CorsLayer::permissive())
        .with_state(state)
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({"v": WIRE_VERSION, "error": msg.into()}))).into_response()
}

#[derive(Deserialize)]
struct TokenQuery {
    token: Option<String>,
}

async fn require_token(
    State(state): State<AppState>,
    Query(q): Query<TokenQuery>,
    headers: HeaderMap,
    req: Request,
    next: Next,
) -> Response {
    let Some(expected) = &state.0.cfg.token else {
        return next.run(req).await;
    };
    let bearer = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if bearer == Some(expected.as_str()) || q.token.as_deref() == Some(expected.as_str()) {
        next.run(req).await
    } else {
        error(StatusCode::UNAUTHORIZED, "missing or wrong token")
    }
}

async fn upload_session(State(state): State<AppState>, req: Request) -> Response {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let bytes = if is_multipart {
        let mut form = match Multipart::from_request(req, &state).await {
            Ok(f) => f,
            Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
        };
        match form.next_field().await {
            Ok(Some(field)) => match field.bytes().await {
                Ok(b) => b,
                Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
            },
            Ok(None) => return error(StatusCode::BAD_REQUEST, "empty form"),
            Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
        }
    } else {
        match Bytes::from_request(req, &state).await {
            Ok(b) => b,
            Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
        }
    };
    let upload_id = uuid::Uuid::new_v4().simple().to_string();
    let dest = state.0.cfg.data_dir.join("sessions").join(&upload_id);
    let result = tokio::task::spawn_blocking(move || -> Result<(String, PathBuf), String> {
        let root = unpack_session(&bytes, &dest).map_err(|e| e.to_string())?;
        let rec = load_session(&root).map_err(|e| e.to_string())?;
        Ok((rec.session_id, root))
    })
    .await;
    match result {
        Ok(Ok((name, root))) => {
            // uploads get a fresh id so that two uploads never collide
            let id = format!("{name}-{}", &upload_id[..8]);
            state.0.sessions.write().expect("sessions lock").insert(id.clone(), root);
            tracing::info!(session_id = %id, "session uploaded");
            (StatusCode::CREATED, Json(json!({"v": WIRE_VERSION, "session_id": id}))).into_response()
        }
        Ok(Err(msg)) => {
            let _ = std::fs::remove_dir_all(state.0.cfg.data_dir.join("sessions").join(&upload_id));
            error(StatusCode::BAD_REQUEST, msg)
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn list_sessions(State(state): State<AppState>) -> Response {
    let mut ids: Vec<String> = state.0.sessions.read().expect("sessions lock").keys().cloned().collect();
    ids.sort();
    Json(json!({"v": WIRE_VERSION, "sessions": ids})).into_response()
}

async fn get_frame(State(state): State<AppState>, Path((id, file)): Path<(String, String)>) -> Response {
    let Some(dir) = state.session_dir(&id) else {
        return error(StatusCode::NOT_FOUND, "unknown session");
    };
    if file.contains("..") || file.contains('/') || file.contains('\\') {
        return error(StatusCode::BAD_REQUEST, "bad frame name");
    }
    let mime = match file.rsplit('.').next().map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    };
    match tokio::fs::read(dir.join("frames").join(&file)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, mime)], bytes).into_response(),
        Err(_) => error(StatusCode::NOT_FOUND, "unknown frame"),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunRequest {
    session_id: String,
    profile_id: String,
    #[serde(default)]
    overrides: Option<Value>,
    #[serde(default)]
    pace: Option<Pace>,
    /// Playback speed multiplier for realtime pacing.
    #[serde(default)]
    speed: Option<f64>,
}

fn valid_profile_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

async fn create_run(State(state): State<AppState>, body: Bytes) -> Response {
    let req: RunRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let Some(dir) = state.session_dir(&req.session_id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown session {:?}", req.session_id));
    };
    if !valid_profile_id(&req.profile_id) {
        return error(StatusCode::BAD_REQUEST, "profile ids use letters, digits, '-' and '_'");
    }
    let profile_path = state.0.cfg.profiles_dir.join(format!("{}.json", req.profile_id));
    if !profile_path.is_file() {
        return error(StatusCode::NOT_FOUND, format!("unknown profile {:?}", req.profile_id));
    }
    let speed = req.speed.unwrap_or(1.0);
    if !(speed.is_finite() && speed > 0.0) {
        return error(StatusCode::BAD_REQUEST, "speed must be positive");
    }
    let mut config = state.0.cfg.engine.clone();
    if let Some(ov) = &req.overrides {
        // backends and storage stay under operator control
        if ov.get("providers").is_some() || ov.get("history_dir").is_some() {
            return error(StatusCode::BAD_REQUEST, "providers and history_dir cannot be overridden per run");
        }
        config = match config.with_overrides(ov) {
            Ok(c) => c,
            Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
        };
    }
    let pace = req.pace.unwrap_or(Pace::Realtime);
    let prepared = tokio::task::spawn_blocking({
        let state = state.clone();
        let req_profile = req.profile_id.clone();
        move || -> Result<_, String> {
            let rec = load_session(&dir).map_err(|e| format!("session: {e}"))?;
            let profile = load_profile(&profile_path).map_err(|e| format!("profile: {e}"))?;
            let script = default_script(&dir, None);
            let providers = build_providers(&config, state.0.cfg.providers, script.as_deref()).map_err(|e| e.to_string())?;
            let history = state.history_for(&config, &req_profile, &rec.session_id)?;
            Ok((rec, profile, providers, history, config))
        }
    })
    .await;
    let (rec, profile, providers, history, config) = match prepared {
        Ok(Ok(p)) => p,
        Ok(Err(msg)) => return error(StatusCode::BAD_REQUEST, msg),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };

    let run_id = uuid::Uuid::new_v4().simple().to_string();
    let (tx, rx) = mpsc::channel();
    let run = Arc::new(Run {
        id: run_id.clone(),
        session_id: req.session_id.clone(),
        events: Mutex::new(Vec::new()),
        deliveries: Mutex::new(Vec::new()),
        metrics: Mutex::new(None),
        finished: AtomicBool::new(false),
        seq: watch::channel(0).0,
        buttons: Mutex::new(Some(tx)),
    });
    state.0.runs.write().expect("runs lock").insert(run_id.clone(), run.clone());
    let rec = Arc::new(rec);
    let engine = Engine::new(rec.clone(), profile, config, providers, history);
    let log_dir = state.0.cfg.data_dir.join("runs").join(&run_id);
    std::thread::Builder::new()
        .name(format!("run-{}", &run_id[..8]))
        .spawn(move || drive(engine, rec, run, rx, pace, speed, log_dir))
        .expect("spawn run thread");
    tracing::info!(run_id = %run_id, session_id = %req.session_id, ?pace, speed, "run started");
    (
        StatusCode::CREATED,
        Json(json!({
            "v": WIRE_VERSION,
            "run_id": run_id,
            "session_id": req.session_id,
            "events_url": format!("/runs/{run_id}/events"),
        })),
    )
        .into_response()
}

/// Owns the engine for one run: steps through the recording (sleeping
/// when paced) and applies button presses as they arrive.
fn drive(
    mut engine: Engine,
    rec: Arc<SessionRecording>,
    run: Arc<Run>,
    presses: mpsc::Receiver<ButtonEvent>,
    pace: Pace,
    speed: f64,
    log_dir: PathBuf,
) {
    let events: Vec<Event> = event_stream(&rec);
    let t0 = rec.start_ms();
    let wall0 = Instant::now();
    let virtual_now = |engine: &Engine, cap: u64| -> u64 {
        match pace {
            Pace::Fast => engine.now_ms(),
            Pace::Realtime => {
                let t = t0 + (wall0.elapsed().as_secs_f64() * 1000.0 * speed) as u64;
                t.clamp(engine.now_ms(), cap.max(engine.now_ms()))
            }
        }
    };
    let sync = |engine: &Engine, run: &Run, published: Vec<EngineEvent>| {
        let touched = published
            .iter()
            .any(|e| matches!(e, EngineEvent::Delivery(_) | EngineEvent::Canceled { .. }));
        if touched {
            *run.deliveries.lock().expect("deliveries lock") = engine.deliveries().to_vec();
        }
        run.publish(&published);
    };
    let apply = |engine: &mut Engine, mut b: ButtonEvent, t: u64| {
        b.t_ms = t;
        engine.press(&b);
    };
    for ev in &events {
        let t = ev.t_ms(&rec);
        if pace == Pace::Realtime {
            loop {
                let due = wall0 + Duration::from_secs_f64((t - t0) as f64 / 1000.0 / speed);
                let Some(wait) = due.checked_duration_since(Instant::now()) else { break };
                match presses.recv_timeout(wait) {
                    Ok(b) => {
                        let now = virtual_now(&engine, t);
                        apply(&mut engine, b, now);
                        let out = engine.drain_events();
                        sync(&engine, &run, out);
                    }
                    Err(RecvTimeoutError::Timeout) => break,
                    Err(RecvTimeoutError::Disconnected) => std::thread::sleep(wait),
                }
            }
        } else {
            while let Ok(b) = presses.try_recv() {
                let now = virtual_now(&engine, t);
                apply(&mut engine, b, now);
            }
        }
        engine.step(ev);
        let out = engine.drain_events();
        sync(&engine, &run, out);
    }
    while let Ok(b) = presses.try_recv() {
        let now = engine.now_ms();
        apply(&mut engine, b, now);
    }
    *run.buttons.lock().expect("buttons lock") = None;
    engine.finish();
    let out = engine.drain_events();
    sync(&engine, &run, out);
    *run.deliveries.lock().expect("deliveries lock") = engine.deliveries().to_vec();
    *run.metrics.lock().expect("metrics lock") = Some(engine.metrics());

    if let Err(e) = std::fs::create_dir_all(&log_dir).and_then(|_| {
        sidelight_core::orchestrator::write_jsonl(&log_dir.join("deliveries.jsonl"), engine.deliveries())
    }) {
        tracing::error!(run_id = %run.id, error = %e, "delivery log not written");
    }
    run.finished.store(true, Ordering::SeqCst);
    let len = run.events.lock().expect("run events lock").len();
    run.seq.send_replace(len);
    tracing::info!(run_id = %run.id, deliveries = engine.deliveries().len(), "run finished");
}

async fn get_run(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    let Some(run) = state.run(&id) else {
        return error(StatusCode::NOT_FOUND, "unknown run");
    };
    let events = run.events.lock().expect("run events lock").len();
    let deliveries = run.deliveries.lock().expect("deliveries lock").len();
    let metrics = *run.metrics.lock().expect("metrics lock");
    Json(json!({
        "v": WIRE_VERSION,
        "run_id": run.id,
        "session_id": run.session_id,
        "finished": run.is_finished(),
        "events": events,
        "deliveries": deliveries,
        "metrics": metrics,
    }))
    .into_response()
}

async fn get_deliveries(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    let Some(run) = state.run(&id) else {
        return error(StatusCode::NOT_FOUND, "unknown run");
    };
    let records = run.deliveries.lock().expect("deliveries lock").clone();
    Json(json!({"v": WIRE_VERSION, "finished": run.is_finished(), "deliveries": records})).into_response()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ButtonRequest {
    button: Button,
    #[serde(default)]
    query_text: Option<String>,
}

async fn press_button(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Response {
    let Some(run) = state.run(&id) else {
        return error(StatusCode::NOT_FOUND, "unknown run");
    };
    if run.is_finished() {
        return error(StatusCode::CONFLICT, "run finished");
    }
    let req: ButtonRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let press = match (req.button, req.query_text) {
        (Button::Right, Some(q)) if !q.trim().is_empty() => ButtonEvent::query(0, q),
        (Button::Right, _) => return error(StatusCode::BAD_REQUEST, "right button needs query_text"),
        (_, Some(_)) => return error(StatusCode::BAD_REQUEST, "query_text is only valid with the right button"),
        (b, None) => ButtonEvent::new(b, 0),
    };
    let sender = run.buttons.lock().expect("buttons lock").clone();
    match sender.map(|tx| tx.send(press)) {
        Some(Ok(())) => StatusCode::NO_CONTENT.into_response(),
        _ => error(StatusCode::CONFLICT, "run finished"),
    }
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    cursor: Option<usize>,
}

async fn events_ws(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    ws: WebSocketUpgrade,
) -> Response {
    let Some(run) = state.run(&id) else {
        return error(StatusCode::NOT_FOUND, "unknown run");
    };
    let cursor = q.cursor.unwrap_or(0);
    ws.on_upgrade(move |socket| stream_events(socket, run, cursor))
}

/// Sends every event from `cursor` on, then follows the run live until it
/// finishes.
async fn stream_events(mut socket: WebSocket, run: Arc<Run>, mut cursor: usize) {
    let mut rx = run.seq.subscribe();
    loop {
        rx.borrow_and_update();
        let finished = run.is_finished();
        let batch: Vec<Arc<str>> = {
            let log = run.events.lock().expect("run events lock");
            log.get(cursor..).map(<[_]>::to_vec).unwrap_or_default()
        };
        for line in batch {
            if socket.send(Message::Text(line.as_ref().into())).await.is_err() {
                return;
            }
            cursor += 1;
        }
        if finished {
            let _ = socket.send(Message::Text(finished_event(cursor as u64).to_string().into())).await;
            let _ = socket.send(Message::Close(None)).await;
            return;
        }
        tokio::select! {
            changed = rx.changed() => if changed.is_err() { return },
            incoming = socket.recv() => match incoming {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
