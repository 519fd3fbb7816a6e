//! HTTP routes.

use std::collections::{HashMap, HashSet};
use std::convert::Infallible;
use std::sync::Arc;

use autopilot_core::events::{Event, EventBus};
use autopilot_core::file::FileError;
use autopilot_core::kernel::{CancelToken, Kernel, TaskEnv};
use autopilot_core::memory::{MemorySource, RecordMeta};
use autopilot_core::state::{FragmentSource, ObservedState};
use autopilot_plan::SessionId;
use axum::body::{Body, Bytes};
use axum::extract::{DefaultBodyLimit, FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use parking_lot::Mutex;
use serde::Deserialize;
use serde_json::value::RawValue;
use serde_json::{json, Value};
use tokio::sync::mpsc;
use tracing::{info, warn};

use crate::store::{now, FeedbackRecord, SessionRow, Store, StoreError, StoreSink, User};

pub const DEFAULT_MAX_UPLOAD: usize = 50 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub max_upload_bytes: usize,
    /// Prior turns replayed into a new task's initial state.
    pub history_turns: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self { max_upload_bytes: DEFAULT_MAX_UPLOAD, history_turns: 6 }
    }
}

pub struct AppState {
    pub store: Arc<Store>,
    pub kernel: Kernel,
    pub config: GatewayConfig,
    inflight: Mutex<HashSet<String>>,
    namespaces: Mutex<HashMap<String, SessionId>>,
}

impl AppState {
    /// Wires durable memory into the kernel: existing records are loaded
    /// and new ones are written through.
    pub fn new(store: Arc<Store>, kernel: Kernel, config: GatewayConfig) -> Result<Arc<Self>, StoreError> {
        let memory = kernel.memory();
        for record in store.load_records()? {
            memory.insert(record);
        }
        memory.set_sink(Arc::new(StoreSink(store.clone())));
        Ok(Arc::new(Self {
            store,
            kernel,
            config,
            inflight: Mutex::new(HashSet::new()),
            namespaces: Mutex::new(HashMap::new()),
        }))
    }

    fn namespace(&self, session_id: &str) -> SessionId {
        self.namespaces
            .lock()
            .entry(session_id.to_string())
            .or_insert_with(|| self.kernel.runtime().create_session())
            .clone()
    }

    fn release_session(&self, session_id: &str) {
        if let Some(ns) = self.namespaces.lock().remove(session_id) {
            self.kernel.runtime().close_session(&ns);
        }
        self.kernel.files().close_session(session_id);
    }
}

/// Marks a chat session busy until dropped.
struct InflightGuard {
    state: Arc<AppState>,
    session_id: String,
}

impl InflightGuard {
    fn acquire(state: &Arc<AppState>, session_id: &str) -> Option<Self> {
        state
            .inflight
            .lock()
            .insert(session_id.to_string())
            .then(|| Self { state: state.clone(), session_id: session_id.to_string() })
    }
}

impl Drop for InflightGuard {
    fn drop(&mut self) {
        self.state.inflight.lock().remove(&self.session_id);
    }
}

#[derive(Debug)]
pub enum ApiError {
    Unauthorized,
    NotFound(&'static str),
    Conflict(String),
    PayloadTooLarge,
    UnsupportedMedia(String),
    Unprocessable(String),
    Internal(String),
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        Self::Internal(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code, message) = match self {
            Self::Unauthorized => (StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token".into()),
            Self::NotFound(what) => (StatusCode::NOT_FOUND, "not_found", format!("{what} not found")),
            Self::Conflict(m) => (StatusCode::CONFLICT, "conflict", m),
            Self::PayloadTooLarge => (StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large", "upload exceeds the size limit".into()),
            Self::UnsupportedMedia(m) => (StatusCode::UNSUPPORTED_MEDIA_TYPE, "unsupported_media_type", m),
            Self::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", m),
            Self::Internal(m) => {
                warn!(error = %m, "request failed");
                (StatusCode::INTERNAL_SERVER_ERROR, "internal", m)
            }
        };
        (status, Json(json!({"error": {"code": code, "message": message}}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub struct AuthUser(pub User);

impl FromRequestParts<Arc<AppState>> for AuthUser {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Arc<AppState>) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or(ApiError::Unauthorized)?;
        state.store.user_by_token(token.trim())?.map(AuthUser).ok_or(ApiError::Unauthorized)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let max_upload = state.config.max_upload_bytes;
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session).delete(close_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/events", get(session_events))
        .route(
            "/sessions/{id}/files",
            post(upload_file).get(list_files).layer(DefaultBodyLimit::max(max_upload)),
        )
        .route("/files/{id}", get(get_file))
        .route("/feedback", post(post_feedback))
        .route("/feedback/export", get(export_feedback))
        .route("/feedback/{id}", get(get_feedback))
        .route("/memories", get(list_memories).post(add_memory))
        .with_state(state)
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

fn owned_session(state: &AppState, user: &User, session_id: &str) -> ApiResult<SessionRow> {
    state.store.session(&user.user_id, session_id)?.ok_or(ApiError::NotFound("session"))
}

#[derive(Deserialize, Default)]
struct NewSession {
    #[serde(default)]
    title: Option<String>,
}

async fn create_session(State(state): State<Arc<AppState>>, AuthUser(user): AuthUser, body: Bytes) -> ApiResult<Response> {
    let req: NewSession = if body.is_empty() {
        NewSession::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::Unprocessable(e.to_string()))?
    };
    let row = state.store.create_session(&user.user_id, req.title.as_deref().unwrap_or("Untitled"))?;
    Ok((StatusCode::CREATED, Json(row)).into_response())
}

async fn list_sessions(State(state): State<Arc<AppState>>, AuthUser(user): AuthUser) -> ApiResult<Json<Value>> {
    Ok(Json(json!({"sessions": state.store.sessions(&user.user_id)?})))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    AuthUser(user): AuthUser,
    Path(id): Path<String>,
) -> ApiResult<Json<Value>> {
    let row = owned_session(&state, &user, &id)?;
    let turns = state.store.turns(&id)?;
    Ok(Json(json!({"session": row, "turns": turns})))
}

async fn close_session(
    State(state): State<Arc<AppState>>,
    AuthUser(user): AuthUser,
    Path(id): Path<String>,
) -> ApiResult<StatusCode> {
    owned_session(&state, &user, &id)?;
    state.store.close_session(&user.user_id, &id)?;
    state.release_session(&id);
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct NewMessage {
    content: String,
}

fn initial_state(state: &AppState, user: &User, session_id: &str, content: &str) -> ApiResult<ObservedState> {
    let mut s = ObservedState::new();
    let turns = state.store.turns(session_id)?;
    let start = turns.len().saturating_sub(state.config.history_turns);
    if start < turns.len() {
        let history: Vec<String> = turns[start..].iter().map(|t| format!("{}: {}", t.role, t.content)).collect();
        s.push(FragmentSource::UserInput, format!("Earlier in this conversation:\n{}", history.join("\n")), 0);
    }
    let files = state.kernel.files().session_files(&user.user_id, session_id);
    if !files.is_empty() {
        let list: Vec<String> = files
            .iter()
            .map(|(id, m)| format!("{id} ({}, {}, {} pages)", m.filename, m.media_type, m.page_count))
            .collect();
        s.push(FragmentSource::UserInput, format!("Files in this session: {}", list.join("; ")), 0);
    }
    s.push(FragmentSource::UserInput, content, 0);
    Ok(s)
}

fn sse_event(event: &Event) -> SseEvent {
    SseEvent::default().event(event.kind()).id(event.seq.to_string()).data(event.to_json())
}

async fn post_message(
    State(state): State<Arc<AppState>>,
    AuthUser(user): AuthUser,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let session = owned_session(&state, &user, &id)?;
    if session.closed_at.is_some() {
        return Err(ApiError::Conflict("session is closed".into()));
    }
    let msg: NewMessage = serde_json::from_slice(&body).map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    if msg.content.trim().is_empty() {
        return Err(ApiError::Unprocessable("content is empty".into()));
    }
    let guard = InflightGuard::acquire(&state, &id)
        .ok_or_else(|| ApiError::Conflict("a message is already being processed in this session".into()))?;

    let initial = initial_state(&state, &user, &id, &msg.content)?;
    let ctx = state.kernel.root_context(msg.content.clone());
    let task_id = ctx.task_id.0.clone();
    state.store.append_turn(&id, "user", &msg.content, Some(&task_id), None, None)?;

    let (tx, rx) = mpsc::unbounded_channel::<Event>();
    let cancel = CancelToken::new();
    let sink = {
        let tx = tx.clone();
        let store = state.store.clone();
        let cancel = cancel.clone();
        let (session_id, root) = (id.clone(), task_id.clone());
        move |e: &Event| {
            if let Err(err) = store.append_event(&session_id, &root, e) {
                warn!(error = %err, "event not persisted");
            }
            if tx.send(e.clone()).is_err() {
                cancel.cancel();
            }
        }
    };
    let env = TaskEnv::new(user.user_id.clone(), id.clone(), state.namespace(&id))
        .with_events(EventBus::new(Arc::new(sink)))
        .with_cancel(cancel);

    let worker = state.clone();
    let (session_id, user_id, content) = (id.clone(), user.user_id.clone(), msg.content);
    tokio::task::spawn_blocking(move || {
        let result = worker.kernel.run_task(&env, ctx, initial);
        drop(env);
        let messages = serde_json::to_string(&result.final_messages).unwrap_or_else(|_| "[]".into());
        if let Err(e) = worker.store.append_turn(
            &session_id,
            "assistant",
            &result.answer,
            Some(&result.task_id.0),
            Some(result.status.as_str()),
            Some(&messages),
        ) {
            warn!(error = %e, "assistant turn not persisted");
        }
        let stamp = now();
        let memory = worker.kernel.memory();
        for text in [content.as_str(), result.answer.as_str()] {
            if !text.trim().is_empty() {
                if let Err(e) = memory.store_dialogue(text, &stamp, &user_id) {
                    warn!(error = %e, "dialogue not stored");
                }
            }
        }
        info!(session = %session_id, task = %result.task_id.0, status = result.status.as_str(), "task finished");
        drop(guard);
        drop(tx);
    });

    let stream = futures::stream::unfold(rx, |mut rx| async move {
        rx.recv().await.map(|e| (Ok::<_, Infallible>(sse_event(&e)), rx))
    });
    let mut resp = sse(stream).into_response();
    resp.headers_mut().insert("x-task-id", HeaderValue::from_str(&task_id).expect("ascii task id"));
    Ok(resp)
}

fn sse<S: Stream<Item = Result<SseEvent, Infallible>> + Send + 'static>(stream: S) -> impl IntoResponse {
    Sse::new(stream).keep_alive(KeepAlive::default())
}

#[derive(Deserialize)]
struct EventsQuery {
    task: Option<String>,
}

async fn session_events(
    State(state): State<Arc<AppState>>,
    AuthUser(user): AuthUser,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> ApiResult<Json<Value>> {
    owned_session(&state, &user, &id)?;
    Ok(Json(json!({"events": state.store.events(&id, q.task.as_deref())?})))
}

#[derive(Deserialize)]
struct UploadQuery {
    filename: Option<String>,
}

async fn upload_file(
    State(state): State<Arc<AppState>>,
    AuthUser(user): AuthUser,
    Path(id): Path<String>,
    Query(q): Query<UploadQuery>,
    body: Result<Bytes, axum::extract::rejection::BytesRejection>,
) -> ApiResult<Response> {
    let session = owned_session(&state, &user, &id)?;
    if session.closed_at.is_some() {
        return Err(ApiError::Conflict("session is closed".into()));
    }
    let body = body.map_err(|e| {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::PayloadTooLarge
        } else {
            ApiError::Unprocessable(e.body_text())
        }
    })?;
    if body.len() > state.config.max_upload_bytes {
        return Err(ApiError::PayloadTooLarge);
    }
    let filename = q.filename.unwrap_or_else(|| "upload".into());
    let files = state.kernel.files().clone();
    let (uid, sid) = (user.user_id.clone(), id.clone());
    let loaded = tokio::task::spawn_blocking(move || files.load(&uid, &sid, &body, &filename))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    let file_id = loaded.map_err(|e| match e {
        FileError::UnsupportedMediaType(m) => ApiError::UnsupportedMedia(format!("unsupported media type {m}")),
        FileError::ExtractionFailed(m) => ApiError::Unprocessable(format!("extraction failed: {m}")),
        other => ApiError::Internal(other.to_string()),
    })?;
    let meta = state.kernel.files().meta(&user.user_id, &file_id);
    Ok((StatusCode::CREATED, Json(json!({"file_id": file_id, "session_id": id, "meta": meta})))
        .into_response())
}

async fn list_files(
    State(state): State<Arc<AppState>>,
    AuthUser(user): AuthUser,
    Path(id): Path<String>,
) -> ApiResult<Json<Value>> {
    owned_session(&state, &user, &id)?;
    let files: Vec<Value> = state
        .kernel
        .files()
        .session_files(&user.user_id, &id)
        .into_iter()
        .map(|(file_id, meta)| json!({"file_id": file_id, "meta": meta}))
        .collect();
    Ok(Json(json!({"files": files})))
}

async fn get_file(
    State(state): State<Arc<AppState>>,
    AuthUser(user): AuthUser,
    Path(id): Path<String>,
) -> ApiResult<Json<Value>> {
    let meta = state.kernel.files().meta(&user.user_id, &id).ok_or(ApiError::NotFound("file"))?;
    Ok(Json(json!({"file_id": id, "meta": meta})))
}

#[derive(Deserialize)]
struct NewFeedback {
    session_id: String,
    turn_index: u32,
    #[serde(default)]
    original_messages: Option<Box<RawValue>>,
    #[serde(default)]
    edited_response: Option<String>,
    #[serde(default)]
    suggestion: Option<String>,
}

fn non_blank(s: Option<String>) -> Option<String> {
    s.filter(|s| !s.trim().is_empty())
}

async fn post_feedback(State(state): State<Arc<AppState>>, AuthUser(user): AuthUser, body: Bytes) -> ApiResult<Response> {
    let req: NewFeedback = serde_json::from_slice(&body).map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    let (edited_response, suggestion) = (non_blank(req.edited_response), non_blank(req.suggestion));
    if edited_response.is_none() && suggestion.is_none() {
        return Err(ApiError::Unprocessable("one of edited_response or suggestion is required".into()));
    }
    owned_session(&state, &user, &req.session_id)?;
    let turn = state
        .store
        .turns(&req.session_id)?
        .into_iter()
        .find(|t| t.turn_index == req.turn_index)
        .ok_or(ApiError::NotFound("turn"))?;
    if turn.role != "assistant" {
        return Err(ApiError::Unprocessable("feedback targets assistant turns".into()));
    }
    let original_messages = match (req.original_messages, turn.messages) {
        (Some(m), _) => m,
        (None, Some(m)) => m,
        (None, None) => return Err(ApiError::Unprocessable("turn has no recorded messages".into())),
    };
    let rec = FeedbackRecord {
        feedback_id: format!("fb-{}", uuid::Uuid::new_v4().simple()),
        session_id: req.session_id,
        turn_index: req.turn_index,
        original_messages,
        edited_response,
        suggestion,
        created_at: now(),
    };
    state.store.insert_feedback(&user.user_id, &rec)?;
    Ok((StatusCode::CREATED, Json(rec)).into_response())
}

async fn get_feedback(
    State(state): State<Arc<AppState>>,
    AuthUser(user): AuthUser,
    Path(id): Path<String>,
) -> ApiResult<Json<FeedbackRecord>> {
    state.store.feedback(&user.user_id, &id)?.map(Json).ok_or(ApiError::NotFound("feedback"))
}

/// One JSON object per line.
pub fn feedback_ndjson(records: &[FeedbackRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("feedback serializes") + "\n").collect()
}

async fn export_feedback(State(state): State<Arc<AppState>>, AuthUser(user): AuthUser) -> ApiResult<Response> {
    let body = feedback_ndjson(&state.store.feedback_for_user(&user.user_id)?);
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], Body::from(body)).into_response())
}

#[derive(Deserialize)]
struct MemoryQuery {
    q: Option<String>,
    k: Option<usize>,
}

async fn list_memories(
    State(state): State<Arc<AppState>>,
    AuthUser(user): AuthUser,
    Query(q): Query<MemoryQuery>,
) -> ApiResult<Json<Value>> {
    let memory = state.kernel.memory();
    let summary = |doc_id: &str, score: Option<f64>| {
        memory.get(&user.user_id, doc_id).map(|r| {
            json!({
                "doc_id": r.doc_id,
                "text": r.text,
                "source": r.meta.source,
                "timestamp": r.meta.timestamp,
                "score": score,
            })
        })
    };
    let items: Vec<Value> = match q.q.filter(|s| !s.trim().is_empty()) {
        Some(text) => memory
            .search(&text, q.k.unwrap_or(10), &user.user_id)
            .entries
            .iter()
            .filter_map(|e| summary(&e.doc_id, Some(e.score)))
            .collect(),
        None => memory.snapshot(&user.user_id).iter().filter_map(|r| summary(&r.doc_id, None)).collect(),
    };
    Ok(Json(json!({"memories": items})))
}

#[derive(Deserialize)]
struct NewMemory {
    text: String,
}

async fn add_memory(State(state): State<Arc<AppState>>, AuthUser(user): AuthUser, body: Bytes) -> ApiResult<Response> {
    let req: NewMemory = serde_json::from_slice(&body).map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    let memory = state.kernel.memory().clone();
    let meta = RecordMeta { timestamp: now(), source: MemorySource::Note, user_id: user.user_id.clone() };
    let doc_id = tokio::task::spawn_blocking(move || memory.ingest(&req.text, meta))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    Ok((StatusCode::CREATED, Json(json!({"doc_id": doc_id}))).into_response())
}
