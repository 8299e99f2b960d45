//! HTTP service for tutoring studies: sessions at a chosen level and method,
//! tutor turns, per-turn comprehension annotations, a post-conversation
//! survey, and a de-identified export.
//!
//! Every accepted write is appended to the session's event log and synced
//! before the response is sent, so a returned turn survives a crash. See
//! `API.md` for the wire format.

pub mod export;
pub mod model;
pub mod store;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gradechat_core::assets;
use gradechat_core::control::{Method, TutorEngine};
use gradechat_core::lm::sampling::sub_seed;
use gradechat_core::lm::{ChatTurn, Role};
use gradechat_core::metrics::{tmr_from_annotation, token_miss_rate, TmrBreakdown};
use gradechat_core::tokenizer::Span;
use gradechat_core::Level;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::export::{build_export, ExportFilter, StudyExport};
use crate::model::{AnnotationRecord, Event, SessionRecord, SessionState, SurveyRecord, SurveyResponse, TurnRecord};
use crate::store::{Store, StoreError};

pub const DEFAULT_TURN_LIMIT: usize = 6;
pub const DEFAULT_EXPIRY_MS: u64 = 24 * 60 * 60 * 1000;
pub const DEFAULT_COMPACT_EVERY: usize = 32;
pub const OFFERED_TOPICS: usize = 3;
pub const MAX_TEXT_CHARS: usize = 2000;
pub const BLIND_LABELS: [&str; 4] = ["A", "B", "C", "D"];

/// Milliseconds since the Unix epoch.
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0))
}

#[derive(Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub turn_limit: usize,
    /// Idle time after which a session no longer accepts writes.
    pub expiry_ms: u64,
    pub compact_every: usize,
    pub seed: u64,
    pub clock: Clock,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            turn_limit: DEFAULT_TURN_LIMIT,
            expiry_ms: DEFAULT_EXPIRY_MS,
            compact_every: DEFAULT_COMPACT_EVERY,
            seed: 0,
            clock: system_clock(),
        }
    }
}

#[derive(Debug, Clone)]
struct ParticipantSession {
    session_id: String,
    topic: Option<String>,
    blind: bool,
}

pub struct AppState {
    cfg: ServiceConfig,
    engine: Arc<TutorEngine>,
    store: Store,
    participants: Mutex<HashMap<String, Vec<ParticipantSession>>>,
}

impl AppState {
    /// Opens the data directory and replays existing sessions.
    pub fn open(cfg: ServiceConfig, engine: TutorEngine) -> Result<Arc<Self>, StoreError> {
        let store = Store::open(&cfg.data_dir)?;
        let mut participants: HashMap<String, Vec<ParticipantSession>> = HashMap::new();
        let mut states: Vec<SessionState> =
            store.all().iter().map(|e| e.try_lock().expect("fresh store is unlocked").state.clone()).collect();
        states.sort_by(|a, b| {
            (a.record.created_at, &a.record.session_id).cmp(&(b.record.created_at, &b.record.session_id))
        });
        for s in states {
            participants.entry(s.record.participant_id.clone()).or_default().push(ParticipantSession {
                session_id: s.record.session_id.clone(),
                topic: s.topic.clone(),
                blind: s.record.label.is_some(),
            });
        }
        Ok(Arc::new(AppState { cfg, engine: Arc::new(engine), store, participants: Mutex::new(participants) }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    /// Snapshot of every session, for export.
    pub async fn states(&self) -> Vec<SessionState> {
        let mut out = Vec::new();
        for e in self.store.all() {
            out.push(e.lock().await.state.clone());
        }
        out
    }

    fn now(&self) -> u64 {
        (self.cfg.clock)()
    }

    fn expired(&self, state: &SessionState) -> bool {
        self.now().saturating_sub(state.last_activity) > self.cfg.expiry_ms
    }

    fn session_seed(&self, session_id: &str) -> u64 {
        let digest = Sha256::digest(session_id.as_bytes());
        let mut b = [0u8; 8];
        b.copy_from_slice(&digest[..8]);
        sub_seed(self.cfg.seed, u64::from_le_bytes(b))
    }

    fn blind_assignment(&self, participant: &str, previous_blind: usize) -> (Method, &'static str) {
        // A fixed per-participant permutation of the methods, so a
        // participant's first four blind sessions cover all four.
        let digest = Sha256::digest(participant.as_bytes());
        let mut b = [0u8; 8];
        b.copy_from_slice(&digest[..8]);
        let mut order = Method::ALL;
        let mut s = sub_seed(self.cfg.seed, u64::from_le_bytes(b));
        for i in (1..order.len()).rev() {
            s = sub_seed(s, i as u64);
            order.swap(i, (s % (i as u64 + 1)) as usize);
        }
        let slot = previous_blind % order.len();
        (order[slot], BLIND_LABELS[slot])
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }
    fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message)
    }
    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }
    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session {id}"))
    }
    fn storage(e: StoreError) -> Self {
        log::error!("storage failure: {e}");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", "could not persist the request")
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: ErrorDetail<'a>,
}

#[derive(Serialize)]
struct ErrorDetail<'a> {
    code: &'a str,
    message: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { error: ErrorDetail { code: self.code, message: &self.message } };
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::validation(r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::validation(r.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    pub participant_id: String,
    pub level: Level,
    /// A method name, or `blind`.
    pub method: String,
    #[serde(default)]
    pub topic: Option<String>,
    #[serde(default)]
    pub consent: bool,
}

/// What a client sees of a session. Blind sessions carry `label` and never
/// `method`.
#[derive(Debug, Serialize)]
pub struct SessionView {
    pub session_id: String,
    pub level: Level,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub topic: Option<String>,
    pub offered_topics: Vec<String>,
    pub turn_limit: usize,
    pub turns: Vec<TurnView>,
    pub survey: Option<SurveyResponse>,
    pub expired: bool,
    pub created_at: u64,
}

#[derive(Debug, Serialize)]
pub struct TurnView {
    pub turn_index: usize,
    pub student: String,
    pub tutor: String,
    pub annotation: Option<AnnotationView>,
}

#[derive(Debug, Serialize)]
pub struct AnnotationView {
    pub annotation_id: String,
    pub turn_index: usize,
    pub spans: Vec<Span>,
    pub understood_overall: bool,
    pub tmr: TmrBreakdown,
    pub supersedes: Option<String>,
}

impl From<&AnnotationRecord> for AnnotationView {
    fn from(a: &AnnotationRecord) -> Self {
        AnnotationView {
            annotation_id: a.annotation_id.clone(),
            turn_index: a.turn_index,
            spans: a.spans.clone(),
            understood_overall: a.understood_overall,
            tmr: a.tmr.clone(),
            supersedes: a.supersedes.clone(),
        }
    }
}

fn view(app: &AppState, s: &SessionState) -> SessionView {
    let blind = s.record.label.is_some();
    SessionView {
        session_id: s.record.session_id.clone(),
        level: s.record.user_level,
        method: (!blind).then_some(s.record.method),
        label: s.record.label.clone(),
        topic: s.topic.clone(),
        offered_topics: s.record.offered_topics.clone(),
        turn_limit: app.cfg.turn_limit,
        turns: s
            .turns
            .iter()
            .map(|t| TurnView {
                turn_index: t.turn_index,
                student: t.student.clone(),
                tutor: t.tutor.clone(),
                annotation: s.latest_annotation(t.turn_index).map(AnnotationView::from),
            })
            .collect(),
        survey: s.survey.as_ref().map(|r| r.answers),
        expired: app.expired(s),
        created_at: s.record.created_at,
    }
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    payload: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let Json(req) = payload?;
    let participant = req.participant_id.trim();
    if participant.is_empty() || participant.len() > 128 {
        return Err(ApiError::validation("participant_id must be 1 to 128 characters"));
    }
    if !req.consent {
        return Err(ApiError::validation("consent must be acknowledged"));
    }
    let blind = req.method.trim().eq_ignore_ascii_case("blind");
    let chosen_method = if blind {
        None
    } else {
        Some(req.method.parse::<Method>().map_err(|e| ApiError::validation(format!("{e}, or blind")))?)
    };

    let state = {
        let mut participants = app.participants.lock().expect("participant index poisoned");
        let history = participants.entry(participant.to_string()).or_default();
        let used: Vec<&str> = history.iter().filter_map(|p| p.topic.as_deref()).collect();
        let pool = assets::study_topics(req.level);
        let unused: Vec<String> = pool.iter().filter(|t| !used.contains(t)).map(|t| t.to_string()).collect();
        if unused.is_empty() {
            return Err(ApiError::conflict(format!("participant has used every {} topic", req.level)));
        }
        let topic = match req.topic.as_deref().map(str::trim) {
            None => None,
            Some(t) if used.contains(&t) => {
                return Err(ApiError::conflict("topic already used by this participant"));
            }
            Some(t) if pool.contains(&t) => Some(t.to_string()),
            Some(_) => return Err(ApiError::validation(format!("topic is not in the {} topic list", req.level))),
        };
        let offered: Vec<String> = match &topic {
            Some(t) => vec![t.clone()],
            None => unused.into_iter().take(OFFERED_TOPICS).collect(),
        };
        let (method, label) = match chosen_method {
            Some(m) => (m, None),
            None => {
                let previous = history.iter().filter(|p| p.blind).count();
                let (m, l) = app.blind_assignment(participant, previous);
                (m, Some(l.to_string()))
            }
        };
        let record = SessionRecord {
            session_id: uuid::Uuid::new_v4().simple().to_string(),
            participant_id: participant.to_string(),
            user_level: req.level,
            method,
            label,
            offered_topics: offered,
            consent: req.consent,
            created_at: app.now(),
        };
        let state = SessionState::new(record, topic.clone());
        app.store.create(state.clone()).map_err(ApiError::storage)?;
        history.push(ParticipantSession { session_id: state.record.session_id.clone(), topic, blind });
        state
    };
    Ok((StatusCode::CREATED, Json(view(&app, &state))))
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let entry = app.store.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let guard = entry.lock().await;
    Ok(Json(view(&app, &guard.state)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnRequest {
    pub text: String,
    /// Required on the first turn of a session created without a topic.
    #[serde(default)]
    pub topic: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct TurnResponse {
    pub turn_index: usize,
    pub tutor: String,
    pub turns_remaining: usize,
}

async fn post_turn(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<TurnRequest>, JsonRejection>,
) -> ApiResult<Json<TurnResponse>> {
    let Json(req) = payload?;
    let entry = app.store.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let mut guard = entry.try_lock().map_err(|_| ApiError::conflict("another turn for this session is in progress"))?;
    let state = &guard.state;
    if app.expired(state) {
        return Err(ApiError::new(StatusCode::GONE, "expired", "session has expired"));
    }
    if state.turns.len() >= app.cfg.turn_limit {
        return Err(ApiError::conflict(format!("turn limit of {} reached", app.cfg.turn_limit)));
    }
    let text = req.text.trim().to_string();
    if text.is_empty() || text.chars().count() > MAX_TEXT_CHARS {
        return Err(ApiError::validation(format!("text must be 1 to {MAX_TEXT_CHARS} characters")));
    }
    let new_topic = match (&state.topic, req.topic.as_deref().map(str::trim)) {
        (Some(current), Some(t)) if t != current => {
            return Err(ApiError::validation("the session topic is already set"));
        }
        (Some(_), _) => None,
        (None, None) => return Err(ApiError::validation("choose one of the offered topics with the first turn")),
        (None, Some(t)) => {
            if !state.record.offered_topics.iter().any(|o| o == t) {
                return Err(ApiError::validation("topic is not one of the offered topics"));
            }
            let participants = app.participants.lock().expect("participant index poisoned");
            let used = participants
                .get(&state.record.participant_id)
                .is_some_and(|h| h.iter().any(|p| p.topic.as_deref() == Some(t)));
            if used {
                return Err(ApiError::conflict("topic already used by this participant"));
            }
            Some(t.to_string())
        }
    };

    let mut history: Vec<ChatTurn> = Vec::with_capacity(state.turns.len() * 2 + 1);
    for t in &state.turns {
        history.push(ChatTurn { role: Role::Student, text: t.student.clone() });
        history.push(ChatTurn { role: Role::Tutor, text: t.tutor.clone() });
    }
    history.push(ChatTurn { role: Role::Student, text: text.clone() });
    let turn_index = state.turns.len() + 1;
    let (method, level, blind) = (state.record.method, state.record.user_level, state.record.label.is_some());
    let seed = sub_seed(app.session_seed(&id), turn_index as u64);

    let engine = app.engine.clone();
    let generated = tokio::task::spawn_blocking(move || {
        let reply = engine.respond(method, level, &history, seed).map_err(|e| e.to_string())?;
        let tokens = engine.tokenizer.tokenize(&reply.text).map_err(|e| e.to_string())?;
        let tmr = token_miss_rate(&tokens, &engine.lexicon, level).tmr;
        Ok::<_, String>((reply.text, tokens, tmr))
    })
    .await
    .map_err(|e| e.to_string())
    .and_then(|r| r);
    let (tutor, tutor_tokens, estimated_tmr) = generated.map_err(|e| {
        log::warn!("session {id}: generation failed: {e}");
        let message =
            if blind { "tutor generation failed".to_string() } else { format!("tutor generation failed: {e}") };
        ApiError::new(StatusCode::BAD_GATEWAY, "generation_failed", message)
    })?;

    let now = app.now();
    if let Some(topic) = &new_topic {
        guard
            .record(Event::TopicChosen { topic: topic.clone(), at: now }, app.cfg.compact_every)
            .map_err(ApiError::storage)?;
        let mut participants = app.participants.lock().expect("participant index poisoned");
        if let Some(h) = participants.get_mut(&guard.state.record.participant_id) {
            if let Some(slot) = h.iter_mut().find(|p| p.session_id == id) {
                slot.topic = Some(topic.clone());
            }
        }
    }
    let turn =
        TurnRecord { turn_index, student: text, tutor: tutor.clone(), tutor_tokens, estimated_tmr, created_at: now };
    guard.record(Event::Turn { turn }, app.cfg.compact_every).map_err(ApiError::storage)?;
    Ok(Json(TurnResponse { turn_index, tutor, turns_remaining: app.cfg.turn_limit - turn_index }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRequest {
    pub turn_index: usize,
    #[serde(default)]
    pub spans: Vec<Span>,
    pub understood_overall: bool,
}

async fn post_annotation(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<AnnotationRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<AnnotationView>)> {
    let Json(req) = payload?;
    let entry = app.store.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let mut guard = entry.lock().await;
    if app.expired(&guard.state) {
        return Err(ApiError::new(StatusCode::GONE, "expired", "session has expired"));
    }
    let turn = guard
        .state
        .turns
        .iter()
        .find(|t| t.turn_index == req.turn_index)
        .ok_or_else(|| ApiError::validation(format!("no tutor turn {}", req.turn_index)))?;
    let len = turn.tutor_tokens.char_len();
    for s in &req.spans {
        if s.start >= s.end || s.end > len {
            return Err(ApiError::validation(format!(
                "span {}..{} is not a non-empty range within the {len}-character utterance",
                s.start, s.end
            )));
        }
    }
    let tmr = tmr_from_annotation(&turn.tutor_tokens, &req.spans).map_err(|e| ApiError::validation(e.to_string()))?;
    let annotation = AnnotationRecord {
        annotation_id: uuid::Uuid::new_v4().simple().to_string(),
        turn_index: req.turn_index,
        spans: req.spans,
        understood_overall: req.understood_overall,
        tmr,
        supersedes: guard.state.latest_annotation(req.turn_index).map(|a| a.annotation_id.clone()),
        created_at: app.now(),
    };
    let view = AnnotationView::from(&annotation);
    guard.record(Event::Annotation { annotation }, app.cfg.compact_every).map_err(ApiError::storage)?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn post_survey(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<SurveyResponse>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SurveyResponse>)> {
    let Json(answers) = payload?;
    if let Some(field) = answers.out_of_range() {
        return Err(ApiError::validation(format!("{field} must be between 1 and 10")));
    }
    let entry = app.store.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let mut guard = entry.lock().await;
    if guard.state.survey.is_some() {
        return Err(ApiError::conflict("survey already submitted"));
    }
    if guard.state.turns.is_empty() {
        return Err(ApiError::conflict("the survey follows at least one tutor turn"));
    }
    let survey = SurveyRecord { answers, created_at: app.now() };
    guard.record(Event::Survey { survey }, app.cfg.compact_every).map_err(ApiError::storage)?;
    Ok((StatusCode::CREATED, Json(answers)))
}

async fn export(
    State(app): State<Arc<AppState>>,
    filter: Result<Query<ExportFilter>, QueryRejection>,
) -> ApiResult<Json<StudyExport>> {
    let Query(filter) = filter?;
    Ok(Json(build_export(app.states().await, app.cfg.turn_limit, &filter)))
}

async fn health() -> &'static str {
    "ok"
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/turns", post(post_turn))
        .route("/sessions/{id}/annotations", post(post_annotation))
        .route("/sessions/{id}/survey", post(post_survey))
        .route("/export", get(export))
        .with_state(app)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, app: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(app)).await
}
