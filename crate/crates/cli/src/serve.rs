//! HTTP endpoints for the participant survey and static hosting of the
//! survey bundle.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;
use tower_http::services::ServeDir;
use vqa_align::model::{
    read_responses, AnswerFormat, CellIndex, QuestionSpec, RecordKey, ResponseRecord,
    ResponseStatus, RunManifest, SystemKind,
};

use crate::error::PipelineError;

pub const MAX_OPEN_TEXT: usize = 4000;

#[derive(Debug, Clone)]
pub struct SurveyConfig {
    pub manifest: RunManifest,
    pub responses_path: PathBuf,
    pub sessions_path: PathBuf,
    pub video_dir: PathBuf,
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionFlags {
    pub consent_given: bool,
    pub language_confirmed: bool,
    /// Clip replays per video, kept as auxiliary metadata.
    #[serde(default)]
    pub replays: BTreeMap<String, u32>,
}

struct Inner {
    records: BTreeMap<RecordKey, ResponseRecord>,
    sessions: BTreeMap<String, SessionFlags>,
}

pub struct SurveyState {
    cfg: SurveyConfig,
    humans: BTreeSet<String>,
    inner: Mutex<Inner>,
}

impl SurveyState {
    pub fn load(cfg: SurveyConfig) -> Result<Self, PipelineError> {
        cfg.manifest.validate()?;
        let records = if cfg.responses_path.exists() {
            read_responses(&cfg.responses_path)?
        } else {
            Vec::new()
        };
        let sessions = match std::fs::read_to_string(&cfg.sessions_path) {
            Ok(t) => serde_json::from_str(&t)?,
            Err(_) => BTreeMap::new(),
        };
        let humans = cfg
            .manifest
            .systems
            .iter()
            .filter(|s| s.kind == SystemKind::Human)
            .map(|s| s.id.clone())
            .collect();
        Ok(SurveyState {
            humans,
            inner: Mutex::new(Inner {
                records: records.into_iter().map(|r| (r.key(), r)).collect(),
                sessions,
            }),
            cfg,
        })
    }
}

/// Checks an answer against its question format and returns the stored text.
pub fn validate_answer(q: &QuestionSpec, answer: &str) -> Result<String, String> {
    let a = answer.trim();
    match q.options() {
        Some(opts) => opts
            .iter()
            .find(|o| o.as_str() == a)
            .cloned()
            .ok_or_else(|| {
                format!(
                    "question {} accepts only one of: {}",
                    q.qid,
                    opts.join(", ")
                )
            }),
        None if q.answer_format == AnswerFormat::OpenText => {
            if a.is_empty() {
                Err(format!("question {} needs a non-empty answer", q.qid))
            } else if a.chars().count() > MAX_OPEN_TEXT {
                Err(format!("answers are limited to {MAX_OPEN_TEXT} characters"))
            } else {
                Ok(a.to_string())
            }
        }
        None => Err(format!("question {} has no answer options", q.qid)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceClass {
    Desktop,
    Other,
}

pub fn device_class(headers: &HeaderMap) -> DeviceClass {
    let ua = headers
        .get(header::USER_AGENT)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("");
    const MOBILE: [&str; 5] = ["Mobi", "Android", "iPhone", "iPad", "iPod"];
    if MOBILE.iter().any(|m| ua.contains(m)) {
        DeviceClass::Other
    } else {
        DeviceClass::Desktop
    }
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({"error": msg.into()}))).into_response()
}

fn append(path: &std::path::Path, rec: &ResponseRecord) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(
        f,
        "{}",
        serde_json::to_string(rec).expect("record serializes")
    )
}

#[derive(Serialize)]
struct NextQuestion {
    video_id: String,
    qid: u8,
}

async fn session(
    State(s): State<Arc<SurveyState>>,
    Path(token): Path<String>,
    headers: HeaderMap,
) -> Response {
    if !s.humans.contains(&token) {
        return error(StatusCode::UNAUTHORIZED, "unknown participant token");
    }
    let inner = s.inner.lock().await;
    let flags = inner.sessions.get(&token).cloned().unwrap_or_default();
    let mut progress: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for k in inner.records.keys().filter(|k| k.system_id == token) {
        progress.entry(k.video_id.clone()).or_default().push(k.qid);
    }
    let next = s
        .cfg
        .manifest
        .cell_indices()
        .into_iter()
        .find(|c| {
            !progress
                .get(&c.video_id)
                .is_some_and(|q| q.contains(&c.qid))
        })
        .map(|c| NextQuestion {
            video_id: c.video_id,
            qid: c.qid,
        });
    let device = device_class(&headers);
    let state = if device == DeviceClass::Other {
        "blocked"
    } else if !(flags.consent_given && flags.language_confirmed) {
        "consent"
    } else if next.is_none() {
        "complete"
    } else {
        "questions"
    };
    let next = if state == "questions" { next } else { None };
    Json(json!({
        "token": token,
        "state": state,
        "device_class": device,
        "consent_given": flags.consent_given,
        "language_confirmed": flags.language_confirmed,
        "progress": progress,
        "next": next,
        "replays": flags.replays,
    }))
    .into_response()
}

#[derive(Deserialize)]
struct ConsentBody {
    consent_given: bool,
    language_confirmed: bool,
}

async fn persist_sessions(
    s: &SurveyState,
    sessions: &BTreeMap<String, SessionFlags>,
) -> Result<(), Response> {
    let text = serde_json::to_string_pretty(sessions).expect("sessions serialize");
    tokio::fs::write(&s.cfg.sessions_path, text)
        .await
        .map_err(|e| error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

async fn consent(
    State(s): State<Arc<SurveyState>>,
    Path(token): Path<String>,
    Json(body): Json<ConsentBody>,
) -> Response {
    if !s.humans.contains(&token) {
        return error(StatusCode::UNAUTHORIZED, "unknown participant token");
    }
    let mut inner = s.inner.lock().await;
    let flags = inner.sessions.entry(token).or_default();
    flags.consent_given = body.consent_given;
    flags.language_confirmed = body.language_confirmed;
    let flags = flags.clone();
    if let Err(r) = persist_sessions(&s, &inner.sessions).await {
        return r;
    }
    Json(flags).into_response()
}

#[derive(Deserialize)]
struct ReplayBody {
    video_id: String,
}

async fn replay(
    State(s): State<Arc<SurveyState>>,
    Path(token): Path<String>,
    Json(body): Json<ReplayBody>,
) -> Response {
    if !s.humans.contains(&token) {
        return error(StatusCode::UNAUTHORIZED, "unknown participant token");
    }
    if !s.cfg.manifest.videos.iter().any(|v| v.id == body.video_id) {
        return error(
            StatusCode::NOT_FOUND,
            format!("unknown video `{}`", body.video_id),
        );
    }
    let mut inner = s.inner.lock().await;
    let n = {
        let c = inner
            .sessions
            .entry(token)
            .or_default()
            .replays
            .entry(body.video_id)
            .or_default();
        *c += 1;
        *c
    };
    if let Err(r) = persist_sessions(&s, &inner.sessions).await {
        return r;
    }
    Json(json!({"replays": n})).into_response()
}

async fn clip(State(s): State<Arc<SurveyState>>, Path(video_id): Path<String>) -> Response {
    let Some(v) = s.cfg.manifest.videos.iter().find(|v| v.id == video_id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown video `{video_id}`"));
    };
    let rel = std::path::Path::new(&v.source_path_or_uri);
    if rel.is_absolute()
        || rel
            .components()
            .any(|c| matches!(c, std::path::Component::ParentDir))
    {
        return error(
            StatusCode::NOT_FOUND,
            "clip is not served from the video directory",
        );
    }
    let path = s.cfg.video_dir.join(rel);
    match tokio::fs::read(&path).await {
        Ok(bytes) => {
            let mime = match path.extension().and_then(|e| e.to_str()) {
                Some("mp4") => "video/mp4",
                Some("webm") => "video/webm",
                Some("mov") => "video/quicktime",
                _ => "application/octet-stream",
            };
            ([(header::CONTENT_TYPE, mime)], bytes).into_response()
        }
        Err(_) => error(
            StatusCode::NOT_FOUND,
            format!("clip file for `{video_id}` is missing"),
        ),
    }
}

#[derive(Deserialize)]
struct QuestionQuery {
    video_id: Option<String>,
}

async fn questions(State(s): State<Arc<SurveyState>>, Query(q): Query<QuestionQuery>) -> Response {
    let m = &s.cfg.manifest;
    if let Some(v) = &q.video_id {
        if !m.videos.iter().any(|x| &x.id == v) {
            return error(StatusCode::NOT_FOUND, format!("unknown video `{v}`"));
        }
    }
    let list: Vec<_> = m
        .questions
        .iter()
        .map(|qs| {
            let text = q
                .video_id
                .as_ref()
                .and_then(|v| m.question_text(&CellIndex::new(v.clone(), qs.qid)))
                .unwrap_or_else(|| qs.text.clone());
            json!({
                "qid": qs.qid,
                "block": qs.block,
                "text": text,
                "answer_format": qs.answer_format,
                "options": qs.options(),
            })
        })
        .collect();
    Json(json!({"questions": list})).into_response()
}

#[derive(Deserialize)]
struct AnswerBody {
    token: String,
    video_id: String,
    qid: u8,
    answer: String,
}

async fn submit(
    State(s): State<Arc<SurveyState>>,
    headers: HeaderMap,
    Json(body): Json<AnswerBody>,
) -> Response {
    if !s.humans.contains(&body.token) {
        return error(StatusCode::UNAUTHORIZED, "unknown participant token");
    }
    if device_class(&headers) == DeviceClass::Other {
        return error(
            StatusCode::FORBIDDEN,
            "the survey must be completed on a computer",
        );
    }
    let m = &s.cfg.manifest;
    if !m.videos.iter().any(|v| v.id == body.video_id) {
        return error(
            StatusCode::NOT_FOUND,
            format!("unknown video `{}`", body.video_id),
        );
    }
    let Some(q) = m.question(body.qid) else {
        return error(
            StatusCode::NOT_FOUND,
            format!("unknown question {}", body.qid),
        );
    };
    let text = match validate_answer(q, &body.answer) {
        Ok(t) => t,
        Err(msg) => return error(StatusCode::UNPROCESSABLE_ENTITY, msg),
    };
    let mut inner = s.inner.lock().await;
    let flags = inner.sessions.get(&body.token).cloned().unwrap_or_default();
    if !(flags.consent_given && flags.language_confirmed) {
        return error(
            StatusCode::FORBIDDEN,
            "consent and language confirmation are required first",
        );
    }
    let rec = ResponseRecord {
        system_id: body.token,
        video_id: body.video_id,
        qid: body.qid,
        repetition: 0,
        text,
        status: ResponseStatus::Raw,
        normalized_text: None,
        timestamp: vqa_align_harness::now_timestamp(),
    };
    if let Some(old) = inner.records.get(&rec.key()) {
        return if old.text == rec.text {
            (StatusCode::OK, Json(json!({"status": "duplicate"}))).into_response()
        } else {
            error(
                StatusCode::CONFLICT,
                "a different answer was already recorded for this question",
            )
        };
    }
    if let Err(e) = append(&s.cfg.responses_path, &rec) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    }
    inner.records.insert(rec.key(), rec);
    (StatusCode::CREATED, Json(json!({"status": "recorded"}))).into_response()
}

pub fn router(state: Arc<SurveyState>) -> Router {
    let static_dir = state.cfg.static_dir.clone();
    let api = Router::new()
        .route("/api/session/{token}", get(session))
        .route("/api/session/{token}/consent", post(consent))
        .route("/api/session/{token}/replay", post(replay))
        .route("/api/clips/{video_id}", get(clip))
        .route("/api/questions", get(questions))
        .route("/api/responses", post(submit))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(cfg: SurveyConfig, addr: std::net::SocketAddr) -> Result<(), PipelineError> {
    let app = router(Arc::new(SurveyState::load(cfg)?));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| PipelineError::Io(format!("bind {addr}: {e}")))?;
    tracing::info!(%addr, "survey server listening");
    axum::serve(listener, app)
        .await
        .map_err(|e| PipelineError::Io(e.to_string()))
}
