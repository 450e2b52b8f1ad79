//! HTTP host for simulation sessions.
//!
//! Sessions run in interactive mode: time only advances through `advance`,
//! and reallocation requests wait for a `decision`. Each session's event log
//! is streamed over server-sent events and can be appended to disk.

pub mod wire;

use std::collections::{HashMap, VecDeque};
use std::convert::Infallible;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::de::DeserializeOwned;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::watch;

use trustalloc_core::sim::{write_jsonl, DecisionSource, HumanModel, Session, SimError, ViewOptions};
use trustalloc_core::world::load_scenario;

use wire::{
    AdvanceRequest, AdvanceResponse, DecisionRequest, ErrorBody, ErrorResponse, EventsQuery, PendingResponse,
    SnapshotQuery, SnapshotResponse, StopReason,
};

#[derive(Clone, Debug)]
pub struct Config {
    pub max_sessions: usize,
    /// Directory for `<id>.scenario.json` and `<id>.jsonl` files.
    pub persist_dir: Option<PathBuf>,
    /// Largest `n` accepted by a single advance call.
    pub max_advance: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            max_sessions: 64,
            persist_dir: None,
            max_advance: 100_000,
        }
    }
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("{0}")]
    InvalidScenario(String),
    #[error("malformed request: {0}")]
    BadRequest(String),
    #[error("session limit of {0} reached")]
    SessionLimit(usize),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("persistence failed: {0}")]
    Io(#[from] io::Error),
}

impl ApiError {
    fn status(&self) -> (StatusCode, &'static str) {
        match self {
            ApiError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            ApiError::InvalidScenario(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_scenario"),
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ApiError::SessionLimit(_) => (StatusCode::SERVICE_UNAVAILABLE, "session_limit"),
            ApiError::Sim(SimError::NoPendingRequest) => (StatusCode::CONFLICT, "no_pending_request"),
            ApiError::Sim(SimError::DecisionPending) => (StatusCode::CONFLICT, "decision_pending"),
            ApiError::Sim(SimError::SessionFinished) => (StatusCode::CONFLICT, "session_finished"),
            ApiError::Sim(SimError::Deadlock { .. }) => (StatusCode::CONFLICT, "deadlock"),
            ApiError::Sim(_) => (StatusCode::INTERNAL_SERVER_ERROR, "simulation_error"),
            ApiError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io_error"),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.status();
        let body = ErrorResponse {
            error: ErrorBody {
                code: code.to_owned(),
                message: self.to_string(),
            },
        };
        (status, Json(body)).into_response()
    }
}

struct Hosted {
    session: Mutex<Session>,
    /// Current log length; observers wait on changes.
    len: watch::Sender<usize>,
    log_file: Option<PathBuf>,
}

impl Hosted {
    fn lock(&self) -> std::sync::MutexGuard<'_, Session> {
        self.session.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Persists records from `from` onward and wakes event streams.
    fn commit(&self, session: &Session, from: usize) -> io::Result<()> {
        let fresh = &session.log()[from..];
        if fresh.is_empty() {
            return Ok(());
        }
        if let Some(path) = &self.log_file {
            let file = OpenOptions::new().create(true).append(true).open(path)?;
            let mut out = BufWriter::new(file);
            write_jsonl(&mut out, fresh)?;
            out.flush()?;
        }
        self.len.send_replace(session.log().len());
        Ok(())
    }
}

/// All live sessions.
pub struct Hub {
    config: Config,
    sessions: RwLock<HashMap<String, Arc<Hosted>>>,
}

fn view_options(q: SnapshotQuery) -> ViewOptions {
    ViewOptions {
        reveal: q.reveal,
        bins: q.bins,
        recent: q.recent.unwrap_or(20),
    }
}

fn snapshot_of(id: &str, s: &Session, q: SnapshotQuery) -> SnapshotResponse {
    SnapshotResponse {
        session: id.to_owned(),
        clock: s.clock(),
        snapshot: s.view(view_options(q)),
    }
}

impl Hub {
    pub fn new(config: Config) -> Self {
        Hub {
            config,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    fn get(&self, id: &str) -> Result<Arc<Hosted>, ApiError> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::UnknownSession(id.to_owned()))
    }

    /// Starts an interactive session from a scenario document.
    pub fn create(&self, text: &str, q: SnapshotQuery) -> Result<SnapshotResponse, ApiError> {
        let scenario = load_scenario(text).map_err(|e| ApiError::InvalidScenario(e.to_string()))?;
        let seed = scenario.config.seed;
        let config_text = scenario.config.to_text();
        let session = Session::with_options(scenario, HumanModel::Interactive, seed)
            .map_err(|e| ApiError::InvalidScenario(e.to_string()))?;
        let id = uuid::Uuid::new_v4().simple().to_string();

        let mut sessions = self.sessions.write().unwrap_or_else(|e| e.into_inner());
        if sessions.len() >= self.config.max_sessions {
            return Err(ApiError::SessionLimit(self.config.max_sessions));
        }
        let log_file = match &self.config.persist_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                fs::write(dir.join(format!("{id}.scenario.json")), config_text)?;
                File::create(dir.join(format!("{id}.jsonl")))?;
                Some(dir.join(format!("{id}.jsonl")))
            }
            None => None,
        };
        let hosted = Hosted {
            len: watch::Sender::new(0),
            log_file,
            session: Mutex::new(session),
        };
        let response = {
            let s = hosted.lock();
            hosted.commit(&s, 0)?;
            snapshot_of(&id, &s, q)
        };
        sessions.insert(id, Arc::new(hosted));
        Ok(response)
    }

    pub fn snapshot(&self, id: &str, q: SnapshotQuery) -> Result<SnapshotResponse, ApiError> {
        let hosted = self.get(id)?;
        let s = hosted.lock();
        Ok(snapshot_of(id, &s, q))
    }

    /// Runs up to `n` ticks, stopping early at a pending request or when the
    /// session finishes.
    pub fn advance(&self, id: &str, n: u64, q: SnapshotQuery) -> Result<AdvanceResponse, ApiError> {
        if n > self.config.max_advance {
            return Err(ApiError::BadRequest(format!("n = {n} exceeds the limit of {}", self.config.max_advance)));
        }
        let hosted = self.get(id)?;
        let mut s = hosted.lock();
        let from = s.log().len();
        let mut ticks = 0;
        let stopped = loop {
            if s.is_finished() {
                break StopReason::Finished;
            }
            if s.pending().is_some() {
                break StopReason::Pending;
            }
            if ticks == n {
                break StopReason::Ticks;
            }
            if let Err(e) = s.tick() {
                hosted.commit(&s, from)?;
                return Err(e.into());
            }
            ticks += 1;
        };
        hosted.commit(&s, from)?;
        Ok(AdvanceResponse {
            session: id.to_owned(),
            clock: s.clock(),
            ticks,
            stopped,
            snapshot: s.view(view_options(q)),
        })
    }

    pub fn pending(&self, id: &str) -> Result<PendingResponse, ApiError> {
        let hosted = self.get(id)?;
        let s = hosted.lock();
        Ok(PendingResponse {
            session: id.to_owned(),
            clock: s.clock(),
            pending: s.pending().cloned(),
        })
    }

    pub fn decide(&self, id: &str, allow: bool, q: SnapshotQuery) -> Result<SnapshotResponse, ApiError> {
        let hosted = self.get(id)?;
        let mut s = hosted.lock();
        let from = s.log().len();
        s.decide(allow, DecisionSource::Interactive)?;
        hosted.commit(&s, from)?;
        Ok(snapshot_of(id, &s, q))
    }

    /// Log records from index `from` onward, live: the stream waits for new
    /// records and ends once the session has finished and everything was sent.
    pub fn events(
        &self,
        id: &str,
        from: Option<usize>,
    ) -> Result<impl Stream<Item = (usize, trustalloc_core::sim::Record)> + Send + 'static, ApiError> {
        let hosted = self.get(id)?;
        let rx = hosted.len.subscribe();
        let start = from.unwrap_or_else(|| hosted.lock().log().len());
        let state = (hosted, rx, start, VecDeque::new());
        Ok(futures::stream::unfold(state, |(hosted, mut rx, mut next, mut buf)| async move {
            loop {
                if let Some(item) = buf.pop_front() {
                    return Some((item, (hosted, rx, next, buf)));
                }
                rx.borrow_and_update();
                let finished = {
                    let s = hosted.lock();
                    let log = s.log();
                    if next < log.len() {
                        buf.extend(log[next..].iter().cloned().enumerate().map(|(k, r)| (next + k, r)));
                        next = log.len();
                    }
                    s.is_finished()
                };
                if !buf.is_empty() {
                    continue;
                }
                if finished || rx.changed().await.is_err() {
                    return None;
                }
            }
        }))
    }
}

fn parse_body<T: DeserializeOwned + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(e.to_string()))
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    q.map(|Query(v)| v).map_err(|e| ApiError::BadRequest(e.body_text()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Io(io::Error::other(e.to_string())))?
}

type Shared = State<Arc<Hub>>;

async fn create(State(hub): Shared, q: Result<Query<SnapshotQuery>, QueryRejection>, body: String) -> Response {
    let result = async {
        let q = query(q)?;
        blocking(move || hub.create(&body, q)).await
    }
    .await;
    match result {
        Ok(r) => (StatusCode::CREATED, Json(r)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn snapshot(
    State(hub): Shared,
    Path(id): Path<String>,
    q: Result<Query<SnapshotQuery>, QueryRejection>,
) -> Result<Json<SnapshotResponse>, ApiError> {
    let q = query(q)?;
    blocking(move || hub.snapshot(&id, q)).await.map(Json)
}

async fn advance(
    State(hub): Shared,
    Path(id): Path<String>,
    q: Result<Query<SnapshotQuery>, QueryRejection>,
    body: Bytes,
) -> Result<Json<AdvanceResponse>, ApiError> {
    let q = query(q)?;
    let req: AdvanceRequest = parse_body(&body)?;
    blocking(move || hub.advance(&id, req.n, q)).await.map(Json)
}

async fn pending(State(hub): Shared, Path(id): Path<String>) -> Result<Json<PendingResponse>, ApiError> {
    blocking(move || hub.pending(&id)).await.map(Json)
}

async fn decision(
    State(hub): Shared,
    Path(id): Path<String>,
    q: Result<Query<SnapshotQuery>, QueryRejection>,
    body: Bytes,
) -> Result<Json<SnapshotResponse>, ApiError> {
    let q = query(q)?;
    let req: DecisionRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    blocking(move || hub.decide(&id, req.allow, q)).await.map(Json)
}

/// Server-sent events, one per log record. The SSE id is the record index, so
/// a reconnecting client resumes through `Last-Event-ID` or `?from=`.
async fn events(
    State(hub): Shared,
    Path(id): Path<String>,
    q: Result<Query<EventsQuery>, QueryRejection>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    let q = query(q)?;
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<usize>().ok())
        .map(|last| last + 1);
    let stream = hub.events(&id, q.from.or(resume))?;
    let stream = futures::StreamExt::map(stream, |(index, record)| {
        let data = serde_json::to_string(&record).expect("records serialize");
        Ok(SseEvent::default().id(index.to_string()).data(data))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

pub fn router(hub: Arc<Hub>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/snapshot", get(snapshot))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/pending", get(pending))
        .route("/sessions/{id}/decision", post(decision))
        .route("/sessions/{id}/events", get(events))
        .with_state(hub)
}

pub async fn serve(listener: TcpListener, hub: Arc<Hub>) -> io::Result<()> {
    axum::serve(listener, router(hub)).await
}
