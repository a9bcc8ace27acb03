//! Session-oriented HTTP API over `attribo_core::session`.
//!
//! Every state change is a batch of events appended to the session's log, fsynced,
//! folded into the in-memory session and broadcast to event-stream subscribers.

mod error;
mod store;

use std::collections::HashMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::{Arc, Mutex as StdMutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{stream, Stream, StreamExt};
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, Mutex, RwLock};
use tokio_stream::wrappers::BroadcastStream;

use attribo_core::bo::{Decision, LoggedEvent, TraceEvent};
use attribo_core::session::{
    init_events, CreateSession, ObservationRequest, ProposalView, Session, SessionStatus,
    SessionView, LIVE_K_CAP,
};

pub use error::ApiError;
use store::SessionLog;

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Upper bound of the live K search.
    pub k_cap: usize,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            k_cap: LIVE_K_CAP,
        }
    }
}

struct Slot {
    session: Session,
    log: SessionLog,
}

struct Entry {
    slot: Mutex<Slot>,
    tx: broadcast::Sender<LoggedEvent>,
}

pub struct AppState {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Entry>>>,
    keys: Mutex<HashMap<String, String>>,
    /// Last K the sample-size check settled on, per dimension.
    k_cache: StdMutex<HashMap<usize, usize>>,
}

type ApiResult<T> = Result<T, ApiError>;

fn now_ms() -> Option<u64> {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .ok()
        .map(|d| d.as_millis() as u64)
}

fn entry(session: Session, log: SessionLog) -> Arc<Entry> {
    let (tx, _) = broadcast::channel(256);
    Arc::new(Entry {
        slot: Mutex::new(Slot { session, log }),
        tx,
    })
}

impl AppState {
    /// Opens the data directory and replays every session log found there.
    pub fn open(config: ServiceConfig) -> ApiResult<Arc<Self>> {
        std::fs::create_dir_all(&config.data_dir)?;
        let mut sessions = HashMap::new();
        let mut keys = HashMap::new();
        for stored in store::load_all(&config.data_dir)? {
            let session = Session::replay(stored.id.clone(), &stored.events)?;
            let log = SessionLog::open(&store::log_path(&config.data_dir, &stored.id))?;
            if let Some(k) = stored.key {
                keys.insert(k, stored.id.clone());
            }
            sessions.insert(stored.id, entry(session, log));
        }
        tracing::info!(sessions = sessions.len(), dir = %config.data_dir.display(), "replayed session logs");
        Ok(Arc::new(AppState {
            config,
            sessions: RwLock::new(sessions),
            keys: Mutex::new(keys),
            k_cache: StdMutex::new(HashMap::new()),
        }))
    }

    async fn get(&self, id: &str) -> ApiResult<Arc<Entry>> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(id.to_string()))
    }

    fn cached_k(&self, dim: usize) -> Option<usize> {
        self.k_cache
            .lock()
            .expect("k cache poisoned")
            .get(&dim)
            .copied()
    }

    fn remember_k(&self, dim: usize, k: usize) {
        self.k_cache
            .lock()
            .expect("k cache poisoned")
            .insert(dim, k);
    }
}

/// Folds events into a copy of the session first, so a rejected batch leaves
/// neither the log nor the state touched.
fn commit(
    slot: &mut Slot,
    tx: &broadcast::Sender<LoggedEvent>,
    events: Vec<TraceEvent>,
) -> ApiResult<()> {
    let logged = slot.session.sequence(events, now_ms());
    let mut next = slot.session.clone();
    for e in &logged {
        next.apply(e.clone())?;
    }
    slot.log.append(&logged)?;
    slot.session = next;
    for e in logged {
        let _ = tx.send(e);
    }
    Ok(())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/propose", post(propose))
        .route("/sessions/{id}/decision", post(decide))
        .route("/sessions/{id}/observation", post(observe))
        .route("/sessions/{id}/events", get(events))
        .with_state(state)
}

pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Json(req): Json<CreateSession>,
) -> ApiResult<impl IntoResponse> {
    let key = headers
        .get(IDEMPOTENCY_HEADER)
        .map(|v| v.to_str().map(str::to_string))
        .transpose()
        .map_err(|_| {
            attribo_core::Error::InvalidConfig("idempotency key must be visible ASCII".into())
        })?;
    // held for the whole create so a retried key cannot race its first use
    let mut keys = state.keys.lock().await;
    if let Some(id) = key.as_ref().and_then(|k| keys.get(k)) {
        let e = state.get(id).await?;
        let view = e.slot.lock().await.session.view()?;
        return Ok((StatusCode::OK, Json(view)));
    }
    let events = tokio::task::spawn_blocking(move || init_events(&req))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let dir = &state.config.data_dir;
    let path = store::log_path(dir, &id);
    let mut slot = Slot {
        session: Session::new(id.clone()),
        log: SessionLog::create(&path)?,
    };
    let (tx, _) = broadcast::channel(256);
    if let Err(e) = commit(&mut slot, &tx, events) {
        let _ = std::fs::remove_file(&path);
        return Err(e);
    }
    if let Some(k) = key {
        store::write_key(dir, &id, &k)?;
        keys.insert(k, id.clone());
    }
    let view = slot.session.view()?;
    tracing::info!(%id, "created session");
    state.sessions.write().await.insert(
        id,
        Arc::new(Entry {
            slot: Mutex::new(slot),
            tx,
        }),
    );
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<SessionView>> {
    let e = state.get(&id).await?;
    let view = e.slot.lock().await.session.view()?;
    Ok(Json(view))
}

async fn propose(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<ProposalView>> {
    let e = state.get(&id).await?;
    let mut slot = e.slot.lock().await;
    if slot.session.status() == SessionStatus::AwaitingDecision {
        if let Some(p) = slot.session.pending_proposal() {
            return Ok(Json(p));
        }
    }
    let job = slot.session.propose_job()?;
    let dim = job.config.space.dim();
    let k = slot.session.report_k(state.cached_k(dim))?;
    let cap = state.config.k_cap.max(k);
    let outcome = tokio::task::spawn_blocking(move || job.run(k, cap))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    if !outcome.sufficient {
        tracing::warn!(%id, k = outcome.k, "report still fails the sample-size check at the K cap");
    }
    state.remember_k(dim, outcome.k);
    commit(&mut slot, &e.tx, outcome.events)?;
    let view = slot
        .session
        .pending_proposal()
        .ok_or_else(|| ApiError::Internal("proposal not logged".into()))?;
    Ok(Json(view))
}

async fn decide(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(decision): Json<Decision>,
) -> ApiResult<Json<SessionView>> {
    let e = state.get(&id).await?;
    let mut slot = e.slot.lock().await;
    let events = slot.session.decide_events(decision)?;
    commit(&mut slot, &e.tx, events)?;
    Ok(Json(slot.session.view()?))
}

async fn observe(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<ObservationRequest>,
) -> ApiResult<Json<SessionView>> {
    let e = state.get(&id).await?;
    let mut slot = e.slot.lock().await;
    let events = slot.session.observe_events(req.psi)?;
    commit(&mut slot, &e.tx, events)?;
    Ok(Json(slot.session.view()?))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    from: u64,
}

fn sse_event(e: &LoggedEvent) -> Event {
    Event::default()
        .id(e.seq.to_string())
        .event(e.event.kind())
        .json_data(e)
        .expect("logged events serialize")
}

/// Backlog from `from`, then live events. A subscriber that falls behind the
/// broadcast buffer is disconnected and can resume with `from`.
async fn events(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let e = state.get(&id).await?;
    let (backlog, rx) = {
        let slot = e.slot.lock().await;
        let backlog: Vec<LoggedEvent> = slot
            .session
            .events()
            .iter()
            .filter(|ev| ev.seq >= q.from)
            .cloned()
            .collect();
        (backlog, e.tx.subscribe())
    };
    let next = backlog.last().map_or(q.from, |ev| ev.seq + 1);
    let live = BroadcastStream::new(rx)
        .take_while(|r| futures::future::ready(r.is_ok()))
        .filter_map(move |r| futures::future::ready(r.ok().filter(|ev| ev.seq >= next)));
    let s = stream::iter(backlog)
        .chain(live)
        .map(|ev| Ok(sse_event(&ev)));
    Ok(Sse::new(s).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}
