//! HTTP backend for labeling sessions.
//!
//! Each session owns a [`SessionCore`] behind a mutex. Request handlers only
//! touch the core briefly; fitting and query selection run on a blocking
//! worker per session, which wakes waiting `next` requests as results land.

pub mod config;
pub mod error;
pub mod journal;
pub mod session;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use infotuple::selection::SelectionConfig;
use infotuple::types::load_triplets;
use infotuple::{ItemCatalog, ItemId, Triplet};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use tokio::sync::Notify;

pub use config::{CatalogConfig, ServiceConfig};
pub use error::ServiceError;
use journal::{read_journal, JOURNAL_FILE};
use session::{
    CatalogData, Issued, Next, SessionCore, SessionSnapshot, SubmitAck, DEFAULT_BATCH_SIZE,
};

pub struct SessionHandle {
    pub core: Mutex<SessionCore>,
    notify: Notify,
}

pub struct AppState {
    pub config: ServiceConfig,
    pub catalogs: HashMap<String, Arc<CatalogData>>,
    pub sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
}

fn load_catalog(id: &str, cfg: &CatalogConfig) -> Result<CatalogData, ServiceError> {
    let ctx = |e: infotuple::Error| ServiceError::Config(format!("catalog {id}: {e}"));
    let catalog = ItemCatalog::load(&cfg.items).map_err(ctx)?;
    let triplets = |p: &Option<PathBuf>| -> Result<Vec<Triplet>, ServiceError> {
        let Some(p) = p else { return Ok(Vec::new()) };
        let t = load_triplets(p).map_err(ctx)?;
        if let Some(bad) = t.iter().find(|t| {
            [t.head, t.closer, t.farther]
                .iter()
                .any(|i| i.0 >= catalog.len())
        }) {
            return Err(ServiceError::Config(format!(
                "catalog {id}: triplet {bad:?} in {} refers to an item outside the catalog",
                p.display()
            )));
        }
        Ok(t)
    };
    Ok(CatalogData {
        id: id.to_string(),
        preload: triplets(&cfg.preload)?,
        holdout: triplets(&cfg.holdout)?,
        catalog,
    })
}

impl AppState {
    /// Loads every catalog and replays every journaled session.
    pub fn load(config: ServiceConfig) -> Result<Self, ServiceError> {
        let catalogs = config
            .catalogs
            .iter()
            .map(|(id, c)| Ok((id.clone(), Arc::new(load_catalog(id, c)?))))
            .collect::<Result<HashMap<_, _>, ServiceError>>()?;
        let state = Self {
            config,
            catalogs,
            sessions: RwLock::new(HashMap::new()),
        };
        state.replay_sessions()?;
        Ok(state)
    }

    fn sessions_dir(&self) -> PathBuf {
        self.config.data_dir.join("sessions")
    }

    fn replay_sessions(&self) -> Result<(), ServiceError> {
        let root = self.sessions_dir();
        if !root.is_dir() {
            return Ok(());
        }
        let mut sessions = self.sessions.write();
        for entry in std::fs::read_dir(&root)? {
            let dir = entry?.path();
            let path = dir.join(JOURNAL_FILE);
            if !path.is_file() {
                continue;
            }
            let core = self.replay_one(&dir, &path)?;
            sessions.insert(
                core.id.clone(),
                Arc::new(SessionHandle {
                    core: Mutex::new(core),
                    notify: Notify::new(),
                }),
            );
        }
        Ok(())
    }

    fn replay_one(&self, dir: &Path, path: &Path) -> Result<SessionCore, ServiceError> {
        let ctx = |e: ServiceError| ServiceError::Journal(format!("{}: {e}", path.display()));
        let records = read_journal(path)?;
        let catalog_id = match records.first() {
            Some(journal::Record::Created { catalog_id, .. }) => catalog_id,
            _ => return Err(ctx(ServiceError::Journal("missing created record".into()))),
        };
        let catalog = self
            .catalogs
            .get(catalog_id)
            .ok_or_else(|| {
                ctx(ServiceError::Journal(format!(
                    "unknown catalog {catalog_id}"
                )))
            })?
            .clone();
        SessionCore::replay(
            &records,
            catalog,
            self.config.prefetch,
            self.config.snapshot_dim,
            Some(dir),
        )
        .map_err(ctx)
    }

    fn session(&self, id: &str) -> Result<Arc<SessionHandle>, ServiceError> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("unknown session {id}")))
    }
}

/// Starts the session's worker unless one is already running. The worker
/// exits once the core has no job to hand out.
fn kick(handle: &Arc<SessionHandle>) {
    {
        let mut core = handle.core.lock();
        if core.worker_active {
            return;
        }
        core.worker_active = true;
    }
    let handle = handle.clone();
    tokio::task::spawn_blocking(move || {
        loop {
            let job = {
                let mut core = handle.core.lock();
                match core.next_job() {
                    Some(job) => job,
                    None => {
                        core.worker_active = false;
                        break;
                    }
                }
            };
            let out = job.run();
            {
                let mut core = handle.core.lock();
                if let Err(e) = core.apply(out) {
                    core.record_error(e.to_string());
                }
            }
            handle.notify.notify_waiters();
        }
        handle.notify.notify_waiters();
    });
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/next", get(next_query))
        .route("/sessions/{id}/responses", post(submit_response))
        .route("/sessions/{id}/snapshot", get(snapshot))
        .route("/sessions/{id}/journal", get(journal_text))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub catalog: String,
    #[serde(default)]
    pub config: Option<SelectionConfig>,
    #[serde(default)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub catalog: String,
    pub n_items: usize,
    pub tuple_size: usize,
    pub burn_in: usize,
    pub horizon: usize,
    pub batch_size: usize,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CreateSession>, axum::extract::rejection::JsonRejection>,
) -> Result<(StatusCode, Json<SessionCreated>), ServiceError> {
    let Json(req) = body.map_err(|e| ServiceError::Validation(e.body_text()))?;
    let catalog = state
        .catalogs
        .get(&req.catalog)
        .ok_or_else(|| ServiceError::NotFound(format!("unknown catalog {}", req.catalog)))?
        .clone();
    let id = uuid::Uuid::new_v4().simple().to_string();
    let mut core = SessionCore::new(
        id.clone(),
        catalog,
        req.config.unwrap_or_default(),
        req.batch_size.unwrap_or(DEFAULT_BATCH_SIZE),
        state.config.prefetch,
        state.config.snapshot_dim,
    )?;
    core.create_journal(&state.sessions_dir().join(&id))?;
    let plan = core.plan();
    let created = SessionCreated {
        session_id: id.clone(),
        catalog: req.catalog,
        n_items: core.n_items(),
        tuple_size: plan.tuple_size,
        burn_in: plan.burn_in,
        horizon: plan.horizon,
        batch_size: core.batch_size,
    };
    let handle = Arc::new(SessionHandle {
        core: Mutex::new(core),
        notify: Notify::new(),
    });
    state.sessions.write().insert(id, handle.clone());
    kick(&handle);
    Ok((StatusCode::CREATED, Json(created)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ItemView {
    pub id: ItemId,
    pub payload: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchView {
    pub index: usize,
    pub position: usize,
    pub size: usize,
}

/// A query as the labeler sees it. Repeats are not marked as such.
#[derive(Debug, Serialize, Deserialize)]
pub struct QueryView {
    pub query_id: String,
    pub head: ItemView,
    /// Body items in presentation order.
    pub body: Vec<ItemView>,
    pub batch: BatchView,
}

fn view(core: &SessionCore, q: &Issued) -> QueryView {
    let item = |id: ItemId| ItemView {
        id,
        payload: core
            .catalog
            .catalog
            .payload(id)
            .unwrap_or_default()
            .to_string(),
    };
    QueryView {
        query_id: q.query_id.clone(),
        head: item(q.query.head()),
        body: q.presented.iter().map(|&i| item(i)).collect(),
        batch: BatchView {
            index: q.batch,
            position: q.position,
            size: core.batch_size,
        },
    }
}

async fn next_query(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<QueryView>, ServiceError> {
    let handle = state.session(&id)?;
    let deadline = tokio::time::Instant::now() + Duration::from_millis(state.config.wait_ms);
    loop {
        let notified = handle.notify.notified();
        tokio::pin!(notified);
        notified.as_mut().enable();
        let found = {
            let mut core = handle.core.lock();
            match core.next_query()? {
                Next::Query(q) => Some(view(&core, &q)),
                Next::Exhausted => {
                    return Err(ServiceError::Gone(format!(
                        "session {id} has no queries left"
                    )))
                }
                Next::Wait => None,
            }
        };
        kick(&handle);
        if let Some(q) = found {
            return Ok(Json(q));
        }
        if tokio::time::timeout_at(deadline, notified).await.is_err() {
            return Err(ServiceError::Pending(
                "the next query is still being selected".into(),
            ));
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitResponse {
    pub query_id: String,
    pub ranking: Vec<ItemId>,
    pub elapsed_seconds: f64,
}

async fn submit_response(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<SubmitResponse>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<SubmitAck>, ServiceError> {
    let handle = state.session(&id)?;
    let Json(req) = body.map_err(|e| ServiceError::Validation(e.body_text()))?;
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64());
    let ack = handle
        .core
        .lock()
        .submit(&req.query_id, req.ranking, req.elapsed_seconds, now)?;
    kick(&handle);
    Ok(Json(ack))
}

async fn snapshot(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionSnapshot>, ServiceError> {
    let handle = state.session(&id)?;
    let snap = handle.core.lock().snapshot();
    Ok(Json(snap))
}

async fn journal_text(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Response, ServiceError> {
    let handle = state.session(&id)?;
    let path = handle
        .core
        .lock()
        .journal_path()
        .map(Path::to_path_buf)
        .ok_or_else(|| ServiceError::NotFound(format!("session {id} has no journal")))?;
    let text = tokio::fs::read(path).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}
