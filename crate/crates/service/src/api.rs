use std::collections::HashMap;
use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Path, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cityagent_core::data::FileStore;
use cityagent_core::orchestrator::{
    Catalog, DatasetBundle, DatasetSummary, Intent, LlmConfig, Round, RoundOptions, Session,
    PAYLOAD_SCHEMA_VERSION,
};
use serde::de::{DeserializeOwned, IgnoredAny};
use serde::{Deserialize, Serialize};
use tokio::sync::{watch, Semaphore};
use tokio_util::task::TaskTracker;

use crate::datasets::{
    bundle_from_csv, bundle_from_synth, check_dataset_id, load_catalog, save_bundle,
};
use crate::jobs::{plan_for, run_intent, JobRecord, JobRequest, JobStatus};
use crate::{DatasetUpload, ServiceError, SynthRequest};

pub const SESSION_KIND: &str = "session";
pub const JOB_KIND: &str = "job";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub port: u16,
    pub store_root: PathBuf,
    pub llm: Option<LlmConfig>,
    pub default_seed: u64,
    /// Analyses running at once; also the thread count inside each analysis.
    pub workers: usize,
    /// Jobs finishing within this time are answered inline, others return 202. Zero makes
    /// every job asynchronous.
    pub job_threshold: Duration,
    pub max_body_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            port: 8080,
            store_root: PathBuf::from("cityagent-store"),
            llm: None,
            default_seed: 7,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            job_threshold: Duration::from_secs(2),
            max_body_bytes: 64 << 20,
        }
    }
}

/// Everything the handlers share. Each session is behind its own async mutex, so rounds of
/// one session run one at a time while different sessions proceed concurrently.
pub struct AppState {
    pub config: ServiceConfig,
    store: FileStore,
    catalog: RwLock<Catalog>,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
    jobs: Mutex<HashMap<String, watch::Receiver<JobRecord>>>,
    pool: Arc<Semaphore>,
    tracker: TaskTracker,
}

pub type SharedState = Arc<AppState>;

impl AppState {
    /// Opens the store and loads every dataset in it.
    pub fn new(config: ServiceConfig) -> Result<SharedState, ServiceError> {
        if config.workers == 0 {
            return Err(ServiceError::Config("workers must be positive".into()));
        }
        let store = FileStore::open(&config.store_root)?;
        let catalog = load_catalog(&store)?;
        Ok(Arc::new(Self {
            pool: Arc::new(Semaphore::new(config.workers)),
            config,
            store,
            catalog: RwLock::new(catalog),
            sessions: Mutex::new(HashMap::new()),
            jobs: Mutex::new(HashMap::new()),
            tracker: TaskTracker::new(),
        }))
    }

    pub fn catalog(&self) -> Catalog {
        self.catalog.read().expect("catalog lock").clone()
    }

    fn bundle(&self, id: &str) -> Result<Arc<DatasetBundle>, ServiceError> {
        self.catalog
            .read()
            .expect("catalog lock")
            .get(id)
            .ok_or_else(|| ServiceError::NotFound {
                what: "dataset",
                id: id.into(),
            })
    }

    fn session(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<Session>>, ServiceError> {
        let mut sessions = self.sessions.lock().expect("session lock");
        if let Some(s) = sessions.get(id) {
            return Ok(s.clone());
        }
        let not_found = || ServiceError::NotFound {
            what: "session",
            id: id.into(),
        };
        let record = session_record(id).ok_or_else(not_found)?;
        let session: Session = self.store.load(&record).map_err(|_| not_found())?;
        let session = Arc::new(tokio::sync::Mutex::new(session));
        sessions.insert(id.into(), session.clone());
        Ok(session)
    }

    /// Waits for running jobs after the listener has stopped.
    pub async fn drain(&self) {
        self.tracker.close();
        self.tracker.wait().await;
    }
}

fn session_record(id: &str) -> Option<String> {
    uuid::Uuid::parse_str(id)
        .ok()
        .map(|u| format!("{SESSION_KIND}.{u}"))
}

fn job_record(id: &str) -> Option<String> {
    uuid::Uuid::parse_str(id)
        .ok()
        .map(|u| format!("{JOB_KIND}.{u}"))
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = self.body();
        let status = StatusCode::from_u16(body.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(serde_json::json!({ "error": body }))).into_response()
    }
}

/// JSON body extractor with structured errors: 415 without a JSON content type, 400 for
/// syntax errors, 422 for well-formed JSON that does not fit the request type.
pub struct StrictJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for StrictJson<T> {
    type Rejection = ServiceError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let json = req
            .headers()
            .get(header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.starts_with("application/json"));
        if !json {
            return Err(ServiceError::Rejected {
                status: 415,
                message: "expected Content-Type: application/json".into(),
            });
        }
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ServiceError::Rejected {
                status: e.status().as_u16(),
                message: e.body_text(),
            })?;
        serde_json::from_slice::<IgnoredAny>(&bytes)
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        serde_json::from_slice(&bytes)
            .map(StrictJson)
            .map_err(|e| ServiceError::Validation(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRequest {
    pub datasets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundRequest {
    pub text: String,
    /// Rewrite narratives through the language model, when one is configured.
    #[serde(default)]
    pub polish_narratives: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub payload_schema_version: u32,
}

pub fn router(state: SharedState) -> Router {
    let limit = state.config.max_body_bytes;
    Router::new()
        .route("/health", get(health))
        .route("/datasets", get(list_datasets).post(upload_dataset))
        .route("/datasets/synth", post(synth_dataset))
        .route("/datasets/{id}", get(get_dataset))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/rounds", post(post_round))
        .route("/jobs/{key}", get(get_job).post(post_job))
        .fallback(|| async {
            ServiceError::NotFound {
                what: "route",
                id: String::new(),
            }
        })
        .method_not_allowed_fallback(|| async {
            ServiceError::Rejected {
                status: 405,
                message: "method not allowed".into(),
            }
        })
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then finishes in-flight requests and jobs.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: SharedState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    state.drain().await;
    Ok(())
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        payload_schema_version: PAYLOAD_SCHEMA_VERSION,
    })
}

async fn list_datasets(State(state): State<SharedState>) -> Json<Vec<DatasetSummary>> {
    let catalog = state.catalog();
    Json(
        catalog
            .ids()
            .iter()
            .filter_map(|id| catalog.get(id))
            .map(|b| b.summary())
            .collect(),
    )
}

async fn get_dataset(
    State(state): State<SharedState>,
    Path(id): Path<String>,
) -> Result<Json<DatasetSummary>, ServiceError> {
    Ok(Json(state.bundle(&id)?.summary()))
}

async fn add_bundle(
    state: SharedState,
    id: String,
    build: impl FnOnce() -> Result<DatasetBundle, ServiceError> + Send + 'static,
) -> Result<(StatusCode, Json<DatasetSummary>), ServiceError> {
    check_dataset_id(&id)?;
    if state.bundle(&id).is_ok() {
        return Err(ServiceError::Conflict(format!("dataset {id}")));
    }
    let st = state.clone();
    let summary = blocking(&state, move || {
        let bundle = build()?;
        save_bundle(&st.store, &bundle)?;
        let summary = bundle.summary();
        st.catalog.write().expect("catalog lock").insert(bundle);
        Ok(summary)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn upload_dataset(
    State(state): State<SharedState>,
    StrictJson(upload): StrictJson<DatasetUpload>,
) -> Result<(StatusCode, Json<DatasetSummary>), ServiceError> {
    add_bundle(state, upload.id.clone(), move || bundle_from_csv(&upload)).await
}

async fn synth_dataset(
    State(state): State<SharedState>,
    StrictJson(req): StrictJson<SynthRequest>,
) -> Result<(StatusCode, Json<DatasetSummary>), ServiceError> {
    add_bundle(state, req.id.clone(), move || bundle_from_synth(&req)).await
}

async fn create_session(
    State(state): State<SharedState>,
    StrictJson(req): StrictJson<SessionRequest>,
) -> Result<(StatusCode, Json<Session>), ServiceError> {
    if req.datasets.is_empty() {
        return Err(ServiceError::Validation(
            "a session needs at least one dataset".into(),
        ));
    }
    for d in &req.datasets {
        state.bundle(d)?;
    }
    let id = uuid::Uuid::new_v4().to_string();
    let mut session = Session::new(id.clone(), req.seed.unwrap_or(state.config.default_seed));
    for d in req.datasets {
        session.bind_dataset(d);
    }
    state
        .store
        .put(&format!("{SESSION_KIND}.{id}"), SESSION_KIND, &session)?;
    state
        .sessions
        .lock()
        .expect("session lock")
        .insert(id, Arc::new(tokio::sync::Mutex::new(session.clone())));
    Ok((StatusCode::CREATED, Json(session)))
}

async fn get_session(
    State(state): State<SharedState>,
    Path(id): Path<String>,
) -> Result<Json<Session>, ServiceError> {
    let session = state.session(&id)?;
    let guard = session.lock().await;
    Ok(Json(guard.clone()))
}

async fn post_round(
    State(state): State<SharedState>,
    Path(id): Path<String>,
    StrictJson(req): StrictJson<RoundRequest>,
) -> Result<Json<Round>, ServiceError> {
    let mut session = state.session(&id)?.lock_owned().await;
    let st = state.clone();
    let round = blocking(&state, move || {
        let opts = RoundOptions {
            llm: st.config.llm.clone(),
            workers: st.config.workers,
            polish_narratives: req.polish_narratives,
        };
        let round = session.run_round(&req.text, &st.catalog(), &opts)?.clone();
        st.store.put(
            &format!("{SESSION_KIND}.{}", session.id),
            SESSION_KIND,
            &*session,
        )?;
        Ok(round)
    })
    .await?;
    Ok(Json(round))
}

/// Runs `work` on the blocking pool once a worker slot is free.
async fn blocking<T: Send + 'static>(
    state: &SharedState,
    work: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    let _permit = state
        .pool
        .clone()
        .acquire_owned()
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?;
    tokio::task::spawn_blocking(work)
        .await
        .map_err(|e| ServiceError::Internal(format!("analysis task failed: {e}")))?
}

async fn post_job(
    State(state): State<SharedState>,
    Path(intent): Path<String>,
    StrictJson(req): StrictJson<JobRequest>,
) -> Result<Response, ServiceError> {
    let intent = Intent::parse(&intent).ok_or_else(|| ServiceError::NotFound {
        what: "intent",
        id: intent.clone(),
    })?;
    plan_for(intent, &req)?;
    state.bundle(&req.dataset)?;
    let id = uuid::Uuid::new_v4().to_string();
    let (tx, mut rx) = watch::channel(JobRecord {
        id: id.clone(),
        intent,
        status: JobStatus::Queued,
        result: None,
        error: None,
    });
    state
        .jobs
        .lock()
        .expect("job lock")
        .insert(id.clone(), rx.clone());
    let st = state.clone();
    state.tracker.spawn(async move {
        let worker = st.clone();
        let outcome = blocking(&st.clone(), move || {
            tx.send_modify(|r| r.status = JobStatus::Running);
            let outcome = run_intent(
                &worker.catalog(),
                intent,
                &req,
                worker.config.default_seed,
                worker.config.workers,
            );
            Ok((tx, outcome))
        })
        .await;
        let Ok((tx, outcome)) = outcome else { return };
        let mut record = tx.borrow().clone();
        match outcome {
            Ok(run) => {
                record.status = JobStatus::Succeeded;
                record.result = Some(run);
            }
            Err(e) => {
                record.status = JobStatus::Failed;
                record.error = Some(e.body());
            }
        }
        if let Err(e) = st
            .store
            .put(&format!("{JOB_KIND}.{}", record.id), JOB_KIND, &record)
        {
            tracing::warn!("job {} not persisted: {e}", record.id);
        }
        tx.send_replace(record);
    });
    let threshold = state.config.job_threshold;
    let finished = !threshold.is_zero()
        && tokio::time::timeout(threshold, rx.wait_for(|r| r.status.finished()))
            .await
            .is_ok_and(|r| r.is_ok());
    let record = rx.borrow().clone();
    Ok(match finished {
        true => match &record.error {
            Some(e) => (
                StatusCode::from_u16(e.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
                Json(record),
            )
                .into_response(),
            None => (StatusCode::OK, Json(record)).into_response(),
        },
        false => {
            let mut resp = (StatusCode::ACCEPTED, Json(record)).into_response();
            if let Ok(v) = HeaderValue::from_str(&format!("/jobs/{id}")) {
                resp.headers_mut().insert(header::LOCATION, v);
            }
            resp
        }
    })
}

async fn get_job(
    State(state): State<SharedState>,
    Path(id): Path<String>,
) -> Result<Json<JobRecord>, ServiceError> {
    if let Some(rx) = state.jobs.lock().expect("job lock").get(&id) {
        return Ok(Json(rx.borrow().clone()));
    }
    let not_found = || ServiceError::NotFound {
        what: "job",
        id: id.clone(),
    };
    let record = job_record(&id).ok_or_else(not_found)?;
    state.store.load(&record).map(Json).map_err(|_| not_found())
}
