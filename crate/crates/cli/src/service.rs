//! HTTP/JSON front end for interactive labeling sessions.
//!
//! Endpoints:
//!
//! | method | path                       | body                                  | response        |
//! |--------|----------------------------|---------------------------------------|-----------------|
//! | POST   | `/sessions`                | [`StartRequest`]                      | [`StartResponse`] |
//! | GET    | `/sessions/{id}/query`     |                                       | `QueryStatus`   |
//! | POST   | `/sessions/{id}/label`     | `{"label": "inlier", "query_id": 3}`  | `LabelSummary`  |
//! | GET    | `/sessions/{id}/result`    |                                       | `FinalReport`   |
//! | POST   | `/sessions/{id}/finalize`  |                                       | `FinalReport`   |
//!
//! Errors are `{"error": {"code": ..., "message": ...}}` with status 400
//! (bad input), 404 (unknown session) or 409 (wrong session state).
//!
//! Each session lives behind its own mutex and all model computation runs
//! on the blocking pool, so a query request issued while a label is being
//! processed waits for the next query.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lama_core::dataset::{DatasetManifest, LabelColumn};
use lama_core::labels::{Label, LabeledSet};
use lama_core::session::{InteractiveSession, SessionCheckpoint, SessionConfig};
use lama_core::LamaError;
use log::{info, warn};
use serde::{Deserialize, Serialize};

/// Where the session's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub label_column: Option<LabelColumn>,
    #[serde(default = "default_outlier_label")]
    pub outlier_label: String,
    #[serde(default = "default_header")]
    pub header: bool,
}

fn default_outlier_label() -> String {
    "yes".to_string()
}

fn default_header() -> bool {
    true
}

impl DatasetSpec {
    fn manifest(&self) -> DatasetManifest {
        let name = self.name.clone().unwrap_or_else(|| {
            self.path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".to_string())
        });
        DatasetManifest {
            name,
            path: self.path.clone(),
            label_column: self.label_column.clone(),
            outlier_label: self.outlier_label.clone(),
            header: self.header,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartRequest {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub config: SessionConfig,
    /// Ids the user labels inlier before the first query.
    #[serde(default)]
    pub initial_inliers: Vec<usize>,
    #[serde(default)]
    pub initial_outliers: Vec<usize>,
    /// Draw the initial pool from the dataset's label column instead.
    #[serde(default)]
    pub bootstrap_ground_truth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartResponse {
    pub session_id: String,
    pub n: usize,
    pub dims: usize,
    pub feature_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub label: String,
    #[serde(default)]
    pub query_id: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    dataset: DatasetSpec,
    checkpoint: SessionCheckpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.to_string(),
                message: message.into(),
            },
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "unknown_session",
            format!("no session with id {id}"),
        )
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<LamaError> for ApiError {
    fn from(e: LamaError) -> Self {
        use LamaError::*;
        let (status, code) = match &e {
            NoPendingQuery => (StatusCode::CONFLICT, "no_pending_query"),
            StaleAnswer { .. } => (StatusCode::CONFLICT, "stale_answer"),
            SessionInProgress => (StatusCode::CONFLICT, "session_in_progress"),
            SingleClassLabels => (StatusCode::CONFLICT, "single_class_labels"),
            AlreadyLabeled(_) => (StatusCode::CONFLICT, "already_labeled"),
            Io { .. } => (StatusCode::BAD_REQUEST, "dataset_unreadable"),
            Csv(_) | NonNumeric { .. } | MissingLabelColumn(_) | RaggedRow { .. } => {
                (StatusCode::BAD_REQUEST, "dataset_invalid")
            }
            InsufficientClasses { .. } | TooFewObservations(_) => (StatusCode::BAD_REQUEST, "dataset_invalid"),
            Json(_) => (StatusCode::BAD_REQUEST, "invalid_json"),
            InvalidParameter(_) | UnknownObservation(_) | InfeasibleCost { .. } => {
                (StatusCode::BAD_REQUEST, "invalid_parameter")
            }
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        #[derive(Serialize)]
        struct Envelope {
            error: ErrorBody,
        }
        (self.status, Json(Envelope { error: self.body })).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

struct SessionSlot {
    dataset: DatasetSpec,
    session: Mutex<InteractiveSession>,
}

#[derive(Clone, Default)]
pub struct ServiceState {
    sessions: Arc<RwLock<HashMap<String, Arc<SessionSlot>>>>,
    checkpoint_dir: Option<PathBuf>,
}

impl ServiceState {
    pub fn new(checkpoint_dir: Option<PathBuf>) -> Self {
        ServiceState {
            sessions: Arc::default(),
            checkpoint_dir,
        }
    }

    /// Creates the state and resumes every session checkpointed in `dir`.
    pub fn with_checkpoints(dir: impl Into<PathBuf>) -> anyhow::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let state = Self::new(Some(dir.clone()));
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let Some(id) = path.file_stem().map(|s| s.to_string_lossy().into_owned()) else {
                continue;
            };
            match restore(&path) {
                Ok(slot) => {
                    info!("resumed session {id}");
                    state.insert(id, slot);
                }
                Err(e) => warn!("skipping checkpoint {}: {e:#}", path.display()),
            }
        }
        Ok(state)
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .sessions
            .read()
            .expect("session map poisoned")
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    fn insert(&self, id: String, slot: SessionSlot) {
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(id, Arc::new(slot));
    }

    fn get(&self, id: &str) -> std::result::Result<Arc<SessionSlot>, ApiError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    fn save(&self, id: &str, slot: &SessionSlot, session: &InteractiveSession) -> std::result::Result<(), ApiError> {
        let Some(dir) = &self.checkpoint_dir else {
            return Ok(());
        };
        let file = CheckpointFile {
            dataset: slot.dataset.clone(),
            checkpoint: session.checkpoint(),
        };
        write_atomic(&dir.join(format!("{id}.json")), &file)
            .map_err(|e| ApiError::internal(format!("checkpoint failed: {e}")))
    }
}

fn write_atomic(path: &Path, value: &impl Serialize) -> std::io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(value)?)?;
    std::fs::rename(tmp, path)
}

fn restore(path: &Path) -> anyhow::Result<SessionSlot> {
    let file: CheckpointFile = serde_json::from_slice(&std::fs::read(path)?)?;
    let data = Arc::new(file.dataset.manifest().load(None)?);
    let session = InteractiveSession::restore(data, file.checkpoint)?;
    Ok(SessionSlot {
        dataset: file.dataset,
        session: Mutex::new(session),
    })
}

pub fn router(state: ServiceState) -> Router {
    Router::new()
        .route("/sessions", post(start_session))
        .route("/sessions/{id}/query", get(get_query))
        .route("/sessions/{id}/label", post(post_label))
        .route("/sessions/{id}/result", get(get_result))
        .route("/sessions/{id}/finalize", post(finalize))
        .with_state(state)
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &Bytes) -> std::result::Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_json", e.to_string()))
}

async fn blocking<T, F>(f: F) -> std::result::Result<T, ApiError>
where
    F: FnOnce() -> std::result::Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn start_session(State(state): State<ServiceState>, body: Bytes) -> ApiResult<StartResponse> {
    let req: StartRequest = parse_json(&body)?;
    blocking(move || {
        let data = Arc::new(req.dataset.manifest().load(None)?);
        let session = if req.bootstrap_ground_truth {
            InteractiveSession::bootstrap(data.clone(), req.config)?
        } else {
            let initial = LabeledSet::new(req.initial_inliers, req.initial_outliers)?;
            if initial.is_empty() {
                return Err(ApiError::new(
                    StatusCode::BAD_REQUEST,
                    "empty_initial_pool",
                    "designate initial_inliers/initial_outliers or set bootstrap_ground_truth",
                ));
            }
            InteractiveSession::new(data.clone(), req.config, initial)?
        };
        let id = uuid::Uuid::new_v4().to_string();
        let slot = SessionSlot {
            dataset: req.dataset,
            session: Mutex::new(session),
        };
        {
            let session = slot.session.lock().expect("session poisoned");
            state.save(&id, &slot, &session)?;
        }
        state.insert(id.clone(), slot);
        info!("started session {id} on {}", data.name());
        Ok(Json(StartResponse {
            session_id: id,
            n: data.len(),
            dims: data.dims(),
            feature_names: data.feature_names().to_vec(),
        }))
    })
    .await
}

async fn get_query(State(state): State<ServiceState>, UrlPath(id): UrlPath<String>) -> Response {
    let result = async {
        let slot = state.get(&id)?;
        blocking(move || {
            let mut session = slot.session.lock().expect("session poisoned");
            Ok(Json(session.status()?))
        })
        .await
    }
    .await;
    result.into_response()
}

async fn post_label(State(state): State<ServiceState>, UrlPath(id): UrlPath<String>, body: Bytes) -> Response {
    let result = async {
        let req: LabelRequest = parse_json(&body)?;
        let label: Label = req.label.parse().map_err(|_| {
            ApiError::new(
                StatusCode::BAD_REQUEST,
                "invalid_label",
                format!("unknown label `{}`, expected inlier or outlier", req.label),
            )
        })?;
        let slot = state.get(&id)?;
        blocking(move || {
            let mut session = slot.session.lock().expect("session poisoned");
            let summary = session.submit(req.query_id, label)?;
            state.save(&id, &slot, &session)?;
            Ok(Json(summary))
        })
        .await
    }
    .await;
    result.into_response()
}

async fn get_result(State(state): State<ServiceState>, UrlPath(id): UrlPath<String>) -> Response {
    let result = async {
        let slot = state.get(&id)?;
        blocking(move || {
            let mut session = slot.session.lock().expect("session poisoned");
            Ok(Json(session.result()?.clone()))
        })
        .await
    }
    .await;
    result.into_response()
}

async fn finalize(State(state): State<ServiceState>, UrlPath(id): UrlPath<String>) -> Response {
    let result = async {
        let slot = state.get(&id)?;
        blocking(move || {
            let mut session = slot.session.lock().expect("session poisoned");
            let report = session.finalize()?.clone();
            state.save(&id, &slot, &session)?;
            Ok(Json(report))
        })
        .await
    }
    .await;
    result.into_response()
}

/// Serves until ctrl-c.
pub async fn serve(addr: &str, state: ServiceState) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
