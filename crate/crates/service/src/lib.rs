//! HTTP API over one project directory.
//!
//! Every mutation is applied to a copy of the project, persisted, and only
//! then published, so a failed request leaves both memory and disk as they
//! were. Mutations of one session are serialized; the provider calls of a
//! generate run outside the project lock.

mod error;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{FromRequest, Path as UrlPath, Query, Request, State};
use axum::http::StatusCode;
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use simhitl_core::ingest::{ingest_image_manifest, ingest_tabular};
use simhitl_core::pipeline::{neighbors, Neighbor, PipelineError};
use simhitl_core::provider::{connect, Provider, ProviderConfig, ProviderError};
use simhitl_core::session::{ReviewAction, Session};
use simhitl_core::simcore::{Similarity, Threshold, VectorIndex};
use simhitl_core::store::{Project, ProjectStore, StoreError, WriterLock};

pub use error::{ApiError, ERROR_CODES};

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("cannot bind {addr}: {cause}")]
    Bind { addr: SocketAddr, cause: std::io::Error },
    #[error("server failed: {0}")]
    Serve(std::io::Error),
}

struct Snapshot {
    project: Arc<Project>,
    /// Bumped on every published mutation; keys the cached index.
    generation: u64,
}

pub struct AppState {
    store: ProjectStore,
    snapshot: RwLock<Snapshot>,
    index: Mutex<Option<(u64, Arc<VectorIndex>)>>,
    provider: Arc<dyn Provider>,
    session_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    _writer: WriterLock,
}

impl AppState {
    /// Loads the project, takes the directory's writer lock and connects the provider.
    pub fn open(project_dir: impl AsRef<Path>, cfg: &ProviderConfig) -> Result<Self, ServiceError> {
        let provider: Arc<dyn Provider> = Arc::from(connect(cfg)?);
        Self::with_provider(project_dir, provider)
    }

    pub fn with_provider(project_dir: impl AsRef<Path>, provider: Arc<dyn Provider>) -> Result<Self, ServiceError> {
        let store = ProjectStore::new(project_dir.as_ref());
        let writer = store.lock()?;
        let loaded = store.load()?;
        for w in &loaded.warnings {
            tracing::warn!(warning = ?w, "project loaded with warnings");
        }
        Ok(Self {
            store,
            snapshot: RwLock::new(Snapshot {
                project: Arc::new(loaded.project),
                generation: 0,
            }),
            index: Mutex::new(None),
            provider,
            session_locks: Mutex::new(HashMap::new()),
            _writer: writer,
        })
    }

    pub fn dir(&self) -> &Path {
        self.store.dir()
    }

    pub fn project(&self) -> Arc<Project> {
        self.snapshot.read().expect("snapshot lock").project.clone()
    }

    fn session_lock(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.session_locks
            .lock()
            .expect("session lock table")
            .entry(id.to_owned())
            .or_default()
            .clone()
    }

    /// Applies `change` to a copy of the project, persists through `persist`,
    /// then publishes the copy.
    fn commit<T>(
        &self,
        change: impl FnOnce(&mut Project) -> Result<T, ApiError>,
        persist: impl FnOnce(&ProjectStore, &Project, &T) -> Result<(), StoreError>,
    ) -> Result<T, ApiError> {
        let mut guard = self.snapshot.write().expect("snapshot lock");
        let mut next = Project::clone(&guard.project);
        let out = change(&mut next)?;
        persist(&self.store, &next, &out).map_err(|e| {
            tracing::error!(error = %e, "persisting a mutation failed");
            ApiError::from(e)
        })?;
        guard.project = Arc::new(next);
        guard.generation += 1;
        Ok(out)
    }

    /// The frozen canonical index, rebuilt on first use after a mutation.
    fn index(&self) -> Result<Arc<VectorIndex>, ApiError> {
        let (project, generation) = {
            let s = self.snapshot.read().expect("snapshot lock");
            (s.project.clone(), s.generation)
        };
        let mut cached = self.index.lock().expect("index lock");
        if let Some((g, index)) = cached.as_ref() {
            if *g == generation {
                return Ok(index.clone());
            }
        }
        let index = Arc::new(project.canonical_index()?);
        *cached = Some((generation, index.clone()));
        Ok(index)
    }
}

type Shared = Arc<AppState>;

/// Runs blocking work (provider calls, disk writes) off the async workers.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

/// JSON body extractor whose rejections are [`ApiError`]s.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(e) => Err(json_rejection(e)),
        }
    }
}

fn json_rejection(e: JsonRejection) -> ApiError {
    ApiError::bad_request(e.body_text())
}

fn query_rejection(e: QueryRejection) -> ApiError {
    ApiError::bad_request(e.body_text())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub project_id: String,
    pub points: usize,
    pub dim: Option<usize>,
}

async fn health(State(st): State<Shared>) -> Json<Health> {
    let p = st.project();
    Json(Health {
        status: "ok".into(),
        project_id: p.project_id.clone(),
        points: p.points.len(),
        dim: p.dim,
    })
}

#[derive(Debug, Deserialize)]
struct IngestRequest {
    kind: String,
    path: PathBuf,
    id_column: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IngestResponse {
    pub ingested: usize,
    pub points: usize,
}

async fn ingest(
    State(st): State<Shared>,
    UrlPath(project_id): UrlPath<String>,
    ApiJson(req): ApiJson<IngestRequest>,
) -> Result<(StatusCode, Json<IngestResponse>), ApiError> {
    if project_id != st.project().project_id {
        return Err(ApiError::new("unknown_project", format!("no project `{project_id}` here"))
            .with_detail("id", project_id));
    }
    let st2 = st.clone();
    let resp = blocking(move || {
        let points = match req.kind.as_str() {
            "tabular" => ingest_tabular(&req.path, req.id_column.as_deref().unwrap_or("id"))?.0,
            "images" | "image" => ingest_image_manifest(&req.path)?,
            other => return Err(ApiError::bad_request(format!("unknown ingest kind `{other}`"))),
        };
        st2.commit(
            |p| {
                let ingested = p.add_points(points)?;
                Ok(IngestResponse {
                    ingested,
                    points: p.points.len(),
                })
            },
            |store, p, _| store.write_points(&p.points),
        )
    })
    .await?;
    Ok((StatusCode::CREATED, Json(resp)))
}

#[derive(Debug, Deserialize)]
struct StartRequest {
    point_ids: Vec<String>,
    interest: String,
    session_id: Option<String>,
}

async fn start_session(
    State(st): State<Shared>,
    ApiJson(req): ApiJson<StartRequest>,
) -> Result<(StatusCode, Json<Session>), ApiError> {
    let st2 = st.clone();
    let session = blocking(move || {
        st2.commit(
            |p| Ok(p.start_session(req.session_id, &req.point_ids, &req.interest)?.clone()),
            |store, _, s| store.write_session(s),
        )
    })
    .await?;
    Ok((StatusCode::CREATED, Json(session)))
}

async fn get_session(State(st): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<Session>, ApiError> {
    Ok(Json(st.project().session(&id)?.clone()))
}

async fn generate(State(st): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<Session>, ApiError> {
    let lock = st.session_lock(&id);
    let _held = lock.lock().await;
    let st2 = st.clone();
    let session = blocking(move || {
        let snapshot = st2.project();
        let prepared = snapshot.prepare_round(&id, st2.provider.as_ref())?;
        st2.commit(
            |p| {
                let output = p.commit_round(prepared)?;
                Ok((output, p.session(&id)?.clone()))
            },
            |store, p, (output, session)| {
                store.append_profiles(p.dim, &output.profiles, &output.embeddings)?;
                store.write_session(session)?;
                store.write_meta(p)
            },
        )
    })
    .await?
    .1;
    Ok(Json(session))
}

#[derive(Debug, Deserialize)]
struct ReviewRequest {
    #[serde(default)]
    feedback: String,
    #[serde(flatten)]
    action: ReviewAction,
}

async fn review(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<String>,
    ApiJson(req): ApiJson<ReviewRequest>,
) -> Result<Json<Session>, ApiError> {
    let lock = st.session_lock(&id);
    let _held = lock.lock().await;
    let st2 = st.clone();
    let session = blocking(move || {
        st2.commit(
            |p| Ok(p.submit_review(&id, &req.feedback, &req.action)?.clone()),
            |store, _, s| store.write_session(s),
        )
    })
    .await?;
    Ok(Json(session))
}

fn default_labeler() -> String {
    "expert".into()
}

#[derive(Debug, Deserialize)]
struct LabelRequest {
    a: String,
    b: String,
    label: Similarity,
    #[serde(default = "default_labeler")]
    labeler: String,
}

async fn label(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<String>,
    ApiJson(req): ApiJson<LabelRequest>,
) -> Result<Json<Session>, ApiError> {
    let lock = st.session_lock(&id);
    let _held = lock.lock().await;
    let st2 = st.clone();
    let session = blocking(move || {
        st2.commit(
            |p| Ok(p.label_pair(&id, &req.a, &req.b, req.label, &req.labeler)?.clone()),
            |store, _, s| store.write_session(s),
        )
    })
    .await?;
    Ok(Json(session))
}

#[derive(Debug, Default, Deserialize)]
struct CalibrateRequest {
    session_id: Option<String>,
}

async fn calibrate(
    State(st): State<Shared>,
    body: axum::body::Bytes,
) -> Result<Json<Threshold>, ApiError> {
    // the body is optional: no body calibrates against every session's labels
    let req: CalibrateRequest = if body.iter().all(u8::is_ascii_whitespace) {
        CalibrateRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?
    };
    let st2 = st.clone();
    let t = blocking(move || {
        st2.commit(
            |p| Ok(p.calibrate(req.session_id.as_deref())?),
            |store, p, _| store.write_meta(p),
        )
    })
    .await?;
    Ok(Json(t))
}

#[derive(Debug, Deserialize)]
struct ThresholdRequest {
    tau: f64,
}

async fn set_threshold(
    State(st): State<Shared>,
    ApiJson(req): ApiJson<ThresholdRequest>,
) -> Result<Json<Threshold>, ApiError> {
    let t = Threshold::expert(req.tau).map_err(PipelineError::from)?;
    let st2 = st.clone();
    blocking(move || {
        st2.commit(
            |p| {
                p.threshold = Some(t);
                Ok(())
            },
            |store, p, _| store.write_meta(p),
        )
    })
    .await?;
    Ok(Json(t))
}

#[derive(Debug, Deserialize)]
struct NeighborQuery {
    k: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NeighborsResponse {
    pub point_id: String,
    pub k: usize,
    pub threshold: Option<Threshold>,
    pub neighbors: Vec<NeighborRow>,
}

/// One neighbor as a similarity score plus its label under the threshold.
#[derive(Debug, Serialize, Deserialize)]
pub struct NeighborRow {
    pub rank: usize,
    pub a: String,
    pub b: String,
    pub score: f64,
    pub label: Option<Similarity>,
}

async fn point_neighbors(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<String>,
    query: Result<Query<NeighborQuery>, QueryRejection>,
) -> Result<Json<NeighborsResponse>, ApiError> {
    let Query(q) = query.map_err(query_rejection)?;
    let k = q.k.unwrap_or(DEFAULT_K);
    if k == 0 {
        return Err(ApiError::bad_request("k must be at least 1"));
    }
    let project = st.project();
    if project.point(&id).is_none() {
        return Err(PipelineError::UnknownPoint(id).into());
    }
    let threshold = project.threshold;
    let st2 = st.clone();
    let point = id.clone();
    let hits: Vec<Neighbor> = blocking(move || {
        let index = st2.index()?;
        Ok(neighbors(&index, &point, k, threshold.as_ref())?)
    })
    .await?;
    Ok(Json(NeighborsResponse {
        neighbors: hits
            .into_iter()
            .map(|n| NeighborRow {
                rank: n.rank,
                a: id.clone(),
                b: n.id,
                score: n.score,
                label: n.label,
            })
            .collect(),
        point_id: id,
        k,
        threshold,
    }))
}

async fn not_found() -> ApiError {
    ApiError::new("not_found", "no such endpoint")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new("method_not_allowed", "method not allowed on this endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/projects/{id}/ingest", post(ingest))
        .route("/sessions", post(start_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/generate", post(generate))
        .route("/sessions/{id}/review", post(review))
        .route("/sessions/{id}/labels", post(label))
        .route("/threshold/calibrate", post(calibrate))
        .route("/threshold", put(set_threshold))
        .route("/points/{id}/neighbors", get(point_neighbors))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(state)
}

/// Serves the API for `project_dir` on `addr` until the process ends.
pub async fn serve(project_dir: impl AsRef<Path>, addr: SocketAddr, cfg: &ProviderConfig) -> Result<(), ServiceError> {
    let state = Arc::new(AppState::open(project_dir, cfg)?);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|cause| ServiceError::Bind { addr, cause })?;
    let local = listener.local_addr().map_err(ServiceError::Serve)?;
    tracing::info!(%local, dir = %state.dir().display(), "serving");
    axum::serve(listener, router(state)).await.map_err(ServiceError::Serve)
}
