//! Curation API over a [`ProjectStore`]. Reads share the store's read lock;
//! every mutation runs on a blocking thread through the single writer.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use adstory_core::analytics::{UpliftMetric, UpliftRow};
use adstory_core::ingest::Subvertical;
use adstory_core::pipeline::{video_detail, Resources};
use adstory_core::store::{ProjectStore, StoreError};
use adstory_core::storyline::{Cluster, CurationAction, CurationError, CurationEvent};

pub struct AppState {
    pub store: ProjectStore,
    pub resources: Resources,
}

impl AppState {
    pub fn new(store: ProjectStore, resources: Resources) -> Self {
        AppState { store, resources }
    }
}

type Shared = Arc<AppState>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiErrorCode {
    NotFound,
    Conflict,
    Invalid,
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ApiErrorCode,
    pub message: String,
}

impl ApiError {
    fn new(code: ApiErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            code,
            message: message.into(),
        }
    }

    pub fn status(&self) -> StatusCode {
        match self.code {
            ApiErrorCode::NotFound => StatusCode::NOT_FOUND,
            ApiErrorCode::Conflict => StatusCode::CONFLICT,
            ApiErrorCode::Invalid => StatusCode::BAD_REQUEST,
            ApiErrorCode::Unavailable => StatusCode::SERVICE_UNAVAILABLE,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let code = match &e {
            StoreError::Curation(c) => match c {
                CurationError::NotFound(_) => ApiErrorCode::NotFound,
                CurationError::AlreadyMerged(_)
                | CurationError::AlreadyApproved(_)
                | CurationError::ClusterMerged(_)
                | CurationError::SequenceGap { .. } => ApiErrorCode::Conflict,
                CurationError::SelfMerge(_)
                | CurationError::NoSources
                | CurationError::EmptyName
                | CurationError::Unnamed(_) => ApiErrorCode::Invalid,
            },
            _ => ApiErrorCode::Unavailable,
        };
        ApiError::new(code, e.to_string())
    }
}

#[derive(Debug, Deserialize)]
pub struct MergeRequest {
    pub source_ids: Vec<String>,
    pub target_id: String,
    #[serde(default)]
    pub actor: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct RenameRequest {
    pub name: String,
    #[serde(default)]
    pub actor: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
pub struct ApproveRequest {
    #[serde(default)]
    pub actor: Option<String>,
}

/// Result of a curation action: the logged event and the affected cluster.
#[derive(Debug, Serialize, Deserialize)]
pub struct MutationResponse {
    pub event: CurationEvent,
    pub cluster: Cluster,
}

#[derive(Debug, Deserialize)]
pub struct ClusterQuery {
    /// proposed, approved, merged or all; merged clusters are hidden when
    /// unset.
    pub status: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct UpliftQuery {
    pub metric: Option<String>,
    pub subvertical: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UpliftResponse {
    pub rows: Vec<UpliftRow>,
}

const DEFAULT_ACTOR: &str = "anonymous";

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/taxonomy", get(taxonomy))
        .route("/api/clusters", get(list_clusters))
        .route("/api/clusters/merge", post(merge))
        .route("/api/clusters/{id}", get(get_cluster))
        .route("/api/clusters/{id}/rename", post(rename))
        .route("/api/clusters/{id}/approve", post(approve))
        .route("/api/videos/{id}", get(get_video))
        .route("/api/report/uplift", get(uplift_report))
        .with_state(state)
}

/// API routes plus, when `ui_dir` is given, static files for everything
/// else.
pub fn app(state: Shared, ui_dir: Option<PathBuf>) -> Router {
    let api = router(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(addr: SocketAddr, state: Shared, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let app = app(state, ui_dir);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn health(State(s): State<Shared>) -> Json<serde_json::Value> {
    let p = s.store.read();
    Json(serde_json::json!({
        "status": "ok",
        "project": p.manifest.name,
        "schema_version": p.manifest.schema_version,
        "clusters": p.clusters.len(),
        "last_seq_no": p.curation_log.last().map_or(0, |e| e.seq_no),
    }))
}

async fn taxonomy(State(s): State<Shared>) -> Response {
    Json(&s.resources.taxonomy).into_response()
}

async fn list_clusters(State(s): State<Shared>, Query(q): Query<ClusterQuery>) -> Result<Json<Vec<Cluster>>, ApiError> {
    let status = q.status.as_deref().map(str::trim).filter(|v| !v.is_empty());
    if let Some(v) = status {
        if !matches!(v, "proposed" | "approved" | "merged" | "all") {
            return Err(ApiError::new(
                ApiErrorCode::Invalid,
                format!("unknown status `{v}` (expected proposed, approved, merged or all)"),
            ));
        }
    }
    let p = s.store.read();
    let mut out: Vec<Cluster> = p
        .clusters
        .iter()
        .filter(|c| match status {
            None => !c.is_merged(),
            Some("all") => true,
            Some(v) => c.status.key() == v,
        })
        .cloned()
        .collect();
    out.sort_by(|a, b| {
        b.member_video_ids
            .len()
            .cmp(&a.member_video_ids.len())
            .then_with(|| a.cluster_id.cmp(&b.cluster_id))
    });
    Ok(Json(out))
}

async fn get_cluster(State(s): State<Shared>, Path(id): Path<String>) -> Result<Json<Cluster>, ApiError> {
    s.store
        .read()
        .cluster(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::new(ApiErrorCode::NotFound, format!("cluster `{id}` not found")))
}

fn parse_body<T: for<'de> Deserialize<'de> + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    parse_required(body)
}

fn parse_required<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(ApiErrorCode::Invalid, format!("bad request body: {e}")))
}

/// Applies `action` through the writer and returns the event with the
/// cluster it leaves behind.
async fn submit(s: Shared, action: CurationAction, actor: Option<String>, cluster_id: String) -> Result<Json<MutationResponse>, ApiError> {
    let actor = actor
        .map(|a| a.trim().to_string())
        .filter(|a| !a.is_empty())
        .unwrap_or_else(|| DEFAULT_ACTOR.to_string());
    tokio::task::spawn_blocking(move || {
        let event = s.store.submit(action, &actor)?;
        let cluster = s
            .store
            .read()
            .cluster(&cluster_id)
            .cloned()
            .ok_or_else(|| StoreError::Curation(CurationError::NotFound(cluster_id.clone())))?;
        Ok::<_, StoreError>(MutationResponse { event, cluster })
    })
    .await
    .map_err(|e| ApiError::new(ApiErrorCode::Unavailable, e.to_string()))?
    .map(Json)
    .map_err(ApiError::from)
}

async fn merge(State(s): State<Shared>, body: Bytes) -> Result<Json<MutationResponse>, ApiError> {
    let req: MergeRequest = parse_required(&body)?;
    let target = req.target_id.clone();
    let action = CurationAction::Merge {
        source_ids: req.source_ids,
        target_id: req.target_id,
    };
    submit(s, action, req.actor, target).await
}

async fn rename(State(s): State<Shared>, Path(id): Path<String>, body: Bytes) -> Result<Json<MutationResponse>, ApiError> {
    let req: RenameRequest = parse_required(&body)?;
    let action = CurationAction::Rename {
        cluster_id: id.clone(),
        name: req.name,
    };
    submit(s, action, req.actor, id).await
}

async fn approve(State(s): State<Shared>, Path(id): Path<String>, body: Bytes) -> Result<Json<MutationResponse>, ApiError> {
    let req: ApproveRequest = parse_body(&body)?;
    let action = CurationAction::Approve { cluster_id: id.clone() };
    submit(s, action, req.actor, id).await
}

async fn get_video(State(s): State<Shared>, Path(id): Path<String>) -> Response {
    let detail = video_detail(&s.store.read(), &id, &s.resources.arcs);
    match detail {
        Some(d) => Json(d).into_response(),
        None => ApiError::new(ApiErrorCode::NotFound, format!("video `{id}` not found")).into_response(),
    }
}

async fn uplift_report(State(s): State<Shared>, Query(q): Query<UpliftQuery>) -> Result<Json<UpliftResponse>, ApiError> {
    let invalid = |m: String| ApiError::new(ApiErrorCode::Invalid, m);
    let metric = match q.metric.as_deref().filter(|m| !m.trim().is_empty()) {
        Some(m) => Some(m.parse::<UpliftMetric>().map_err(invalid)?),
        None => None,
    };
    let subvertical = match q.subvertical.as_deref().filter(|v| !v.trim().is_empty()) {
        Some(v) => Some(
            Subvertical::ALL
                .into_iter()
                .find(|s| s.key() == v.trim().to_ascii_lowercase())
                .ok_or_else(|| invalid(format!("unknown subvertical `{v}`")))?,
        ),
        None => None,
    };
    let p = s.store.read();
    let report = p
        .uplift
        .as_ref()
        .ok_or_else(|| ApiError::new(ApiErrorCode::NotFound, "no uplift analysis in this project"))?;
    let rows = report
        .rows
        .iter()
        .filter(|r| metric.is_none_or(|m| r.metric == m) && subvertical.is_none_or(|v| r.subvertical == v))
        .cloned()
        .collect();
    Ok(Json(UpliftResponse { rows }))
}
