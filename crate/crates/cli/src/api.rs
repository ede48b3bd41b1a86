//! HTTP API over a [`Workspace`].

use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use medprompt::dataset::Split;
use serde::{Deserialize, Serialize};

use crate::workspace::{AutoRequest, ComposeRequest, GroundApiRequest, ServiceError, SweepRequest, Workspace};

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

type Shared = Arc<Workspace>;
type ApiResult<T> = Result<Json<T>, ServiceError>;

/// Runs `f` on the blocking pool; grounding and sweeps are CPU bound.
async fn blocking<T, F>(ws: Shared, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Workspace) -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&ws))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
        .map(Json)
}

async fn compose(State(ws): State<Shared>, Json(req): Json<ComposeRequest>) -> Response {
    ws.compose(&req).map(Json).into_response()
}

async fn auto(State(ws): State<Shared>, Json(req): Json<AutoRequest>) -> Response {
    blocking(ws, move |w| w.auto_prompts(&req)).await.into_response()
}

async fn ground(State(ws): State<Shared>, Json(req): Json<GroundApiRequest>) -> Response {
    blocking(ws, move |w| w.ground(&req)).await.into_response()
}

async fn datasets(State(ws): State<Shared>) -> Response {
    Json(ws.list_datasets()).into_response()
}

#[derive(Debug, Deserialize)]
struct ImageQuery {
    split: Option<String>,
    limit: Option<usize>,
}

async fn dataset_images(State(ws): State<Shared>, Path(name): Path<String>, Query(q): Query<ImageQuery>) -> Response {
    let split = match q.split.as_deref().map(str::parse::<Split>).transpose() {
        Ok(s) => s,
        Err(e) => return ServiceError::BadRequest(e.to_string()).into_response(),
    };
    ws.images(&name, split, q.limit).map(Json).into_response()
}

async fn image_bytes(State(ws): State<Shared>, Path(id): Path<String>) -> Response {
    let path = match ws.image_path(&id) {
        Ok(p) => p,
        Err(e) => return e.into_response(),
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => {
            let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
                Some("png") => "image/png",
                Some("jpg") | Some("jpeg") => "image/jpeg",
                Some("bmp") => "image/bmp",
                Some("tif") | Some("tiff") => "image/tiff",
                _ => "application/octet-stream",
            };
            ([(header::CONTENT_TYPE, mime)], Body::from(bytes)).into_response()
        }
        Err(e) => ServiceError::Internal(format!("{}: {e}", path.display())).into_response(),
    }
}

async fn runs(State(ws): State<Shared>) -> Response {
    blocking(ws, |w| w.runs()).await.into_response()
}

async fn run(State(ws): State<Shared>, Path(digest): Path<String>) -> Response {
    blocking(ws, move |w| w.run(&digest)).await.into_response()
}

async fn create_sweep(State(ws): State<Shared>, Json(req): Json<SweepRequest>) -> Response {
    blocking(ws, move |w| w.sweep(&req)).await.into_response()
}

async fn sweep(State(ws): State<Shared>, Path(id): Path<String>) -> Response {
    blocking(ws, move |w| w.load_sweep(&id)).await.into_response()
}

pub fn router(ws: Arc<Workspace>) -> Router {
    Router::new()
        .route("/api/prompts/compose", post(compose))
        .route("/api/prompts/auto", post(auto))
        .route("/api/ground", post(ground))
        .route("/api/datasets", get(datasets))
        .route("/api/datasets/{name}/images", get(dataset_images))
        .route("/api/images/{id}", get(image_bytes))
        .route("/api/runs", get(runs))
        .route("/api/runs/{digest}", get(run))
        .route("/api/sweeps", post(create_sweep))
        .route("/api/sweeps/{id}", get(sweep))
        .with_state(ws)
}

/// Serves until ctrl-c.
pub async fn serve(addr: &str, ws: Workspace) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| anyhow::anyhow!("bind {addr}: {e}"))?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(ws)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
