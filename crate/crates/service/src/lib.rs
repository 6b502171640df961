//! HTTP front end for interactive grid-driven shape editing.
//!
//! All state is loaded at startup and read-only afterwards; every request is
//! answered from the stored fits, so responses depend only on the request.

pub mod workspace;

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dvg_core::analysis::{pca_deform, AnalysisError};
use dvg_core::api::{DeformRequest, DeformResponse, ErrorBody, MeshPayload, ShapeSummary, TransferRequest};
use dvg_core::registration::{project, WarpMethod};
use dvg_core::shape_io::SampledShape;
use serde::de::DeserializeOwned;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use workspace::{Manifest, ShapeEntry, Workspace, WorkspaceError, WorkspaceShape};

/// JSON schema of the `GET /shapes` response.
pub const SHAPES_SCHEMA: &str = include_str!("../schema/shapes.schema.json");

/// Origins of the editor UI dev server.
pub const DEFAULT_UI_ORIGINS: [&str; 2] = ["http://localhost:5173", "http://127.0.0.1:5173"];

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: Some(message.into()),
        }
    }

    fn unknown_shape(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_shape", format!("no shape with id {id:?}"))
    }

    fn no_model(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "no_model", format!("shape {id:?} has no fitted model"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;
type AppState = Arc<Workspace>;

pub fn router(workspace: Arc<Workspace>) -> Router {
    Router::new()
        .route("/shapes", get(list_shapes))
        .route("/shapes/{id}/mesh", get(shape_mesh))
        .route("/deform", post(deform))
        .route("/transfer", post(transfer))
        .route("/schema/shapes", get(shapes_schema))
        .with_state(workspace)
}

/// CORS for the given UI origins; invalid origin strings are skipped.
pub fn cors_layer(origins: &[String]) -> CorsLayer {
    let origins: Vec<HeaderValue> = origins.iter().filter_map(|o| o.parse().ok()).collect();
    CorsLayer::new()
        .allow_origin(AllowOrigin::list(origins))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE])
}

/// The router with CORS applied.
pub fn app(workspace: Arc<Workspace>, origins: &[String]) -> Router {
    router(workspace).layer(cors_layer(origins))
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))
}

/// Mesh when the shape has one, otherwise its points.
pub fn shape_payload(shape: &SampledShape) -> MeshPayload {
    match &shape.source_mesh {
        Some(m) => MeshPayload::from_mesh(m),
        None => MeshPayload::from_points(&shape.points),
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

async fn list_shapes(State(ws): State<AppState>) -> Json<Vec<ShapeSummary>> {
    Json(
        ws.shapes()
            .iter()
            .map(|s| ShapeSummary {
                id: s.id.clone(),
                point_count: s.shape.points.len(),
                has_mesh: s.shape.source_mesh.is_some(),
            })
            .collect(),
    )
}

async fn shapes_schema() -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/schema+json")], SHAPES_SCHEMA)
}

async fn shape_mesh(State(ws): State<AppState>, Path(id): Path<String>) -> ApiResult<MeshPayload> {
    let shape = ws.shape(&id).ok_or_else(|| ApiError::unknown_shape(&id))?;
    match &shape.shape.source_mesh {
        Some(m) => Ok(Json(MeshPayload::from_mesh(m))),
        None => Err(ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            code: "no_mesh",
            message: None,
        }),
    }
}

/// Validates a deform request and runs it against the stored fit.
pub fn run_deform(ws: &Workspace, req: &DeformRequest) -> Result<DeformResponse, ApiError> {
    let entry = ws.shape(&req.shape_id).ok_or_else(|| ApiError::unknown_shape(&req.shape_id))?;
    let model = entry.model.as_ref().ok_or_else(|| ApiError::no_model(&req.shape_id))?;
    let pca = ws
        .pca()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no_pca", "workspace has no PCA model"))?;
    let coeffs: Vec<f64> = req
        .coeffs
        .iter()
        .map(|c| c.filter(|v| v.is_finite()))
        .collect::<Option<_>>()
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "invalid_coefficient", "coefficients must be finite numbers"))?;
    if coeffs.len() > pca.component_count() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "too_many_coefficients",
            format!("{} coefficients given, the model has {}", coeffs.len(), pca.component_count()),
        ));
    }
    let grid = model.final_grid();
    if grid.resolution() != pca.resolution {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "resolution_mismatch",
            format!("model resolution {} differs from PCA resolution {}", grid.resolution(), pca.resolution),
        ));
    }
    let (shape, grid) = pca_deform(&entry.shape, grid, pca, &coeffs).map_err(internal)?;
    Ok(DeformResponse {
        mesh: shape_payload(&shape),
        grid,
    })
}

/// Projects the source shape into the target's grid with the TPS warp.
pub fn run_transfer(ws: &Workspace, req: &TransferRequest) -> Result<MeshPayload, ApiError> {
    let lookup = |id: &str| {
        let entry = ws.shape(id).ok_or_else(|| ApiError::unknown_shape(id))?;
        let model = entry.model.as_ref().ok_or_else(|| ApiError::no_model(id))?;
        Ok::<_, ApiError>((entry, model))
    };
    let (source, source_model) = lookup(&req.source_id)?;
    let (_, target_model) = lookup(&req.target_id)?;
    let (from, to) = (source_model.final_grid(), target_model.final_grid());
    if from.resolution() != to.resolution() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "resolution_mismatch",
            format!("source resolution {} differs from target resolution {}", from.resolution(), to.resolution()),
        ));
    }
    let moved = project(&source.shape, from, to, WarpMethod::Tps, None).map_err(internal)?;
    Ok(shape_payload(&moved))
}

fn internal(e: impl Into<AnalysisError>) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.into().to_string())
}

async fn deform(State(ws): State<AppState>, body: Bytes) -> ApiResult<DeformResponse> {
    let req: DeformRequest = parse_body(&body)?;
    blocking(move || run_deform(&ws, &req)).await.map(Json)
}

async fn transfer(State(ws): State<AppState>, body: Bytes) -> ApiResult<MeshPayload> {
    let req: TransferRequest = parse_body(&body)?;
    blocking(move || run_transfer(&ws, &req)).await.map(Json)
}
