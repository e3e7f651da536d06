//! HTTP interface.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post, put};
use axum::{Json, Router};
use cadelta_core::geo::{CrsTag, LinearUnit};
use cadelta_core::overlay::{OverlayParams, SiteStatus};
use cadelta_core::raster_io::{encode_png, Layer, LayerRole};
use cadelta_core::tiles::{is_blank, render_tile, Resampling, TileAddress};
use cadelta_core::Error as CoreError;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::{Result, ServiceError};
use crate::jobs::JobRegistry;
use crate::pipeline::{self, normalize_steps, ReviewRequest, Step};
use crate::store::ProjectStore;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<ProjectStore>,
    pub jobs: Arc<JobRegistry>,
}

impl AppState {
    pub fn new(store: ProjectStore) -> Self {
        Self { store: Arc::new(store), jobs: Arc::new(JobRegistry::default()) }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/projects", post(create_project).get(list_projects))
        .route("/projects/{id}", get(get_project))
        .route("/projects/{id}/layers", post(upload_layer))
        .route("/projects/{id}/run", post(run_pipeline))
        .route("/projects/{id}/params", put(put_params))
        .route("/projects/{id}/candidates", get(get_candidates))
        .route("/projects/{id}/candidates/{site_id}", patch(patch_candidate))
        .route("/projects/{id}/archive", get(get_archive))
        .route("/projects/{id}/tiles/{layer_id}/{z}/{x}/{y}", get(get_tile))
        .route("/projects/{id}/eval", get(get_eval))
        .route("/projects/{id}/export", get(get_export))
        .route("/jobs/{id}", get(get_job))
        .fallback(|| async { ServiceError::not_found("route", "") })
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ServiceError::Internal(e.to_string()))?
}

/// Runs `f` while holding the project's single-writer lock.
async fn write_locked<T: Send + 'static>(
    state: &AppState,
    project_id: String,
    f: impl FnOnce(&ProjectStore) -> Result<T> + Send + 'static,
) -> Result<T> {
    let store = state.store.clone();
    blocking(move || {
        if !store.exists(&project_id) {
            return Err(ServiceError::not_found("project", project_id));
        }
        let lock = store.lock(&project_id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        f(&store)
    })
    .await
}

fn parse_json<T: DeserializeOwned>(body: &Bytes) -> Result<T> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("invalid JSON body: {e}")))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CrsInput {
    Code(String),
    Tag { code: String, units: Option<LinearUnit> },
}

impl CrsInput {
    fn into_tag(self) -> Result<CrsTag> {
        Ok(match self {
            CrsInput::Code(code) => CrsTag::metric(code)?,
            CrsInput::Tag { code, units } => CrsTag::new(code, units.unwrap_or(LinearUnit::Metre))?,
        })
    }
}

#[derive(Deserialize)]
struct CreateProject {
    name: String,
    crs: CrsInput,
    #[serde(default)]
    params: OverlayParams,
}

async fn create_project(State(state): State<AppState>, body: Bytes) -> Result<Response> {
    let req: CreateProject = parse_json(&body)?;
    let crs = req.crs.into_tag()?;
    // Every pipeline step needs metric units; fail here rather than later.
    crs.ensure_metric()?;
    let store = state.store.clone();
    let project = blocking(move || store.create(&req.name, crs, req.params)).await?;
    Ok((StatusCode::CREATED, Json(json!({"project_id": project.project_id, "project": project}))).into_response())
}

async fn list_projects(State(state): State<AppState>) -> Result<Json<Value>> {
    let store = state.store.clone();
    let ids = blocking(move || store.list()).await?;
    Ok(Json(json!({"projects": ids})))
}

async fn get_project(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>> {
    let store = state.store.clone();
    blocking(move || {
        let project = store.load(&id)?;
        let candidates = store.candidates(&id)?.len();
        let archived = store.archive(&id)?.len();
        Ok(Json(json!({"project": project, "candidate_count": candidates, "archived_count": archived})))
    })
    .await
}

async fn upload_layer(State(state): State<AppState>, Path(id): Path<String>, mut form: Multipart) -> Result<Response> {
    let bad = |e: axum::extract::multipart::MultipartError| ServiceError::BadRequest(format!("invalid multipart body: {e}"));
    let (mut role, mut image, mut world, mut crs) = (None, None, None, None);
    while let Some(field) = form.next_field().await.map_err(bad)? {
        let name = field.name().unwrap_or_default().to_string();
        let data = field.bytes().await.map_err(bad)?;
        match name.as_str() {
            "role" => role = Some(String::from_utf8_lossy(&data).trim().to_string()),
            "image" => image = Some(data),
            "world" => world = Some(data),
            "crs" => crs = Some(String::from_utf8_lossy(&data).trim().to_string()),
            _ => {}
        }
    }
    let role: LayerRole = role.ok_or_else(|| ServiceError::BadRequest("missing field: role".into()))?.parse()?;
    let image = image.ok_or_else(|| ServiceError::BadRequest("missing field: image".into()))?;
    let crs = crs.map(CrsTag::metric).transpose()?;
    let desc = write_locked(&state, id.clone(), move |store| {
        let mut project = store.load(&id)?;
        store.add_layer(&mut project, role, &image, world.as_deref(), crs)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(json!({"layer_id": desc.layer_id, "layer": desc}))).into_response())
}

#[derive(Deserialize, Default)]
struct RunRequest {
    #[serde(default)]
    steps: Vec<Step>,
}

async fn run_pipeline(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response> {
    let req: RunRequest = if body.is_empty() { RunRequest::default() } else { parse_json(&body)? };
    if !state.store.exists(&id) {
        return Err(ServiceError::not_found("project", id));
    }
    let job = state.jobs.submit(&id, normalize_steps(&req.steps));
    let (store, jobs, job_id) = (state.store.clone(), state.jobs.clone(), job.job_id.clone());
    tokio::task::spawn_blocking(move || jobs.execute(&store, &job_id));
    Ok((StatusCode::ACCEPTED, Json(json!({"job_id": job.job_id, "job": job}))).into_response())
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>> {
    let job = state.jobs.get(&id).ok_or_else(|| ServiceError::not_found("job", id))?;
    Ok(Json(serde_json::to_value(job)?))
}

async fn put_params(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<Value>> {
    let params: OverlayParams = parse_json(&body)?;
    let summary = write_locked(&state, id.clone(), move |store| {
        let mut project = store.load(&id)?;
        pipeline::set_params(store, &mut project, params)
    })
    .await?;
    Ok(Json(serde_json::to_value(summary)?))
}

#[derive(Deserialize)]
struct StatusFilter {
    status: Option<String>,
}

async fn get_candidates(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<StatusFilter>,
) -> Result<Json<Value>> {
    let status = q.status.as_deref().map(str::parse::<SiteStatus>).transpose()?;
    let store = state.store.clone();
    blocking(move || {
        let project = store.load(&id)?;
        Ok(Json(pipeline::candidates_geojson(&store, &project, status)?))
    })
    .await
}

async fn get_archive(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>> {
    let store = state.store.clone();
    blocking(move || {
        let project = store.load(&id)?;
        let archive = store.archive(&id)?;
        Ok(Json(cadelta_core::overlay::candidates_to_geojson(&archive, &project.crs)))
    })
    .await
}

async fn patch_candidate(
    State(state): State<AppState>,
    Path((id, site_id)): Path<(String, String)>,
    body: Bytes,
) -> Result<Json<Value>> {
    let req: ReviewRequest = parse_json(&body)?;
    let site = write_locked(&state, id.clone(), move |store| pipeline::review_site(store, &id, &site_id, &req)).await?;
    Ok(Json(json!({
        "site_id": site.site_id,
        "status": site.status,
        "notes": site.notes,
        "updated_at": site.updated_at,
    })))
}

fn parse_tile_coord(s: &str, what: &str) -> Result<u64> {
    s.parse().map_err(|_| ServiceError::BadRequest(format!("invalid tile {what}: {s:?}")))
}

async fn get_tile(
    State(state): State<AppState>,
    Path((id, layer_id, z, x, y)): Path<(String, String, String, String, String)>,
) -> Result<Response> {
    let y = y.strip_suffix(".png").ok_or_else(|| ServiceError::not_found("tile", y.clone()))?;
    let z = parse_tile_coord(&z, "level")?;
    let addr = TileAddress {
        z: u32::try_from(z).map_err(|_| CoreError::AddressOutOfRange { z: u32::MAX, x: 0, y: 0 })?,
        x: parse_tile_coord(&x, "column")?,
        y: parse_tile_coord(y, "row")?,
    };
    addr.validate()?;
    let store = state.store.clone();
    let png = blocking(move || {
        let project = store.load(&id)?;
        let desc = project.find_layer(&layer_id).cloned().ok_or_else(|| ServiceError::not_found("layer", layer_id))?;
        let layer = store.load_layer(&project, &desc)?;
        let resampling = match (&layer, desc.role) {
            (Layer::Mask(_), _) | (_, LayerRole::Diff) => Resampling::Nearest,
            _ => Resampling::Bilinear,
        };
        let tile = render_tile(&layer, resampling, addr)?;
        if is_blank(&tile) {
            return Ok(None);
        }
        Ok(Some(encode_png(&tile)?))
    })
    .await?;
    Ok(match png {
        Some(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

#[derive(Deserialize)]
struct EvalQuery {
    gt: Option<String>,
    pred: Option<String>,
}

async fn get_eval(State(state): State<AppState>, Path(id): Path<String>, Query(q): Query<EvalQuery>) -> Result<Json<Value>> {
    let missing = |p: &str| ServiceError::BadRequest(format!("missing query parameter: {p}"));
    let gt = q.gt.ok_or_else(|| missing("gt"))?;
    let pred = q.pred.ok_or_else(|| missing("pred"))?;
    let report = write_locked(&state, id.clone(), move |store| {
        let mut project = store.load(&id)?;
        pipeline::evaluate_layers(store, &mut project, &gt, &pred)
    })
    .await?;
    Ok(Json(serde_json::to_value(report)?))
}

async fn get_export(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response> {
    let name = format!("attachment; filename=\"{id}.zip\"");
    let store = state.store.clone();
    let bytes = blocking(move || pipeline::export_zip(&store, &id)).await?;
    Ok(([(header::CONTENT_TYPE, "application/zip".to_string()), (header::CONTENT_DISPOSITION, name)], bytes).into_response())
}

/// Binds and serves until the process is stopped.
pub async fn serve(root: std::path::PathBuf, port: u16) -> anyhow::Result<()> {
    let state = AppState::new(ProjectStore::new(root)?);
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await?;
    Ok(())
}
