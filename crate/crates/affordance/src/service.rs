//! HTTP session service.
//!
//! One service owns one session directory. Mutations hold the session write
//! lock for the whole compute-and-save step, so readers always see a state
//! whose artifacts are on disk. Projection runs on a blocking thread and is
//! reported as pending until it lands.

use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;
use tokio::task::JoinHandle;

use crate::config::PipelineConfig;
use crate::error::Error;
use crate::formats::{self, LabelsFile, RelabeledRecord};
use crate::pipeline::{self, label_histogram, Resources};
use crate::session::{load_session, save_session, SessionState, Stage};

struct Shared {
    config: PipelineConfig,
    resources: Resources,
    session: RwLock<SessionState>,
    projection_error: RwLock<Option<ErrorBody>>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Shared>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorBody {
    pub error: &'static str,
    pub message: String,
    pub stage: Stage,
}

/// Error response carrying the session stage it happened at.
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(err: Error, current: Stage) -> Self {
        let status = match err.root() {
            Error::Relabel(affordance_core::relabel::RelabelError::UnknownObjectId(_)) => StatusCode::NOT_FOUND,
            Error::StageNotReached { .. } | Error::SessionMismatch { .. } => StatusCode::CONFLICT,
            Error::Schema { .. } | Error::Detection(_) | Error::Relabel(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let stage = err.stage().unwrap_or(current);
        Self {
            status,
            body: ErrorBody {
                error: err.kind(),
                message: err.root().to_string(),
                stage,
            },
        }
    }

    fn not_found(error: &'static str, message: String, stage: Stage) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            body: ErrorBody { error, message, stage },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

impl AppState {
    /// Loads config inputs and opens the session, resuming an existing
    /// session directory when it holds the same session id.
    pub fn open(config: PipelineConfig) -> Result<Self, Error> {
        let resources = Resources::load(&config)?;
        let fresh = pipeline::ingest(&config, &resources.graph)?;
        let state = match load_session(&config.output_dir) {
            Ok(existing) if existing.session_id == fresh.session_id => existing,
            _ => fresh,
        };
        save_session(&state, &config.output_dir)?;
        Ok(Self {
            inner: Arc::new(Shared {
                config,
                resources,
                session: RwLock::new(state),
                projection_error: RwLock::new(None),
            }),
        })
    }

    pub fn output_dir(&self) -> &Path {
        &self.inner.config.output_dir
    }

    /// A clone of the current session.
    pub fn snapshot(&self) -> SessionState {
        self.read().clone()
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, SessionState> {
        self.inner.session.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, SessionState> {
        self.inner.session.write().unwrap_or_else(|e| e.into_inner())
    }

    /// Starts the projection on a blocking thread unless it already exists.
    pub fn start_projection(&self) -> Option<JoinHandle<()>> {
        let (set, stage) = {
            let s = self.read();
            (s.detection_set.clone(), s.stage)
        };
        if stage >= Stage::Projected {
            return None;
        }
        let app = self.clone();
        Some(tokio::task::spawn_blocking(move || {
            let params = app.inner.config.tsne.clone();
            let result = pipeline::compute_projection(&set, &params).and_then(|(layout, trace)| {
                let mut s = app.write();
                if s.stage < Stage::Projected {
                    let mut next = s.clone();
                    pipeline::install_projection(&mut next, layout, trace);
                    save_session(&next, app.output_dir()).map_err(|e| e.at(Stage::Projected))?;
                    *s = next;
                }
                Ok(())
            });
            if let Err(e) = result {
                let body = ApiError::new(e, Stage::Ingested).body;
                *app.inner.projection_error.write().unwrap_or_else(|e| e.into_inner()) = Some(body);
            }
        }))
    }

    /// Applies human labels and recomputes every later stage, then persists.
    /// The session is left untouched on error.
    pub fn submit_labels(&self, labels: &LabelsFile) -> Result<SessionState, (Error, Stage)> {
        let mut s = self.write();
        let mut next = s.clone();
        pipeline::apply_labels_and_finish(&mut next, labels, &self.inner.resources).map_err(|e| (e, s.stage))?;
        save_session(&next, self.output_dir()).map_err(|e| (e, s.stage))?;
        *s = next.clone();
        Ok(next)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", get(get_session))
        .route("/session/projection", get(get_projection))
        .route("/session/objects/{id}/thumbnail", get(get_thumbnail))
        .route("/session/labels", post(post_labels))
        .route("/session/relabel", get(get_relabel))
        .route("/session/report", get(get_report))
        .with_state(state)
}

fn projection_status(app: &AppState, s: &SessionState) -> &'static str {
    if s.stage >= Stage::Projected {
        "ready"
    } else if app.inner.projection_error.read().unwrap_or_else(|e| e.into_inner()).is_some() {
        "failed"
    } else {
        "pending"
    }
}

async fn get_session(State(app): State<AppState>) -> Json<serde_json::Value> {
    let s = app.read();
    Json(json!({
        "session_id": s.session_id,
        "stage": s.stage,
        "prompt": s.prompt,
        "dimension": s.detection_set.dimension(),
        "object_count": s.detection_set.len(),
        "label_set": s.detection_set.label_set(),
        "detector_labels": label_histogram(s.detection_set.objects().iter().map(|o| o.label.as_str())),
        "assignment_count": s.assignments.len(),
        "projection": projection_status(&app, &s),
        "map_score": s.report.as_ref().map(|r| r.map_score),
    }))
}

async fn get_projection(State(app): State<AppState>) -> Response {
    let s = app.read();
    if let Some(layout) = &s.layout {
        return Json(layout).into_response();
    }
    if let Some(body) = app.inner.projection_error.read().unwrap_or_else(|e| e.into_inner()).clone() {
        return (StatusCode::INTERNAL_SERVER_ERROR, Json(body)).into_response();
    }
    (StatusCode::ACCEPTED, Json(json!({ "status": "pending" }))).into_response()
}

fn find_frame_image(dir: &Path, frame_id: &str) -> Option<PathBuf> {
    ["png", "jpg", "jpeg"]
        .iter()
        .map(|ext| dir.join(format!("{frame_id}.{ext}")))
        .find(|p| p.is_file())
}

async fn get_thumbnail(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let (object, stage) = {
        let s = app.read();
        (s.detection_set.get(&id).cloned(), s.stage)
    };
    let object = object.ok_or_else(|| {
        ApiError::new(
            Error::Relabel(affordance_core::relabel::RelabelError::UnknownObjectId(id.clone())),
            stage,
        )
    })?;
    let no_thumb = |why: String| ApiError::not_found("NoThumbnail", why, stage);
    let dir = app
        .inner
        .config
        .image_dir
        .as_deref()
        .ok_or_else(|| no_thumb("no image directory configured".into()))?;
    let path = find_frame_image(dir, &object.frame_id)
        .ok_or_else(|| no_thumb(format!("no image for frame {}", object.frame_id)))?;
    let img = image::open(&path).map_err(|e| no_thumb(format!("{}: {e}", path.display())))?;
    let b = object.bbox;
    let x0 = b.x_min().floor().clamp(0.0, img.width() as f64) as u32;
    let y0 = b.y_min().floor().clamp(0.0, img.height() as f64) as u32;
    let x1 = b.x_max().ceil().clamp(0.0, img.width() as f64) as u32;
    let y1 = b.y_max().ceil().clamp(0.0, img.height() as f64) as u32;
    if x1 <= x0 || y1 <= y0 {
        return Err(no_thumb(format!("box of {id} lies outside its frame image")));
    }
    let crop = img.crop_imm(x0, y0, x1 - x0, y1 - y0);
    let mut png = Vec::new();
    crop.write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
        .map_err(|e| ApiError::new(Error::schema(&path, None, e), stage))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn post_labels(State(app): State<AppState>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let labels: LabelsFile = serde_json::from_slice(&body).map_err(|e| {
        ApiError::new(
            Error::schema("request body", Some(e.line()), e).at(Stage::Labeled),
            app.read().stage,
        )
    })?;
    let app2 = app.clone();
    let result = tokio::task::spawn_blocking(move || app2.submit_labels(&labels))
        .await
        .expect("label task panicked");
    let s = result.map_err(|(e, stage)| ApiError::new(e, stage))?;
    Ok(Json(json!({
        "stage": s.stage,
        "labels": LabelsFile::from_map(Some(s.session_id.clone()), &s.assignments),
        "map_score": s.report.as_ref().map(|r| r.map_score),
    })))
}

#[derive(Serialize)]
struct RelabelResponse {
    labels: LabelsFile,
    records: Vec<RelabeledRecord>,
    verdicts: Vec<affordance_core::spatial::SpatialVerdict>,
}

async fn get_relabel(State(app): State<AppState>) -> ApiResult<Json<RelabelResponse>> {
    let s = app.read();
    s.require(Stage::Relabeled).map_err(|e| ApiError::new(e, s.stage))?;
    Ok(Json(RelabelResponse {
        labels: LabelsFile::from_map(Some(s.session_id.clone()), &s.assignments),
        records: formats::relabeled_records(&s.detection_set, s.relabeled.as_deref().unwrap_or_default()),
        verdicts: s.verdicts.clone().unwrap_or_default(),
    }))
}

async fn get_report(State(app): State<AppState>) -> ApiResult<Json<affordance_core::EvalReport>> {
    let s = app.read();
    s.require(Stage::Evaluated).map_err(|e| ApiError::new(e, s.stage))?;
    Ok(Json(s.report.clone().unwrap_or_else(|| unreachable!("evaluated sessions carry a report"))))
}

/// Opens the session, starts the projection and serves until Ctrl-C.
pub async fn serve(config: PipelineConfig) -> Result<(), Error> {
    let address = format!("{}:{}", config.service.bind_address, config.service.port);
    let app = tokio::task::spawn_blocking(move || AppState::open(config))
        .await
        .expect("session open panicked")?;
    let listener = tokio::net::TcpListener::bind(&address)
        .await
        .map_err(|source| Error::Bind {
            address: address.clone(),
            source,
        })?;
    let local = listener.local_addr().map_err(|source| Error::Bind { address, source })?;
    eprintln!("serving session {} on http://{local}", app.read().session_id);
    app.start_projection();
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io(local.to_string(), e))
}
