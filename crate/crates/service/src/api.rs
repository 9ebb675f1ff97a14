use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderName, HeaderValue};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Deserialize;
use tower_http::services::ServeDir;

use crate::error::ServiceError;
use crate::render::{encode_png, render_tile, Layer};
use crate::state::{AppState, ClassSummary, HistogramResponse, SlideSummary};

pub const WARNINGS_HEADER: &str = "x-cytogate-warnings";

type Shared = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    let static_dir = state.static_dir.clone();
    let api = Router::new()
        .route("/api/slides", get(list_slides))
        .route("/api/slides/{id}/histogram", get(histogram))
        .route("/api/slides/{id}/thresholds", get(get_thresholds).put(put_thresholds))
        .route("/api/slides/{id}/classes", get(classes))
        .route("/api/slides/{id}/tiles/{z}/{x}/{y}", get(tile))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

async fn list_slides(State(st): Shared) -> Response {
    let body: Vec<SlideSummary> = st.slides.values().map(|s| s.summary()).collect();
    let mut resp = Json(body).into_response();
    if !st.warnings.is_empty() {
        // header values must be visible ASCII
        let joined: String = st
            .warnings
            .join("; ")
            .chars()
            .map(|c| if c.is_ascii() && !c.is_ascii_control() { c } else { '?' })
            .collect();
        if let Ok(v) = HeaderValue::from_str(&joined) {
            resp.headers_mut().insert(HeaderName::from_static(WARNINGS_HEADER), v);
        }
    }
    resp
}

#[derive(Deserialize)]
struct HistogramQuery {
    stain: String,
    bins: Option<usize>,
}

async fn histogram(
    State(st): Shared,
    Path(id): Path<String>,
    Query(q): Query<HistogramQuery>,
) -> Result<Json<HistogramResponse>, ServiceError> {
    let slide = st.slide(&id)?;
    Ok(Json(slide.histogram(&q.stain, q.bins.unwrap_or(64))?))
}

#[derive(serde::Serialize)]
struct ThresholdView {
    thresholds: BTreeMap<String, f64>,
    unset: Vec<String>,
}

async fn get_thresholds(State(st): Shared, Path(id): Path<String>) -> Result<Json<ThresholdView>, ServiceError> {
    let slide = st.slide(&id)?;
    let summary = slide.class_summary(&slide.snapshot());
    Ok(Json(ThresholdView {
        thresholds: summary.thresholds,
        unset: summary.unset,
    }))
}

async fn put_thresholds(
    State(st): Shared,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<ClassSummary>, ServiceError> {
    let slide = st.slide(&id)?.clone();
    let raw: BTreeMap<String, serde_json::Value> = serde_json::from_slice(&body)
        .map_err(|e| ServiceError::BadRequest(format!("body must be a JSON object of stain to number: {e}")))?;
    let mut changes = BTreeMap::new();
    for (stain, v) in raw {
        let n = v
            .as_f64()
            .ok_or_else(|| ServiceError::BadRequest(format!("threshold for {stain:?} is not a finite number")))?;
        changes.insert(stain, n);
    }
    let summary = tokio::task::spawn_blocking(move || {
        let snap = slide.update_thresholds(&changes)?;
        Ok::<_, ServiceError>(slide.class_summary(&snap))
    })
    .await
    .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(Json(summary))
}

async fn classes(State(st): Shared, Path(id): Path<String>) -> Result<Json<ClassSummary>, ServiceError> {
    let slide = st.slide(&id)?;
    Ok(Json(slide.class_summary(&slide.snapshot())))
}

#[derive(Deserialize)]
struct TileQuery {
    layer: String,
}

async fn tile(
    State(st): Shared,
    Path((id, z, x, y)): Path<(String, u32, u32, String)>,
    Query(q): Query<TileQuery>,
) -> Result<Response, ServiceError> {
    let slide = st.slide(&id)?.clone();
    let layer: Layer = q.layer.parse()?;
    let y: u32 = y
        .strip_suffix(".png")
        .unwrap_or(&y)
        .parse()
        .map_err(|_| ServiceError::BadRequest(format!("bad tile row {y:?}")))?;
    let png = tokio::task::spawn_blocking(move || {
        let snap = slide.snapshot();
        encode_png(&render_tile(&slide, &snap, &layer, z, x, y)?)
    })
    .await
    .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}
