use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown slide {0:?}")]
    UnknownSlide(String),
    #[error("slide has no channel {0:?}")]
    UnknownStain(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("tile {z}/{x}/{y} is outside the pyramid")]
    TileOutOfRange { z: u32, x: u32, y: u32 },
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownSlide(_) | ServiceError::TileOutOfRange { .. } => StatusCode::NOT_FOUND,
            ServiceError::UnknownStain(_) | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        if let ServiceError::Internal(msg) = &self {
            log::error!("{msg}");
        }
        (self.status(), Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}
