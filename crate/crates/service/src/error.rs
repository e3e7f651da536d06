use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use cadelta_core::Error as CoreError;
use serde_json::{json, Value};
use thiserror::Error;

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{what} {id:?} not found")]
    NotFound { what: &'static str, id: String },
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Core(CoreError::Io(e))
    }
}

impl From<serde_json::Error> for ServiceError {
    fn from(e: serde_json::Error) -> Self {
        ServiceError::Core(CoreError::Json(e))
    }
}

impl ServiceError {
    pub fn not_found(what: &'static str, id: impl Into<String>) -> Self {
        ServiceError::NotFound { what, id: id.into() }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Core(e) => e.code(),
            ServiceError::NotFound { .. } => "not_found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Internal(_) => "internal_error",
        }
    }

    /// Input or state problems the caller can fix, as opposed to failures of
    /// the service itself.
    pub fn is_validation(&self) -> bool {
        match self {
            ServiceError::Core(e) => e.is_validation() && !matches!(e, CoreError::Json(_)),
            ServiceError::Internal(_) => false,
            _ => true,
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound { .. } => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
            ServiceError::Core(e) => match e {
                CoreError::MissingLayer(_) => StatusCode::CONFLICT,
                CoreError::AddressOutOfRange { .. } => StatusCode::BAD_REQUEST,
                CoreError::FileNotFound(_) => StatusCode::NOT_FOUND,
                CoreError::Io(_) | CoreError::Json(_) => StatusCode::INTERNAL_SERVER_ERROR,
                _ => StatusCode::UNPROCESSABLE_ENTITY,
            },
        }
    }

    pub fn detail(&self) -> Value {
        match self {
            ServiceError::Core(e) => match e {
                CoreError::CrsMismatch { left, right } => json!({"left": left, "right": right}),
                CoreError::DimensionMismatch { left_w, left_h, right_w, right_h } => {
                    json!({"left": [left_w, left_h], "right": [right_w, right_h]})
                }
                CoreError::LabelOutOfTable(l) => json!({"label": l}),
                CoreError::GeoMismatch { offset_m } => json!({"offset_m": offset_m}),
                CoreError::AddressOutOfRange { z, x, y } => json!({"z": z, "x": x, "y": y}),
                CoreError::WorldFileMalformed { path, .. } | CoreError::Decode { path, .. } => {
                    json!({"file": path.file_name().map(|f| f.to_string_lossy().into_owned())})
                }
                CoreError::MissingLayer(l) => json!({"layer": l}),
                _ => Value::Null,
            },
            ServiceError::NotFound { what, id } => json!({"kind": what, "id": id}),
            _ => Value::Null,
        }
    }

    pub fn body(&self) -> Value {
        json!({"code": self.code(), "message": self.to_string(), "detail": self.detail()})
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}
