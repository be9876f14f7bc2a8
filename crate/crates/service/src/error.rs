use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use grain_attr_core::attribution::AttributionError;
use grain_attr_core::model_client::{ModelError, ScoreError};
use grain_attr_core::segmentation::SegmentationError;
use grain_attr_core::task_store::StoreError;
use serde::{Deserialize, Serialize};

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    /// JSON path of the offending field, for schema violations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl ToString) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.to_string(),
                field: None,
            },
        }
    }

    pub fn bad_request(field: impl Into<String>, message: impl ToString) -> Self {
        let mut err = Self::new(StatusCode::BAD_REQUEST, "invalid_request", message);
        err.body.field = Some(field.into());
        err
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} `{id}` not found"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match &e {
            StoreError::NotFound { .. } | StoreError::InvalidId(_) => {
                Self::new(StatusCode::NOT_FOUND, "not_found", e)
            }
            StoreError::InvalidTask(t) => Self::bad_request(t.field.clone(), &t.message),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e),
        }
    }
}

impl From<SegmentationError> for ApiError {
    fn from(e: SegmentationError) -> Self {
        match e {
            SegmentationError::InputMismatch { .. } => Self::new(StatusCode::CONFLICT, "input_mismatch", e),
            _ => Self::new(StatusCode::BAD_REQUEST, "invalid_segmentation", e),
        }
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        let status = match e {
            ModelError::InvalidSpec(_) => StatusCode::BAD_REQUEST,
            ModelError::BudgetTooSmall { .. } | ModelError::BudgetExhausted { .. } => {
                StatusCode::SERVICE_UNAVAILABLE
            }
            _ => StatusCode::BAD_GATEWAY,
        };
        Self::new(status, e.code(), e)
    }
}

impl From<ScoreError> for ApiError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Model(m) => m.into(),
            other => Self::new(StatusCode::BAD_REQUEST, other.code(), other),
        }
    }
}

impl From<AttributionError> for ApiError {
    fn from(e: AttributionError) -> Self {
        match e {
            AttributionError::Segmentation(s) => s.into(),
            AttributionError::Model(m) => m.into(),
            AttributionError::CapBelowFloor { .. } => {
                let mut err = Self::bad_request("max_samples", &e);
                err.body.code = e.code().into();
                err
            }
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, other.code(), other),
        }
    }
}

/// Parses a JSON body, reporting the path of the first field that fails.
pub fn parse_body<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ApiError::bad_request(if path == "." { String::new() } else { path }, e.inner())
    })
}
