use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use reseq_core::ErrorClass;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("no dataset loaded")]
    NoDatasetLoaded,
    #[error("unknown sequence id {0}")]
    UnknownSequence(String),
    #[error("frame {index} out of range for {n} frames")]
    FrameOutOfRange { index: usize, n: usize },
    #[error(transparent)]
    Core(#[from] reseq_core::Error),
    #[error("worker task failed: {0}")]
    Join(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: String,
    kind: &'a str,
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NoDatasetLoaded => StatusCode::CONFLICT,
            ApiError::UnknownSequence(_) | ApiError::FrameOutOfRange { .. } => StatusCode::NOT_FOUND,
            ApiError::Core(e) => match e.class() {
                ErrorClass::OutOfRange | ErrorClass::Config => StatusCode::BAD_REQUEST,
                ErrorClass::Evaluation => StatusCode::UNPROCESSABLE_ENTITY,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
            ApiError::Join(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            ApiError::NoDatasetLoaded => "no_dataset_loaded",
            ApiError::UnknownSequence(_) => "unknown_sequence",
            ApiError::FrameOutOfRange { .. } => "frame_out_of_range",
            ApiError::Core(reseq_core::Error::StartOutOfRange { .. }) => "start_out_of_range",
            ApiError::Core(reseq_core::Error::IndexOutOfRange { .. }) => "index_out_of_range",
            ApiError::Core(_) => "engine_error",
            ApiError::Join(_) => "internal",
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        let body = ErrorBody {
            error: self.to_string(),
            kind: self.kind(),
        };
        (status, Json(body)).into_response()
    }
}
