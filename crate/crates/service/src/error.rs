use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use simhitl_core::ingest::IngestError;
use simhitl_core::pipeline::PipelineError;
use simhitl_core::prompting::PromptError;
use simhitl_core::provider::ProviderError;
use simhitl_core::session::SessionError;
use simhitl_core::simcore::SimError;
use simhitl_core::store::StoreError;

/// Every code an error response can carry, with its HTTP status.
pub const ERROR_CODES: &[(&str, u16)] = &[
    ("bad_request", 400),
    ("invalid_interest", 400),
    ("invalid_input", 400),
    ("invalid_threshold", 400),
    ("self_pair", 400),
    ("not_found", 404),
    ("unknown_project", 404),
    ("unknown_session", 404),
    ("unknown_point", 404),
    ("no_embedding", 404),
    ("method_not_allowed", 405),
    ("already_accepted", 409),
    ("not_generated", 409),
    ("preceding_round_unreviewed", 409),
    ("session_closed", 409),
    ("session_exists", 409),
    ("duplicate_point", 409),
    ("stale_round", 409),
    ("insufficient_labels", 422),
    ("no_vectors", 422),
    ("internal", 500),
    ("storage_error", 500),
    ("provider_error", 502),
    ("provider_unreachable", 502),
    ("fixture_miss", 502),
    ("tag_count_mismatch", 502),
    ("dim_mismatch", 502),
    ("provider_timeout", 504),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<Map<String, Value>>,
}

impl ApiError {
    /// Panics on a code outside [`ERROR_CODES`].
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        assert!(status_of(code).is_some(), "undocumented error code `{code}`");
        Self {
            code: code.to_owned(),
            message: message.into(),
            details: None,
        }
    }

    pub fn with_detail(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.details.get_or_insert_with(Map::new).insert(key.to_owned(), value.into());
        self
    }

    pub fn status(&self) -> StatusCode {
        status_of(&self.code)
            .and_then(|s| StatusCode::from_u16(s).ok())
            .unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new("bad_request", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new("internal", message)
    }
}

fn status_of(code: &str) -> Option<u16> {
    ERROR_CODES.iter().find(|(c, _)| *c == code).map(|(_, s)| *s)
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self)).into_response()
    }
}

impl From<ProviderError> for ApiError {
    fn from(e: ProviderError) -> Self {
        let code = match &e {
            ProviderError::ProviderUnreachable(_) => "provider_unreachable",
            ProviderError::Timeout => "provider_timeout",
            ProviderError::TagCountMismatch { .. } => "tag_count_mismatch",
            ProviderError::FixtureMiss(_) => "fixture_miss",
            ProviderError::DimMismatch { .. } => "dim_mismatch",
            _ => "provider_error",
        };
        let err = ApiError::new(code, e.to_string());
        match e {
            ProviderError::FixtureMiss(key) => err.with_detail("key", key),
            ProviderError::TagCountMismatch { got, want } => err.with_detail("got", got).with_detail("want", want),
            _ => err,
        }
    }
}

impl From<PromptError> for ApiError {
    fn from(e: PromptError) -> Self {
        ApiError::new("invalid_interest", e.to_string())
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let code = match &e {
            SessionError::EmptyPoints => "invalid_input",
            SessionError::UnknownId(id) => {
                return ApiError::new("unknown_point", e.to_string()).with_detail("id", id.clone())
            }
            SessionError::Prompt(p) => return p.clone().into(),
            SessionError::Provider(p) => return p.clone().into(),
            SessionError::PrecedingRoundUnreviewed => "preceding_round_unreviewed",
            SessionError::AlreadyAccepted => "already_accepted",
            SessionError::NotGenerated => "not_generated",
            SessionError::SelfPair => "self_pair",
            SessionError::SessionClosed => "session_closed",
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<SimError> for ApiError {
    fn from(e: SimError) -> Self {
        let code = match &e {
            SimError::InsufficientLabels(_) => "insufficient_labels",
            SimError::InvalidThreshold(_) => "invalid_threshold",
            SimError::UnknownId(_) => "no_embedding",
            SimError::InvalidK | SimError::TooFewIds => "bad_request",
            SimError::EmptyIndex | SimError::EmptyInput => "no_vectors",
            _ => "internal",
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::DuplicatePoint(_) => "duplicate_point",
            PipelineError::UnknownPoint(_) => "unknown_point",
            PipelineError::UnknownSession(_) => "unknown_session",
            PipelineError::SessionExists(_) => "session_exists",
            PipelineError::InvalidSessionId(_) => "invalid_input",
            PipelineError::StaleRound(_) => "stale_round",
            PipelineError::NoEmbedding(_) => "no_embedding",
            PipelineError::NoVectors => "no_vectors",
            PipelineError::DimMismatch { .. } => "dim_mismatch",
            PipelineError::Session(s) => return s.clone().into(),
            PipelineError::Provider(p) => return p.clone().into(),
            PipelineError::Prompt(p) => return p.clone().into(),
            PipelineError::Sim(s) => return s.clone().into(),
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::new("storage_error", e.to_string())
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        ApiError::new("invalid_input", e.to_string())
    }
}
