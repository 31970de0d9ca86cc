use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::PatchError;
use crate::schema::SchemaError;

pub type Result<T, E = GraffitiError> = std::result::Result<T, E>;

/// Every failure an implementation of the API can report.
///
/// `NotFound` deliberately carries no detail: missing, deleted and forbidden
/// objects must be indistinguishable to the caller.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail")]
pub enum GraffitiError {
    #[error("not found")]
    NotFound,
    #[error("not authorized")]
    NotAuthorized,
    #[error("session revoked")]
    SessionRevoked,
    #[error("authentication failed")]
    AuthFailed,
    #[error("home unavailable: {0}")]
    HomeUnavailable(String),
    #[error("server unavailable: {0}")]
    Unavailable(String),
    #[error("malformed url: {0}")]
    MalformedUrl(String),
    #[error("invalid object: {}", .0.join("; "))]
    ShapeInvalid(Vec<String>),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("invalid channel: {0}")]
    InvalidChannel(String),
    #[error("too many channels: {0} (max {max})", max = crate::api::MAX_QUERY_CHANNELS)]
    TooManyChannels(usize),
    #[error("cursor expired")]
    CursorExpired,
    #[error("invalid cursor: {0}")]
    InvalidCursor(String),
    #[error("allowed lists are not supported by this implementation")]
    UnsupportedAllowed,
    #[error("tracker unavailable: {0}")]
    TrackerUnavailable(String),
    #[error("blob fetch failed: {0}")]
    BlobFetchFailed(String),
    #[error("no implementation bound for scheme {0}")]
    UnknownScheme(String),
    #[error("scheme already bound: {0}")]
    SchemeConflict(String),
    #[error("storage unavailable: {0}")]
    StorageUnavailable(String),
    #[error("handle already taken")]
    HandleTaken,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl GraffitiError {
    /// Stable machine-readable code used on the wire and by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            GraffitiError::NotFound => "not_found",
            GraffitiError::NotAuthorized => "not_authorized",
            GraffitiError::SessionRevoked => "session_revoked",
            GraffitiError::AuthFailed => "auth_failed",
            GraffitiError::HomeUnavailable(_) => "home_unavailable",
            GraffitiError::Unavailable(_) => "unavailable",
            GraffitiError::MalformedUrl(_) => "malformed_url",
            GraffitiError::ShapeInvalid(_) => "shape_invalid",
            GraffitiError::Patch(_) => "patch_failed",
            GraffitiError::Schema(_) => "schema_invalid",
            GraffitiError::InvalidChannel(_) => "invalid_channel",
            GraffitiError::TooManyChannels(_) => "too_many_channels",
            GraffitiError::CursorExpired => "cursor_expired",
            GraffitiError::InvalidCursor(_) => "invalid_cursor",
            GraffitiError::UnsupportedAllowed => "unsupported_allowed",
            GraffitiError::TrackerUnavailable(_) => "tracker_unavailable",
            GraffitiError::BlobFetchFailed(_) => "blob_fetch_failed",
            GraffitiError::UnknownScheme(_) => "unknown_scheme",
            GraffitiError::SchemeConflict(_) => "scheme_conflict",
            GraffitiError::StorageUnavailable(_) => "storage_unavailable",
            GraffitiError::HandleTaken => "handle_taken",
            GraffitiError::InvalidRequest(_) => "bad_request",
            GraffitiError::Protocol(_) => "protocol_error",
        }
    }
}
