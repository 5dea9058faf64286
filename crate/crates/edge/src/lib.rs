//! Edge node runtime: ingest queue, on-device diagnosis, the alert and
//! actuation policy, a durable telemetry buffer, cloud sync with model
//! hot-swap, and the operator HTTP API.

pub mod api;
pub mod dialogue;
pub mod live;
pub mod policy;
pub mod runtime;
pub mod sim;
pub mod sync;
pub mod telemetry;

use std::path::PathBuf;

use farmlight_core::domain::DomainError;
use farmlight_core::model::ModelError;
use farmlight_core::CommandState;

pub use policy::{decide, Decision, EdgePolicy};
pub use runtime::{
    diagnose_with, AuditEntry, Clock, EdgeConfig, EdgeRuntime, EdgeStatus, ModelSnapshot,
    Processed, QueryAnswer, SimClock, WallClock, QUEUE_CAPACITY,
};
pub use sync::{SyncClient, SyncConfig, SyncStats};
pub use telemetry::TelemetryBuffer;

#[derive(Debug, thiserror::Error)]
pub enum EdgeError {
    #[error("not ready: {0}")]
    NotReady(&'static str),
    #[error("ingest queue is full ({capacity} observations)")]
    Backpressure { capacity: usize },
    #[error("observation {0} was already ingested")]
    DuplicateObservation(String),
    #[error("unknown observation {0}")]
    UnknownObservation(String),
    #[error("unknown command {0}")]
    UnknownCommand(String),
    #[error("unknown alert {0}")]
    UnknownAlert(String),
    #[error("command {command_id} cannot go from {} to {}", from.as_str(), to.as_str())]
    InvalidTransition {
        command_id: String,
        from: CommandState,
        to: CommandState,
    },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("model {0} was trained for a different class catalog")]
    CatalogMismatch(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error(transparent)]
    Model(ModelError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("cannot encode: {0}")]
    Encode(String),
    #[error("a single telemetry record exceeds the frame limit")]
    Oversize,
}

impl From<ModelError> for EdgeError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Integrity => EdgeError::Integrity("artifact digest mismatch".into()),
            e => EdgeError::Model(e),
        }
    }
}

impl EdgeError {
    /// Stable short code for API and wire error replies.
    pub fn code(&self) -> &'static str {
        match self {
            EdgeError::NotReady(_) => "not_ready",
            EdgeError::Backpressure { .. } => "backpressure",
            EdgeError::DuplicateObservation(_) => "duplicate",
            EdgeError::UnknownObservation(_)
            | EdgeError::UnknownCommand(_)
            | EdgeError::UnknownAlert(_) => "not_found",
            EdgeError::InvalidTransition { .. } => "conflict",
            EdgeError::InvalidPolicy(_) => "invalid_policy",
            EdgeError::CatalogMismatch(_) => "catalog_mismatch",
            EdgeError::Integrity(_) => "integrity",
            EdgeError::Model(_) => "model",
            EdgeError::Domain(_) => "invalid",
            EdgeError::Io(..) => "io",
            EdgeError::Encode(_) | EdgeError::Oversize => "encode",
        }
    }
}
