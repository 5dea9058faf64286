//! Shared domain types and deterministic utilities.

mod canonical;
mod digest;
mod ops;
mod rng;
mod types;

pub use canonical::{from_json_slice, to_canonical_string, to_canonical_vec, CanonicalError};
pub use digest::{sha256, sha256_hex, sha256_parts, Digest32};
pub use ops::{Action, ActionTaken, ActuationCommand, Alert, CommandState, TelemetryRecord};
pub use rng::{splitmix64, Rng};
pub use types::{
    argmax, normalize, ranges, ClassCatalog, ClassInfo, Diagnosis, Location, Observation,
    PatchImage, SensorReading, Urgency, HEALTHY_RECOMMENDATION, IMAGE_PIXELS, IMAGE_SIDE,
    NUM_CLASSES,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DomainError {
    #[error("invalid value: {0}")]
    Invalid(String),
}

impl DomainError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DomainError::Invalid(msg.into())
    }
}
