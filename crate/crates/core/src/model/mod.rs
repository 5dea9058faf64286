//! Tiny multimodal classifier: frozen visual encoder, projector, text
//! embedding and a two-layer head, in teacher and student sizes.

mod artifact;
mod config;
mod forward;
mod params;

pub use artifact::{
    compute_version_id, load, save, ArtifactMeta, LoadedModel, StageTag, FORMAT_VERSION, MAGIC,
};
pub use config::{ModelConfig, Role};
pub use forward::{
    encode, forward, forward_encoded, log_softmax, softmax, ForwardTrace, NORM_FLOOR,
};
pub use params::{ModelParams, TensorId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in {tensor}")]
    NumericFault { tensor: &'static str },
    #[error("artifact format error: {0}")]
    Format(String),
    #[error("artifact digest mismatch")]
    Integrity,
    #[error("artifact truncated: need {needed} bytes, have {got}")]
    Truncated { needed: usize, got: usize },
}
