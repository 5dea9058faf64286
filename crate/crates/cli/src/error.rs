use std::path::PathBuf;

use farmlight_core::distill::DistillError;
use farmlight_core::evalbench::EvalError;
use farmlight_core::model::ModelError;
use farmlight_core::synthgen::SynthError;
use farmlight_edge::sim::SimError;
use farmlight_edge::EdgeError;
use farmlight_net::CloudError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing {what} artifact at {}; run `farmlight distill --stage {needs}` first", path.display())]
    MissingArtifact {
        what: &'static str,
        needs: &'static str,
        path: PathBuf,
    },
    #[error("check failed: {0}")]
    Check(String),
    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Edge(#[from] EdgeError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

impl CliError {
    /// 2 for usage and configuration problems, 1 for everything that went
    /// wrong while doing the work.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}
