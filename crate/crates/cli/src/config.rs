//! `--config` file: canonical JSON, every field optional. Command-line flags
//! win over file values.

use std::path::{Path, PathBuf};

use farmlight_core::distill::{PipelineConfig, StageConfig};
use farmlight_edge::EdgePolicy;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageOverride {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
}

impl StageOverride {
    fn apply(&self, c: &mut StageConfig) {
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.momentum {
            c.momentum = v;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageOverrides {
    pub teacher_pretrain: StageOverride,
    pub dpt: StageOverride,
    pub sft: StageOverride,
    pub dft: StageOverride,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalConfig {
    pub data_dir: PathBuf,
    pub artifact_dir: PathBuf,
    pub seed: u64,
    pub cloud_addr: String,
    pub gateway_addr: String,
    pub edge_api_addr: String,
    pub policy: EdgePolicy,
    pub stages: StageOverrides,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        GlobalConfig {
            data_dir: PathBuf::from("data"),
            artifact_dir: PathBuf::from("artifacts"),
            seed: 7,
            cloud_addr: "127.0.0.1:7700".into(),
            gateway_addr: "127.0.0.1:7701".into(),
            edge_api_addr: "127.0.0.1:8080".into(),
            policy: EdgePolicy::default(),
            stages: StageOverrides::default(),
        }
    }
}

/// `host:port` with a non-empty host and a u16 port.
pub fn check_addr(addr: &str) -> Result<(), CliError> {
    let bad = || CliError::Config(format!("address {addr:?} is not host:port"));
    let (host, port) = addr.rsplit_once(':').ok_or_else(bad)?;
    if host.is_empty() || port.parse::<u16>().is_err() {
        return Err(bad());
    }
    Ok(())
}

impl GlobalConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(GlobalConfig::default());
        };
        let bytes = std::fs::read(path).map_err(CliError::io(path))?;
        let cfg: GlobalConfig = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for a in [&self.cloud_addr, &self.gateway_addr, &self.edge_api_addr] {
            check_addr(a)?;
        }
        self.policy
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.pipeline_config()
            .stages()
            .iter()
            .try_for_each(|c| c.validate())
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        let mut p = PipelineConfig::with_seed(self.seed);
        self.stages.teacher_pretrain.apply(&mut p.teacher);
        self.stages.dpt.apply(&mut p.dpt);
        self.stages.sft.apply(&mut p.sft);
        self.stages.dft.apply(&mut p.dft);
        p
    }
}
