//! `.flsm` artifact: `"FLSM"`, format version byte, u32 LE metadata length,
//! canonical JSON metadata, f32 LE tensors in `TensorId::ALL` order, and a
//! SHA-256 trailer over every preceding byte.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{sha256, sha256_parts, to_canonical_vec};

use super::{ModelConfig, ModelError, ModelParams, TensorId};

pub const MAGIC: &[u8; 4] = b"FLSM";
pub const FORMAT_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 4;
const TRAILER_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTag {
    Init,
    TeacherPretrain,
    Dpt,
    Sft,
    Dft,
}

impl fmt::Display for StageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StageTag::Init => "init",
            StageTag::TeacherPretrain => "teacher_pretrain",
            StageTag::Dpt => "dpt",
            StageTag::Sft => "sft",
            StageTag::Dft => "dft",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub config: ModelConfig,
    pub catalog_digest: String,
    pub version_id: String,
    pub stage: StageTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedModel {
    pub params: ModelParams,
    pub meta: ArtifactMeta,
}

fn tensor_payload(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.parameter_count() * 4);
    for id in TensorId::ALL {
        out.extend(params.tensor_bytes(id));
    }
    out
}

/// First 8 bytes (hex) of SHA-256 over the metadata with an empty
/// `version_id` followed by the tensor bytes.
pub fn compute_version_id(params: &ModelParams, catalog_digest: &str, stage: StageTag) -> String {
    let meta = ArtifactMeta {
        config: params.config.clone(),
        catalog_digest: catalog_digest.to_string(),
        version_id: String::new(),
        stage,
    };
    let meta_bytes = to_canonical_vec(&meta).expect("meta serializes");
    let digest = sha256_parts([meta_bytes.as_slice(), tensor_payload(params).as_slice()]);
    hex::encode(&digest[..8])
}

/// Serialize `params`. Values are written as f32; callers publish
/// storage-exact parameters so the round trip is bit-exact.
pub fn save(
    params: &ModelParams,
    catalog_digest: &str,
    stage: StageTag,
) -> Result<(Vec<u8>, ArtifactMeta), ModelError> {
    if !params.all_finite() {
        return Err(ModelError::NumericFault { tensor: "params" });
    }
    let meta = ArtifactMeta {
        config: params.config.clone(),
        catalog_digest: catalog_digest.to_string(),
        version_id: compute_version_id(params, catalog_digest, stage),
        stage,
    };
    let meta_bytes = to_canonical_vec(&meta).expect("meta serializes");
    let tensors = tensor_payload(params);
    let mut out = Vec::with_capacity(HEADER_LEN + meta_bytes.len() + tensors.len() + TRAILER_LEN);
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(meta_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta_bytes);
    out.extend_from_slice(&tensors);
    let digest = sha256(&out);
    out.extend_from_slice(&digest);
    Ok((out, meta))
}

/// Parse and verify an artifact. Magic, version, lengths and the trailer
/// digest are all checked before any tensor is decoded.
pub fn load(bytes: &[u8]) -> Result<LoadedModel, ModelError> {
    if bytes.len() < 4 {
        return Err(ModelError::Truncated {
            needed: HEADER_LEN,
            got: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(ModelError::Format(format!(
            "bad magic {:02x?}",
            &bytes[..4]
        )));
    }
    if bytes.len() < HEADER_LEN {
        return Err(ModelError::Truncated {
            needed: HEADER_LEN,
            got: bytes.len(),
        });
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(ModelError::Format(format!(
            "unsupported format version {}",
            bytes[4]
        )));
    }
    let meta_len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let meta_end = HEADER_LEN
        .checked_add(meta_len)
        .ok_or_else(|| ModelError::Format("metadata length overflows".into()))?;
    if bytes.len() < meta_end {
        return Err(ModelError::Truncated {
            needed: meta_end,
            got: bytes.len(),
        });
    }
    let meta: ArtifactMeta = serde_json::from_slice(&bytes[HEADER_LEN..meta_end])
        .map_err(|e| ModelError::Format(format!("metadata: {e}")))?;
    meta.config.validate()?;
    let tensor_len: usize = TensorId::ALL
        .iter()
        .map(|id| id.len(&meta.config) * 4)
        .sum();
    let expected = meta_end + tensor_len + TRAILER_LEN;
    if bytes.len() < expected {
        return Err(ModelError::Truncated {
            needed: expected,
            got: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(ModelError::Format(format!(
            "{} trailing bytes after artifact",
            bytes.len() - expected
        )));
    }
    let body = &bytes[..expected - TRAILER_LEN];
    if sha256(body) != bytes[expected - TRAILER_LEN..] {
        return Err(ModelError::Integrity);
    }

    let mut offset = meta_end;
    let mut tensors = Vec::with_capacity(TensorId::ALL.len());
    for id in TensorId::ALL {
        let n = id.len(&meta.config);
        let values: Vec<f64> = bytes[offset..offset + n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        offset += n * 4;
        tensors.push(values);
    }
    let params = ModelParams::from_tensors(meta.config.clone(), tensors)?;
    if !params.all_finite() {
        return Err(ModelError::NumericFault { tensor: "params" });
    }
    Ok(LoadedModel { params, meta })
}
