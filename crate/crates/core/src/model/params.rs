use serde::{Deserialize, Serialize};

use crate::domain::{sha256_parts, Digest32, Rng};

use super::{ModelConfig, ModelError};

/// Every parameter tensor, in serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorId {
    EncW,
    EncB,
    ProjW,
    ProjB,
    TxtW,
    TxtB,
    H1W,
    H1B,
    H2W,
    H2B,
}

impl TensorId {
    pub const ALL: [TensorId; 10] = [
        TensorId::EncW,
        TensorId::EncB,
        TensorId::ProjW,
        TensorId::ProjB,
        TensorId::TxtW,
        TensorId::TxtB,
        TensorId::H1W,
        TensorId::H1B,
        TensorId::H2W,
        TensorId::H2B,
    ];
    /// The frozen visual encoder.
    pub const ENCODER: [TensorId; 2] = [TensorId::EncW, TensorId::EncB];
    pub const PROJECTOR: [TensorId; 2] = [TensorId::ProjW, TensorId::ProjB];
    /// Text embedding plus head: the small language model block.
    pub const LANGUAGE: [TensorId; 6] = [
        TensorId::TxtW,
        TensorId::TxtB,
        TensorId::H1W,
        TensorId::H1B,
        TensorId::H2W,
        TensorId::H2B,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TensorId::EncW => "W_enc",
            TensorId::EncB => "b_enc",
            TensorId::ProjW => "W_proj",
            TensorId::ProjB => "b_proj",
            TensorId::TxtW => "W_txt",
            TensorId::TxtB => "b_txt",
            TensorId::H1W => "W_h1",
            TensorId::H1B => "b_h1",
            TensorId::H2W => "W_h2",
            TensorId::H2B => "b_h2",
        }
    }

    /// (rows, cols); biases are 1 x n.
    pub fn shape(self, c: &ModelConfig) -> (usize, usize) {
        match self {
            TensorId::EncW => (c.patch_len(), c.d_v),
            TensorId::EncB => (1, c.d_v),
            TensorId::ProjW => (c.d_v, c.d_h),
            TensorId::ProjB => (1, c.d_h),
            TensorId::TxtW => (c.sensor_features(), c.d_h),
            TensorId::TxtB => (1, c.d_h),
            TensorId::H1W => (2 * c.d_h, c.hidden),
            TensorId::H1B => (1, c.hidden),
            TensorId::H2W => (c.hidden, c.classes),
            TensorId::H2B => (1, c.classes),
        }
    }

    pub fn len(self, c: &ModelConfig) -> usize {
        let (r, k) = self.shape(c);
        r * k
    }

    pub fn is_bias(self) -> bool {
        matches!(
            self,
            TensorId::EncB | TensorId::ProjB | TensorId::TxtB | TensorId::H1B | TensorId::H2B
        )
    }
}

/// Model weights. Matrices are row-major `rows x cols` with `x · W` products.
///
/// Values are held as f64 for arithmetic; published parameters (from `init`,
/// the trainer or `load`) are always exactly representable in f32, which is
/// the storage precision of artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    tensors: [Vec<f64>; 10],
}

fn index(id: TensorId) -> usize {
    TensorId::ALL
        .iter()
        .position(|t| *t == id)
        .expect("known id")
}

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let tensors = TensorId::ALL.map(|id| vec![0.0; id.len(&config)]);
        Ok(ModelParams { config, tensors })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut p = ModelParams::zeros(config)?;
        let mut rng = Rng::seeded(seed);
        for id in TensorId::ALL {
            if id.is_bias() {
                continue;
            }
            let (fan_in, fan_out) = id.shape(&p.config);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in p.tensor_mut(id) {
                *w = rng.uniform(-a, a);
            }
        }
        p.round_to_storage();
        Ok(p)
    }

    pub fn from_tensors(config: ModelConfig, tensors: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let mut p = ModelParams::zeros(config)?;
        if tensors.len() != TensorId::ALL.len() {
            return Err(ModelError::Shape(format!(
                "expected {} tensors, got {}",
                TensorId::ALL.len(),
                tensors.len()
            )));
        }
        for (id, t) in TensorId::ALL.into_iter().zip(tensors) {
            if t.len() != id.len(&p.config) {
                return Err(ModelError::Shape(format!(
                    "{} has {} values, expected {}",
                    id.name(),
                    t.len(),
                    id.len(&p.config)
                )));
            }
            p.tensors[index(id)] = t;
        }
        Ok(p)
    }

    pub fn tensor(&self, id: TensorId) -> &[f64] {
        &self.tensors[index(id)]
    }

    pub fn tensor_mut(&mut self, id: TensorId) -> &mut [f64] {
        &mut self.tensors[index(id)]
    }

    /// Round every value to the nearest f32.
    pub fn round_to_storage(&mut self) {
        for t in &mut self.tensors {
            for v in t.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    /// Little-endian f32 bytes of one tensor.
    pub fn tensor_bytes(&self, id: TensorId) -> Vec<u8> {
        self.tensor(id)
            .iter()
            .flat_map(|v| (*v as f32).to_le_bytes())
            .collect()
    }

    /// SHA-256 over the storage bytes of `ids`, in the given order.
    pub fn digest_of(&self, ids: &[TensorId]) -> Digest32 {
        let bytes: Vec<Vec<u8>> = ids.iter().map(|id| self.tensor_bytes(*id)).collect();
        sha256_parts(bytes.iter().map(|b| b.as_slice()))
    }

    pub fn encoder_digest(&self) -> Digest32 {
        self.digest_of(&TensorId::ENCODER)
    }

    pub fn language_digest(&self) -> Digest32 {
        self.digest_of(&TensorId::LANGUAGE)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }
}
