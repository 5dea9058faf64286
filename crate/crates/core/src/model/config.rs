use serde::{Deserialize, Serialize};

use crate::domain::NUM_CLASSES;
use crate::fusion::{PATCH_LEN, SENSOR_FEATURES, TOKENS};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Teacher,
    Student,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub role: Role,
    /// Visual encoder width.
    pub d_v: usize,
    /// Projected token width.
    pub d_h: usize,
    /// Head hidden width.
    pub hidden: usize,
    pub classes: usize,
    pub tokens: usize,
    /// Softmax temperature for the response distribution.
    pub temperature: f64,
}

impl ModelConfig {
    pub fn teacher() -> Self {
        ModelConfig {
            role: Role::Teacher,
            d_v: 64,
            d_h: 48,
            hidden: 64,
            classes: NUM_CLASSES,
            tokens: TOKENS,
            temperature: 1.0,
        }
    }

    pub fn student() -> Self {
        ModelConfig {
            role: Role::Student,
            d_v: 32,
            d_h: 24,
            hidden: 32,
            classes: NUM_CLASSES,
            tokens: TOKENS,
            temperature: 1.0,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_v == 0
            || self.d_h == 0
            || self.hidden == 0
            || self.classes == 0
            || self.tokens == 0
        {
            return Err(ModelError::InvalidConfig(
                "all dimensions must be >= 1".into(),
            ));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(ModelError::InvalidConfig(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn patch_len(&self) -> usize {
        PATCH_LEN
    }

    pub fn sensor_features(&self) -> usize {
        SENSOR_FEATURES
    }
}
