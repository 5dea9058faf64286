//! Sensor-to-prompt rendering and image patchification.
//!
//! Numeric sensor data reaches the model twice: as the human-readable prompt
//! string (kept verbatim for the chat API) and as a range-normalized feature
//! vector, which is what the tiny model actually consumes.

use serde::{Deserialize, Serialize};

use crate::domain::{ranges, DomainError, PatchImage, SensorReading};

pub const PATCH_SIDE: usize = 6;
pub const GRID_SIDE: usize = 4;
pub const TOKENS: usize = GRID_SIDE * GRID_SIDE;
pub const PATCH_LEN: usize = PATCH_SIDE * PATCH_SIDE;
pub const SENSOR_FEATURES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub features: [f64; SENSOR_FEATURES],
}

pub fn build_prompt(sensors: &SensorReading) -> Prompt {
    let text = format!(
        "Current sensor data: pH={:.1}, temperature={:.1}°C, humidity={:.1}%, light={:.1}klx. \
         Analyze whether the crops in this image exhibit abnormalities.",
        sensors.ph, sensors.temperature_c, sensors.humidity_pct, sensors.light_klux
    );
    Prompt {
        text,
        features: normalize_sensors(sensors),
    }
}

/// Min-max normalization by the fixed field ranges, clamped to [0,1].
pub fn normalize_sensors(sensors: &SensorReading) -> [f64; SENSOR_FEATURES] {
    let mut out = [0.0; SENSOR_FEATURES];
    for (i, v) in sensors.values().iter().enumerate() {
        let (lo, hi) = ranges::ALL[i];
        out[i] = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    }
    out
}

/// Patch matrix: one row per patch (row-major grid order), each row the
/// patch's pixels flattened row-major.
pub type Patches = Vec<[f64; PATCH_LEN]>;

pub fn patchify(image: &PatchImage) -> Result<Patches, DomainError> {
    let side = GRID_SIDE * PATCH_SIDE;
    if image.width() != side || image.height() != side {
        return Err(DomainError::Invalid(format!(
            "patchify expects a {side}x{side} image, got {}x{}",
            image.width(),
            image.height()
        )));
    }
    let mut out = Vec::with_capacity(TOKENS);
    for gy in 0..GRID_SIDE {
        for gx in 0..GRID_SIDE {
            let mut row = [0.0; PATCH_LEN];
            for py in 0..PATCH_SIDE {
                for px in 0..PATCH_SIDE {
                    row[py * PATCH_SIDE + px] =
                        image.get(gx * PATCH_SIDE + px, gy * PATCH_SIDE + py);
                }
            }
            out.push(row);
        }
    }
    Ok(out)
}

pub fn unpatchify(patches: &[[f64; PATCH_LEN]]) -> Result<PatchImage, DomainError> {
    if patches.len() != TOKENS {
        return Err(DomainError::Invalid(format!(
            "expected {TOKENS} patches, got {}",
            patches.len()
        )));
    }
    let side = GRID_SIDE * PATCH_SIDE;
    let mut pixels = vec![0.0; side * side];
    for (t, row) in patches.iter().enumerate() {
        let (gy, gx) = (t / GRID_SIDE, t % GRID_SIDE);
        for (i, v) in row.iter().enumerate() {
            let (py, px) = (i / PATCH_SIDE, i % PATCH_SIDE);
            pixels[(gy * PATCH_SIDE + py) * side + gx * PATCH_SIDE + px] = *v;
        }
    }
    PatchImage::new(side, side, pixels)
}
