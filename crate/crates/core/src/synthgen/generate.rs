use std::f64::consts::PI;

use crate::domain::{ranges, Location, Observation, PatchImage, Rng, SensorReading, IMAGE_SIDE};

use super::ClassSpec;

const TIMESTAMP_BASE_MS: i64 = 1_750_000_000_000;
const SENSOR_POOL: u64 = 16;

/// UUIDv4 layout over 16 bytes of the stream.
pub fn random_uuid(rng: &mut Rng) -> String {
    let mut bytes = [0u8; 16];
    rng.fill_bytes(&mut bytes);
    uuid::Builder::from_random_bytes(bytes)
        .into_uuid()
        .hyphenated()
        .to_string()
}

/// Noise-free texture value at pixel (x, y).
pub fn texture_value(spec: &ClassSpec, x: usize, y: usize) -> f64 {
    let side = IMAGE_SIDE as f64;
    let phase = 2.0
        * PI
        * spec.texture_freq
        * (x as f64 * spec.texture_angle.cos() + y as f64 * spec.texture_angle.sin())
        / side;
    0.5 + spec.texture_amp * phase.sin()
}

/// One labeled observation of class `spec.class_id`.
pub fn gen_observation(spec: &ClassSpec, rng: &mut Rng) -> Observation {
    let obs_id = random_uuid(rng);

    let mut pixels = Vec::with_capacity(IMAGE_SIDE * IMAGE_SIDE);
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let noise = if spec.pixel_noise > 0.0 {
                spec.pixel_noise * rng.normal()
            } else {
                0.0
            };
            pixels.push((texture_value(spec, x, y) + noise).clamp(0.0, 1.0));
        }
    }
    let image = PatchImage::new(IMAGE_SIDE, IMAGE_SIDE, pixels).expect("clamped pixels");

    let mut values = [0.0; 4];
    for (i, v) in values.iter_mut().enumerate() {
        let (lo, hi) = ranges::ALL[i];
        *v = (spec.sensor_mean[i] + spec.sensor_std[i] * rng.normal()).clamp(lo, hi);
    }
    let timestamp_ms = TIMESTAMP_BASE_MS + rng.below(86_400_000) as i64;
    let sensor_id = format!("sensor-{:02}", rng.below(SENSOR_POOL));
    let location = Location {
        lat: rng.uniform(-37.90, -37.80),
        lon: rng.uniform(144.90, 145.00),
    };
    let sensors = SensorReading::new(
        values[0],
        values[1],
        values[2],
        values[3],
        timestamp_ms,
        sensor_id,
    )
    .expect("clamped sensor values");

    Observation {
        obs_id,
        image,
        sensors,
        location,
        label: Some(spec.class_id),
    }
}
