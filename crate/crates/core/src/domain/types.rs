use serde::{Deserialize, Serialize};

use super::DomainError;

/// Fixed physical field ranges. Sensor normalization and synthetic clamping
/// both use these so edge and cloud featurize identically.
pub mod ranges {
    pub const PH: (f64, f64) = (3.0, 9.0);
    pub const TEMPERATURE_C: (f64, f64) = (-10.0, 50.0);
    pub const HUMIDITY_PCT: (f64, f64) = (0.0, 100.0);
    pub const LIGHT_KLUX: (f64, f64) = (0.0, 120.0);
    pub const ALL: [(f64, f64); 4] = [PH, TEMPERATURE_C, HUMIDITY_PCT, LIGHT_KLUX];
}

pub const IMAGE_SIDE: usize = 24;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_CLASSES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SensorReadingRaw")]
pub struct SensorReading {
    pub ph: f64,
    pub temperature_c: f64,
    pub humidity_pct: f64,
    pub light_klux: f64,
    pub timestamp_ms: i64,
    pub sensor_id: String,
}

#[derive(Deserialize)]
struct SensorReadingRaw {
    ph: f64,
    temperature_c: f64,
    humidity_pct: f64,
    light_klux: f64,
    timestamp_ms: i64,
    sensor_id: String,
}

impl TryFrom<SensorReadingRaw> for SensorReading {
    type Error = DomainError;
    fn try_from(r: SensorReadingRaw) -> Result<Self, DomainError> {
        SensorReading::new(
            r.ph,
            r.temperature_c,
            r.humidity_pct,
            r.light_klux,
            r.timestamp_ms,
            r.sensor_id,
        )
    }
}

impl SensorReading {
    pub fn new(
        ph: f64,
        temperature_c: f64,
        humidity_pct: f64,
        light_klux: f64,
        timestamp_ms: i64,
        sensor_id: impl Into<String>,
    ) -> Result<Self, DomainError> {
        if ![ph, temperature_c, humidity_pct, light_klux]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(DomainError::invalid(
                "sensor reading has a non-finite value",
            ));
        }
        if !(0.0..=100.0).contains(&humidity_pct) {
            return Err(DomainError::invalid(format!(
                "humidity_pct {humidity_pct} outside [0,100]"
            )));
        }
        if light_klux < 0.0 {
            return Err(DomainError::invalid(format!("light_klux {light_klux} < 0")));
        }
        if timestamp_ms < 0 {
            return Err(DomainError::invalid("timestamp_ms < 0"));
        }
        Ok(SensorReading {
            ph,
            temperature_c,
            humidity_pct,
            light_klux,
            timestamp_ms,
            sensor_id: sensor_id.into(),
        })
    }

    /// Values in the order (ph, temperature, humidity, light).
    pub fn values(&self) -> [f64; 4] {
        [
            self.ph,
            self.temperature_c,
            self.humidity_pct,
            self.light_klux,
        ]
    }
}

/// Grayscale image, row-major, every pixel in [0,1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PatchImageRaw")]
pub struct PatchImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

#[derive(Deserialize)]
struct PatchImageRaw {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl TryFrom<PatchImageRaw> for PatchImage {
    type Error = DomainError;
    fn try_from(r: PatchImageRaw) -> Result<Self, DomainError> {
        PatchImage::new(r.width, r.height, r.pixels)
    }
}

impl PatchImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, DomainError> {
        if width == 0 || height == 0 {
            return Err(DomainError::invalid("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(DomainError::invalid(format!(
                "image has {} pixels, expected {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(DomainError::invalid(format!(
                "pixel value {p} outside [0,1]"
            )));
        }
        Ok(PatchImage {
            width,
            height,
            pixels,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self, DomainError> {
        PatchImage::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub obs_id: String,
    pub image: PatchImage,
    pub sensors: SensorReading,
    pub location: Location,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Urgency {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub class_id: usize,
    pub name: String,
    pub is_healthy: bool,
    pub symptoms: Vec<String>,
    pub treatment: Vec<String>,
    pub urgency: Urgency,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ClassCatalogRaw")]
pub struct ClassCatalog {
    classes: Vec<ClassInfo>,
}

#[derive(Deserialize)]
struct ClassCatalogRaw {
    classes: Vec<ClassInfo>,
}

impl TryFrom<ClassCatalogRaw> for ClassCatalog {
    type Error = DomainError;
    fn try_from(r: ClassCatalogRaw) -> Result<Self, DomainError> {
        ClassCatalog::new(r.classes)
    }
}

impl ClassCatalog {
    pub fn new(classes: Vec<ClassInfo>) -> Result<Self, DomainError> {
        if classes.is_empty() {
            return Err(DomainError::invalid("class catalog is empty"));
        }
        for (i, c) in classes.iter().enumerate() {
            if c.class_id != i {
                return Err(DomainError::invalid(format!(
                    "class ids must be 0..K-1 in order; position {i} has id {}",
                    c.class_id
                )));
            }
            if c.is_healthy != (i == 0) {
                return Err(DomainError::invalid(
                    "exactly one healthy class is required and it must be class 0",
                ));
            }
            if !c.is_healthy && (c.symptoms.len() < 2 || c.treatment.len() < 2) {
                return Err(DomainError::invalid(format!(
                    "class {} needs at least two symptom and two treatment keywords",
                    c.name
                )));
            }
        }
        Ok(ClassCatalog { classes })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn get(&self, class_id: usize) -> Option<&ClassInfo> {
        self.classes.get(class_id)
    }

    /// Treatment list joined into a sentence; fixed text for the healthy class.
    pub fn recommendation(&self, class_id: usize) -> String {
        match self.get(class_id) {
            Some(c) if c.is_healthy => HEALTHY_RECOMMENDATION.to_string(),
            Some(c) => format!("Recommended treatment: {}.", c.treatment.join(", ")),
            None => String::new(),
        }
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn digest_hex(&self) -> String {
        let bytes = super::to_canonical_vec(self).expect("catalog serializes");
        super::sha256_hex(&bytes)
    }
}

pub const HEALTHY_RECOMMENDATION: &str = "No action required.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub obs_id: String,
    pub probs: Vec<f64>,
    pub predicted: usize,
    pub confidence: f64,
    pub recommendation: String,
    pub model_version: String,
}

impl Diagnosis {
    /// Build from an arbitrary non-negative weight vector: it is renormalized
    /// and `predicted`/`confidence` are re-derived (lowest index wins ties).
    pub fn from_weights(
        obs_id: impl Into<String>,
        weights: &[f64],
        recommendation: impl Into<String>,
        model_version: impl Into<String>,
    ) -> Result<Self, DomainError> {
        let probs = normalize(weights)?;
        let predicted = argmax(&probs);
        Ok(Diagnosis {
            obs_id: obs_id.into(),
            confidence: probs[predicted],
            predicted,
            probs,
            recommendation: recommendation.into(),
            model_version: model_version.into(),
        })
    }
}

pub fn normalize(weights: &[f64]) -> Result<Vec<f64>, DomainError> {
    if weights.is_empty() {
        return Err(DomainError::invalid("empty probability vector"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(DomainError::invalid(
            "probability weights must be finite and non-negative",
        ));
    }
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(DomainError::invalid("probability weights sum to zero"));
    }
    Ok(weights.iter().map(|w| w / sum).collect())
}

/// Index of the maximum; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
