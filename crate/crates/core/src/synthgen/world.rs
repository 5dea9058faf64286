use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::domain::{ClassCatalog, ClassInfo, Urgency, NUM_CLASSES};

/// Generation parameters for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub class_id: usize,
    /// Cycles per image width; 0 for the healthy class.
    pub texture_freq: f64,
    pub texture_angle: f64,
    pub texture_amp: f64,
    /// (ph, temperature, humidity, light) in physical units.
    pub sensor_mean: [f64; 4],
    pub sensor_std: [f64; 4],
    pub pixel_noise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub name: String,
    pub catalog: ClassCatalog,
    pub specs: Vec<ClassSpec>,
}

impl World {
    pub fn num_classes(&self) -> usize {
        self.specs.len()
    }
}

const FREQS: [f64; NUM_CLASSES] = [0.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
const AMPS: [f64; NUM_CLASSES] = [0.0, 0.30, 0.25, 0.35, 0.30, 0.40, 0.25, 0.35];

// Two levels per sensor field. Classes sit on the even-parity corners of the
// 4-cube, so any two class means differ in at least two fields.
const PH_LEVELS: [f64; 2] = [5.2, 7.0];
const TEMP_LEVELS: [f64; 2] = [16.0, 30.0];
const HUMIDITY_LEVELS: [f64; 2] = [45.0, 80.0];
const LIGHT_LEVELS: [f64; 2] = [35.0, 75.0];
const SENSOR_STD: [f64; 4] = [0.3, 2.0, 4.0, 5.0];
const PIXEL_NOISE: f64 = 0.06;

fn even_parity_corner(index: usize) -> [usize; 4] {
    // Index 0..8 -> first three bits free, fourth bit restores even parity.
    let a = index & 1;
    let b = (index >> 1) & 1;
    let c = (index >> 2) & 1;
    [a, b, c, a ^ b ^ c]
}

fn class_info(
    id: usize,
    name: &str,
    symptoms: &[&str],
    treatment: &[&str],
    urgency: Urgency,
) -> ClassInfo {
    ClassInfo {
        class_id: id,
        name: name.to_string(),
        is_healthy: id == 0,
        symptoms: symptoms.iter().map(|s| s.to_string()).collect(),
        treatment: treatment.iter().map(|s| s.to_string()).collect(),
        urgency,
    }
}

pub fn default_catalog() -> ClassCatalog {
    use Urgency::*;
    let classes = vec![
        class_info(0, "healthy", &[], &[], Low),
        class_info(
            1,
            "late blight",
            &["dark lesions", "water-soaked spots", "white mold"],
            &["copper fungicide", "remove infected leaves"],
            High,
        ),
        class_info(
            2,
            "powdery mildew",
            &["white powder", "leaf curl"],
            &["sulfur spray", "improve airflow"],
            Medium,
        ),
        class_info(
            3,
            "aphid infestation",
            &["sticky residue", "curled leaves", "stunted shoots"],
            &["insecticidal soap", "release ladybirds"],
            Medium,
        ),
        class_info(
            4,
            "leaf rust",
            &["orange pustules", "yellow halo"],
            &["triazole fungicide", "resistant cultivar"],
            High,
        ),
        class_info(
            5,
            "spider mites",
            &["stippling", "fine webbing"],
            &["miticide", "raise humidity"],
            Low,
        ),
        class_info(
            6,
            "bacterial spot",
            &["angular spots", "leaf drop"],
            &["copper bactericide", "crop rotation"],
            Medium,
        ),
        class_info(
            7,
            "drought stress",
            &["leaf scorch", "wilting"],
            &["drip irrigation", "mulching"],
            High,
        ),
    ];
    ClassCatalog::new(classes).expect("built-in catalog is valid")
}

/// The fixed built-in world with eight classes.
pub fn default_world() -> World {
    let specs = (0..NUM_CLASSES)
        .map(|k| {
            let corner = even_parity_corner(k);
            ClassSpec {
                class_id: k,
                texture_freq: FREQS[k],
                texture_angle: k as f64 * PI / 8.0,
                texture_amp: AMPS[k],
                sensor_mean: [
                    PH_LEVELS[corner[0]],
                    TEMP_LEVELS[corner[1]],
                    HUMIDITY_LEVELS[corner[2]],
                    LIGHT_LEVELS[corner[3]],
                ],
                sensor_std: SENSOR_STD,
                pixel_noise: PIXEL_NOISE,
            }
        })
        .collect();
    World {
        name: "default-world".to_string(),
        catalog: default_catalog(),
        specs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn healthy_class_has_no_texture() {
        let w = default_world();
        assert!(w.catalog.get(0).unwrap().is_healthy);
        assert_eq!(w.specs[0].texture_amp, 0.0);
        assert_eq!(w.specs[0].texture_freq, 0.0);
    }

    #[test]
    fn texture_parameters_pairwise_distinct() {
        let w = default_world();
        for i in 0..w.specs.len() {
            for j in (i + 1)..w.specs.len() {
                let a = &w.specs[i];
                let b = &w.specs[j];
                assert!(
                    (a.texture_freq, a.texture_angle) != (b.texture_freq, b.texture_angle),
                    "{i} vs {j}"
                );
            }
        }
    }

    #[test]
    fn sensor_means_differ_in_two_fields() {
        let w = default_world();
        for i in 0..w.specs.len() {
            for j in (i + 1)..w.specs.len() {
                let differing = (0..4)
                    .filter(|f| w.specs[i].sensor_mean[*f] != w.specs[j].sensor_mean[*f])
                    .count();
                assert!(differing >= 2);
            }
        }
    }

    #[test]
    fn amplitudes_and_noise_in_range() {
        for s in default_world().specs {
            assert!((0.0..=0.45).contains(&s.texture_amp));
            assert!(s.sensor_std.iter().all(|v| *v > 0.0));
            assert!(s.pixel_noise >= 0.0);
        }
    }
}
