use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{ClassCatalog, Observation, Rng};

use super::SynthError;

pub const CLOSED_QUESTION: &str = "Is the crop in this image diseased?";
pub const OPEN_QUESTION: &str = "Describe the symptoms and recommend a treatment.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum VqaRecord {
    /// Gold answer is "yes" or "no".
    Closed {
        obs_id: String,
        question: String,
        gold: String,
    },
    /// Gold answer is the keyword set symptoms ∪ treatment.
    Open {
        obs_id: String,
        question: String,
        gold: BTreeSet<String>,
    },
}

impl VqaRecord {
    pub fn obs_id(&self) -> &str {
        match self {
            VqaRecord::Closed { obs_id, .. } | VqaRecord::Open { obs_id, .. } => obs_id,
        }
    }
}

/// Keyword set (symptoms ∪ treatment) for a class.
pub fn class_keywords(catalog: &ClassCatalog, class_id: usize) -> BTreeSet<String> {
    catalog
        .get(class_id)
        .map(|c| c.symptoms.iter().chain(&c.treatment).cloned().collect())
        .unwrap_or_default()
}

pub fn closed_answer(catalog: &ClassCatalog, class_id: usize) -> &'static str {
    match catalog.get(class_id) {
        Some(c) if c.is_healthy => "no",
        _ => "yes",
    }
}

/// One closed-set and one open-set record per observation; record order is
/// shuffled by `rng`.
pub fn gen_vqa_pairs(
    dataset: &[Observation],
    catalog: &ClassCatalog,
    rng: &mut Rng,
) -> Result<Vec<VqaRecord>, SynthError> {
    let mut out = Vec::with_capacity(dataset.len() * 2);
    for obs in dataset {
        let label = obs
            .label
            .ok_or_else(|| SynthError::Unlabeled(obs.obs_id.clone()))?;
        out.push(VqaRecord::Closed {
            obs_id: obs.obs_id.clone(),
            question: CLOSED_QUESTION.to_string(),
            gold: closed_answer(catalog, label).to_string(),
        });
        out.push(VqaRecord::Open {
            obs_id: obs.obs_id.clone(),
            question: OPEN_QUESTION.to_string(),
            gold: class_keywords(catalog, label),
        });
    }
    rng.shuffle(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{default_world, generate_split, Split};

    #[test]
    fn two_records_per_observation() {
        let w = default_world();
        let data = generate_split(&w, &[250; 8], 2, Split::Test).unwrap();
        let recs = gen_vqa_pairs(&data, &w.catalog, &mut Rng::seeded(1)).unwrap();
        assert_eq!(recs.len(), 4000);
    }

    #[test]
    fn healthy_gold_is_no_and_open_gold_is_union() {
        let w = default_world();
        let data = generate_split(&w, &[1, 1, 0, 0, 0, 0, 0, 0], 2, Split::Test).unwrap();
        let recs = gen_vqa_pairs(&data, &w.catalog, &mut Rng::seeded(1)).unwrap();
        for r in &recs {
            let obs = data.iter().find(|o| o.obs_id == r.obs_id()).unwrap();
            match (r, obs.label.unwrap()) {
                (VqaRecord::Closed { gold, .. }, 0) => assert_eq!(gold, "no"),
                (VqaRecord::Closed { gold, .. }, _) => assert_eq!(gold, "yes"),
                (VqaRecord::Open { gold, .. }, 0) => assert!(gold.is_empty()),
                (VqaRecord::Open { gold, .. }, 1) => {
                    let expect: BTreeSet<String> = [
                        "dark lesions",
                        "water-soaked spots",
                        "white mold",
                        "copper fungicide",
                        "remove infected leaves",
                    ]
                    .iter()
                    .map(|s| s.to_string())
                    .collect();
                    assert_eq!(gold, &expect);
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn unlabeled_rejected() {
        let w = default_world();
        let mut data = generate_split(&w, &[1; 8], 2, Split::Test).unwrap();
        data[0].label = None;
        assert!(gen_vqa_pairs(&data, &w.catalog, &mut Rng::seeded(1)).is_err());
    }
}
