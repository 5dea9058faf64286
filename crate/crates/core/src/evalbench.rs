//! Closed-set accuracy and open-set keyword F1 over synthetic VQA records.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::domain::{argmax, ClassCatalog, Observation};
use crate::fusion::{build_prompt, patchify};
use crate::model::{forward, ModelError, ModelParams};
use crate::synthgen::{class_keywords, closed_answer, NearestCentroid, VqaRecord};

/// Anything that maps an observation to a class id.
pub trait Classifier {
    fn predict(&self, obs: &Observation) -> Result<usize, ModelError>;
}

impl Classifier for ModelParams {
    fn predict(&self, obs: &Observation) -> Result<usize, ModelError> {
        let patches = patchify(&obs.image).map_err(|e| ModelError::Shape(e.to_string()))?;
        let trace = forward(self, &patches, &build_prompt(&obs.sensors).features)?;
        Ok(argmax(&trace.p_resp))
    }
}

impl Classifier for NearestCentroid {
    fn predict(&self, obs: &Observation) -> Result<usize, ModelError> {
        Ok(NearestCentroid::predict(self, obs))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("record refers to unknown observation {0}")]
    UnknownObservation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Keyword-set F1. Both empty scores 1; exactly one empty scores 0.
pub fn f1_score(pred: &BTreeSet<String>, gold: &BTreeSet<String>) -> f64 {
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let hits = pred.intersection(gold).count() as f64;
    if hits == 0.0 {
        return 0.0;
    }
    let precision = hits / pred.len() as f64;
    let recall = hits / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedResult {
    pub accuracy: f64,
    /// confusion[true][predicted] over the observations behind the records.
    pub confusion: Vec<Vec<usize>>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub closed_accuracy: f64,
    pub open_f1: f64,
    /// Trace of the confusion matrix over its total.
    pub class_accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
    pub n_samples: usize,
    pub model_version: String,
    pub seed: u64,
}

impl EvalReport {
    pub fn class_counts(&self) -> Vec<usize> {
        self.confusion.iter().map(|r| r.iter().sum()).collect()
    }
}

struct Predictions<'a> {
    by_id: HashMap<&'a str, &'a Observation>,
    cache: HashMap<String, usize>,
}

impl<'a> Predictions<'a> {
    fn new(observations: &'a [Observation]) -> Self {
        Predictions {
            by_id: observations
                .iter()
                .map(|o| (o.obs_id.as_str(), o))
                .collect(),
            cache: HashMap::new(),
        }
    }

    fn get(
        &mut self,
        model: &impl Classifier,
        obs_id: &str,
    ) -> Result<(usize, &'a Observation), EvalError> {
        let obs = *self
            .by_id
            .get(obs_id)
            .ok_or_else(|| EvalError::UnknownObservation(obs_id.to_string()))?;
        if let Some(p) = self.cache.get(obs_id) {
            return Ok((*p, obs));
        }
        let p = model.predict(obs)?;
        self.cache.insert(obs_id.to_string(), p);
        Ok((p, obs))
    }
}

/// The model answers "yes" iff it predicts a non-healthy class.
pub fn eval_closed(
    model: &impl Classifier,
    observations: &[Observation],
    records: &[VqaRecord],
    catalog: &ClassCatalog,
) -> Result<ClosedResult, EvalError> {
    let mut preds = Predictions::new(observations);
    eval_closed_with(model, &mut preds, records, catalog)
}

fn eval_closed_with(
    model: &impl Classifier,
    preds: &mut Predictions<'_>,
    records: &[VqaRecord],
    catalog: &ClassCatalog,
) -> Result<ClosedResult, EvalError> {
    let k = catalog.len();
    let mut confusion = vec![vec![0usize; k]; k];
    let mut hits = 0usize;
    let mut n = 0usize;
    for rec in records {
        let VqaRecord::Closed { obs_id, gold, .. } = rec else {
            continue;
        };
        let (pred, obs) = preds.get(model, obs_id)?;
        if pred >= k {
            return Err(EvalError::Contract(format!(
                "prediction {pred} out of range"
            )));
        }
        if closed_answer(catalog, pred) == gold {
            hits += 1;
        }
        if let Some(y) = obs.label.filter(|y| *y < k) {
            confusion[y][pred] += 1;
        }
        n += 1;
    }
    if n == 0 {
        return Err(EvalError::Contract(
            "no closed-set records to evaluate".into(),
        ));
    }
    Ok(ClosedResult {
        accuracy: hits as f64 / n as f64,
        confusion,
        n,
    })
}

/// Mean F1 between the predicted class's keyword set and the gold set.
pub fn eval_open(
    model: &impl Classifier,
    observations: &[Observation],
    records: &[VqaRecord],
    catalog: &ClassCatalog,
) -> Result<f64, EvalError> {
    let mut preds = Predictions::new(observations);
    eval_open_with(model, &mut preds, records, catalog)
}

fn eval_open_with(
    model: &impl Classifier,
    preds: &mut Predictions<'_>,
    records: &[VqaRecord],
    catalog: &ClassCatalog,
) -> Result<f64, EvalError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for rec in records {
        let VqaRecord::Open { obs_id, gold, .. } = rec else {
            continue;
        };
        let (pred, _) = preds.get(model, obs_id)?;
        sum += f1_score(&class_keywords(catalog, pred), gold);
        n += 1;
    }
    if n == 0 {
        return Err(EvalError::Contract(
            "no open-set records to evaluate".into(),
        ));
    }
    Ok(sum / n as f64)
}

pub fn evaluate(
    model: &impl Classifier,
    observations: &[Observation],
    records: &[VqaRecord],
    catalog: &ClassCatalog,
    model_version: &str,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let mut preds = Predictions::new(observations);
    let closed = eval_closed_with(model, &mut preds, records, catalog)?;
    let open_f1 = eval_open_with(model, &mut preds, records, catalog)?;
    let total: usize = closed.confusion.iter().flatten().sum();
    let trace: usize = (0..catalog.len()).map(|i| closed.confusion[i][i]).sum();
    let per_class_accuracy = closed
        .confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let n: usize = row.iter().sum();
            if n == 0 {
                0.0
            } else {
                row[i] as f64 / n as f64
            }
        })
        .collect();
    Ok(EvalReport {
        closed_accuracy: closed.accuracy,
        open_f1,
        class_accuracy: if total == 0 {
            0.0
        } else {
            trace as f64 / total as f64
        },
        per_class_accuracy,
        confusion: closed.confusion,
        n_samples: closed.n,
        model_version: model_version.to_string(),
        seed,
    })
}
