use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::domain::{argmax, Observation, Rng};
use crate::model::{forward_encoded, ModelParams, TensorId};

use super::{
    batch_grad, prepare_samples, DistillError, KlDirection, LossComponents, LossWeights, Sample,
    Stage,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weights: LossWeights,
    pub kl_direction: KlDirection,
    pub seed: u64,
}

impl StageConfig {
    /// Defaults: 30 epochs for the teacher, 15 for each student stage.
    pub fn default_for(stage: Stage, seed: u64) -> Self {
        StageConfig {
            stage,
            epochs: match stage {
                Stage::TeacherPretrain => 30,
                _ => 15,
            },
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            weights: LossWeights::default(),
            kl_direction: KlDirection::Forward,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DistillError> {
        if self.epochs == 0 {
            return Err(DistillError::contract("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(DistillError::contract("batch_size must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(DistillError::contract(format!(
                "lr must be > 0, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(DistillError::contract(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        let w = &self.weights;
        if [w.alpha, w.beta, w.gamma, w.delta]
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(DistillError::contract(
                "loss weights must be finite and >= 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub components: LossComponents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: Stage,
    pub epochs: Vec<EpochStats>,
    /// SHA-256 (hex) of every frozen tensor, keyed by tensor name.
    pub frozen_digests_pre: BTreeMap<String, String>,
    pub frozen_digests_post: BTreeMap<String, String>,
    pub val_accuracy: Option<f64>,
    pub steps: usize,
    pub wall_clock_ms: u64,
}

impl TrainReport {
    pub fn frozen_unchanged(&self) -> bool {
        self.frozen_digests_pre == self.frozen_digests_post
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }
}

fn frozen_digests(params: &ModelParams, stage: Stage) -> BTreeMap<String, String> {
    stage
        .frozen()
        .into_iter()
        .map(|id| (id.name().to_string(), hex::encode(params.digest_of(&[id]))))
        .collect()
}

/// Fraction of labeled observations whose argmax prediction matches.
pub fn accuracy(params: &ModelParams, samples: &[Sample]) -> Result<f64, DistillError> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for s in samples {
        let Some(y) = s.label else { continue };
        let trace = forward_encoded(params, &s.z, &s.features)?;
        total += 1;
        if argmax(&trace.p_resp) == y {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(DistillError::contract("no labeled samples to score"));
    }
    Ok(hits as f64 / total as f64)
}

/// Run one stage of momentum SGD on a private copy of `student`.
///
/// `teacher` is required for DPT and DFT and must be absent otherwise.
pub fn train_stage(
    student: &ModelParams,
    teacher: Option<&ModelParams>,
    train: &[Observation],
    val: Option<&[Observation]>,
    config: &StageConfig,
) -> Result<(ModelParams, TrainReport), DistillError> {
    config.validate()?;
    let stage = config.stage;
    match (stage.uses_teacher(), teacher.is_some()) {
        (true, false) => {
            return Err(DistillError::contract(format!(
                "{stage} requires a teacher"
            )))
        }
        (false, true) => {
            return Err(DistillError::contract(format!(
                "{stage} must not be given a teacher"
            )))
        }
        _ => {}
    }
    if let Some(t) = teacher {
        if t.config.tokens != student.config.tokens || t.config.classes != student.config.classes {
            return Err(DistillError::contract(
                "teacher and student disagree on token or class count",
            ));
        }
    }
    if train.is_empty() {
        return Err(DistillError::contract("empty training set"));
    }
    if stage.uses_labels() && train.iter().any(|o| o.label.is_none()) {
        return Err(DistillError::contract(format!(
            "{stage} needs labeled data"
        )));
    }

    let started = Instant::now();
    let pre = frozen_digests(student, stage);
    let samples = prepare_samples(student, teacher, train)?;
    let mut params = student.clone();
    let mut velocity: BTreeMap<TensorId, Vec<f64>> = stage
        .trainable()
        .iter()
        .map(|id| (*id, vec![0.0; id.len(&params.config)]))
        .collect();

    let mut rng = Rng::seeded(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut comp_sum = LossComponents::default();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|i| &samples[*i]).collect();
            let (grads, loss, mut comps) =
                batch_grad(stage, &params, &batch, &config.weights, config.kl_direction)?;
            let n = batch.len() as f64;
            loss_sum += loss * n;
            comps.scale(n);
            comp_sum.add(&comps);
            for (id, g) in grads.iter() {
                let v = velocity.get_mut(&id).expect("trainable tensor");
                let w = params.tensor_mut(id);
                for ((vi, wi), gi) in v.iter_mut().zip(w.iter_mut()).zip(g) {
                    *vi = config.momentum * *vi + gi;
                    *wi -= config.lr * *vi;
                }
            }
            steps += 1;
        }
        let n = samples.len() as f64;
        comp_sum.scale(1.0 / n);
        epochs.push(EpochStats {
            epoch,
            mean_loss: loss_sum / n,
            components: comp_sum,
        });
    }
    params.round_to_storage();
    if !params.all_finite() {
        return Err(DistillError::NumericFault("updated parameters".into()));
    }

    let val_accuracy = match val {
        Some(v) if !v.is_empty() => {
            let val_samples = prepare_samples(&params, None, v)?;
            Some(accuracy(&params, &val_samples)?)
        }
        _ => None,
    };
    let report = TrainReport {
        stage,
        epochs,
        frozen_digests_pre: pre,
        frozen_digests_post: frozen_digests(&params, stage),
        val_accuracy,
        steps,
        wall_clock_ms: started.elapsed().as_millis() as u64,
    };
    Ok((params, report))
}
