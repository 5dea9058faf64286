//! Teacher pretraining and the three-stage distillation pipeline (DPT, SFT,
//! DFT) with deterministic momentum SGD and analytic gradients.

mod grad;
mod gradcheck;
mod loss;
mod pipeline;
mod train;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::domain::Observation;
use crate::fusion::{build_prompt, patchify, SENSOR_FEATURES};
use crate::model::{encode, forward, forward_encoded, ModelError, ModelParams, TensorId};

pub use grad::{accumulate_sample_grad, Gradients};
pub use gradcheck::{
    gradcheck, relative_error, CoordCheck, GradcheckReport, FD_STEP, GRADCHECK_TOLERANCE,
};
pub use loss::{
    corr_loss, cross_entropy, kl_div, stage_loss, KlDirection, LossComponents, LossWeights,
    TeacherTarget, PROB_FLOOR,
};
pub use pipeline::{
    artifact_file_name, run_pipeline, PipelineConfig, PipelineData, PipelineOutput, StageArtifact,
};
pub use train::{accuracy, train_stage, EpochStats, StageConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    TeacherPretrain,
    Dpt,
    Sft,
    Dft,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::TeacherPretrain, Stage::Dpt, Stage::Sft, Stage::Dft];

    /// Tensors updated in this stage. The visual encoder is frozen
    /// everywhere; distillation pretraining touches only the projector.
    pub fn trainable(self) -> &'static [TensorId] {
        const PROJECTOR_AND_LANGUAGE: [TensorId; 8] = [
            TensorId::ProjW,
            TensorId::ProjB,
            TensorId::TxtW,
            TensorId::TxtB,
            TensorId::H1W,
            TensorId::H1B,
            TensorId::H2W,
            TensorId::H2B,
        ];
        match self {
            Stage::Dpt => &TensorId::PROJECTOR,
            Stage::TeacherPretrain | Stage::Sft | Stage::Dft => &PROJECTOR_AND_LANGUAGE,
        }
    }

    pub fn frozen(self) -> Vec<TensorId> {
        TensorId::ALL
            .into_iter()
            .filter(|id| !self.trainable().contains(id))
            .collect()
    }

    pub fn uses_teacher(self) -> bool {
        matches!(self, Stage::Dpt | Stage::Dft)
    }

    pub fn uses_labels(self) -> bool {
        !matches!(self, Stage::Dpt)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::TeacherPretrain => "teacher_pretrain",
            Stage::Dpt => "dpt",
            Stage::Sft => "sft",
            Stage::Dft => "dft",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DistillError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite gradient in {0}")]
    NumericFault(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<DistillError>,
    },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DistillError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        DistillError::Contract(msg.into())
    }
}

/// One training example with its frozen encoder output cached.
#[derive(Debug, Clone)]
pub struct Sample {
    pub z: Vec<f64>,
    pub features: [f64; SENSOR_FEATURES],
    pub label: Option<usize>,
    pub teacher: Option<TeacherTarget>,
}

/// Encode every observation once with the student's frozen encoder and,
/// when a teacher is given, record its targets at the student temperature.
pub fn prepare_samples(
    student: &ModelParams,
    teacher: Option<&ModelParams>,
    data: &[Observation],
) -> Result<Vec<Sample>, DistillError> {
    data.iter()
        .map(|obs| {
            let patches =
                patchify(&obs.image).map_err(|e| DistillError::contract(e.to_string()))?;
            let features = build_prompt(&obs.sensors).features;
            let teacher = match teacher {
                Some(t) => {
                    let trace = forward(t, &patches, &features)?;
                    Some(TeacherTarget::from_trace(
                        &trace,
                        student.config.temperature,
                    ))
                }
                None => None,
            };
            Ok(Sample {
                z: encode(student, &patches)?,
                features,
                label: obs.label,
                teacher,
            })
        })
        .collect()
}

/// Mean stage loss over `batch`.
pub fn batch_loss(
    stage: Stage,
    params: &ModelParams,
    batch: &[&Sample],
    weights: &LossWeights,
    direction: KlDirection,
) -> Result<(f64, LossComponents), DistillError> {
    if batch.is_empty() {
        return Err(DistillError::contract("empty batch"));
    }
    let mut total = 0.0;
    let mut comps = LossComponents::default();
    for s in batch {
        let trace = forward_encoded(params, &s.z, &s.features)?;
        let (l, c) = stage_loss(
            stage,
            &trace,
            s.teacher.as_ref(),
            s.label,
            weights,
            direction,
        )?;
        total += l;
        comps.add(&c);
    }
    let n = batch.len() as f64;
    comps.scale(1.0 / n);
    Ok((total / n, comps))
}

/// Analytic gradient of the mean stage loss over `batch`, together with the
/// loss itself.
pub fn batch_grad(
    stage: Stage,
    params: &ModelParams,
    batch: &[&Sample],
    weights: &LossWeights,
    direction: KlDirection,
) -> Result<(Gradients, f64, LossComponents), DistillError> {
    if batch.is_empty() {
        return Err(DistillError::contract("empty batch"));
    }
    let n = batch.len() as f64;
    let mut grads = Gradients::zeros(params, stage);
    let mut total = 0.0;
    let mut comps = LossComponents::default();
    for s in batch {
        let trace = forward_encoded(params, &s.z, &s.features)?;
        let (l, c) = stage_loss(
            stage,
            &trace,
            s.teacher.as_ref(),
            s.label,
            weights,
            direction,
        )?;
        total += l;
        comps.add(&c);
        accumulate_sample_grad(
            &mut grads,
            stage,
            params,
            &trace,
            &s.features,
            s.teacher.as_ref(),
            s.label,
            weights,
            direction,
            1.0 / n,
        )?;
    }
    if !grads.all_finite() {
        let bad = grads
            .iter()
            .find(|(_, g)| g.iter().any(|v| !v.is_finite()))
            .map(|(id, _)| id.name())
            .unwrap_or("?");
        return Err(DistillError::NumericFault(bad.to_string()));
    }
    comps.scale(1.0 / n);
    Ok((grads, total / n, comps))
}

#[cfg(test)]
mod tests;
