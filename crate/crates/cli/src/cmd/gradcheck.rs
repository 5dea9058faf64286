use farmlight_core::distill::{
    gradcheck, prepare_samples, PipelineConfig, Sample, Stage, GRADCHECK_TOLERANCE,
};
use farmlight_core::model::{ModelConfig, ModelParams};
use farmlight_core::synthgen::{default_world, generate_split, Split};
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageCheck {
    pub stage: Stage,
    pub coords: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckSummary {
    pub seed: u64,
    pub tolerance: f64,
    pub stages: Vec<StageCheck>,
    pub passed: bool,
}

/// Freshly initialized teacher and student on one training sample per
/// class, every stage loss under its configured weights and KL direction.
pub fn run(pc: &PipelineConfig, coords: usize, seed: u64) -> Result<GradcheckSummary, CliError> {
    let world = default_world();
    let obs = generate_split(&world, &vec![1; world.num_classes()], seed, Split::Train)?;
    let teacher = ModelParams::init(
        ModelConfig::teacher().with_temperature(pc.temperature),
        pc.teacher_init_seed,
    )?;
    let student = ModelParams::init(
        ModelConfig::student().with_temperature(pc.temperature),
        pc.student_init_seed,
    )?;
    let mut stages = Vec::new();
    for (stage, cfg) in Stage::ALL.into_iter().zip(pc.stages()) {
        let (params, t) = match stage {
            Stage::TeacherPretrain => (&teacher, None),
            s => (&student, s.uses_teacher().then_some(&teacher)),
        };
        let samples = prepare_samples(params, t, &obs)?;
        let batch: Vec<&Sample> = samples.iter().collect();
        let r = gradcheck(stage, params, &batch, &cfg.weights, cfg.kl_direction, coords, seed)?;
        stages.push(StageCheck {
            stage,
            coords: r.checks.len(),
            max_rel_err: r.max_rel_err,
            passed: r.passed(GRADCHECK_TOLERANCE),
        });
    }
    Ok(GradcheckSummary {
        seed,
        tolerance: GRADCHECK_TOLERANCE,
        passed: stages.iter().all(|s| s.passed),
        stages,
    })
}
