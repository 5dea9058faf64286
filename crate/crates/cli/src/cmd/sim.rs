use std::path::Path;

use farmlight_core::distill::{run_pipeline, PipelineConfig, PipelineData};
use farmlight_core::model::StageTag;
use farmlight_core::synthgen::{default_counts, default_world, generate_split, Split};
use farmlight_edge::sim::{run, SimConfig, SimSummary};

use crate::error::CliError;

/// Initial and update models: given files, an artifact directory, or a
/// pipeline trained here from `seed`.
pub enum Models<'a> {
    Files(&'a Path, &'a Path),
    Artifacts(&'a Path),
    Train(&'a PipelineConfig),
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(CliError::io(path))
}

pub fn resolve(models: Models<'_>, seed: u64) -> Result<(Vec<u8>, Vec<u8>), CliError> {
    match models {
        Models::Files(a, b) => Ok((read(a)?, read(b)?)),
        Models::Artifacts(dir) => Ok((read(&dir.join("student-sft.flsm"))?, read(&dir.join("student-dft.flsm"))?)),
        Models::Train(pc) => {
            let world = default_world();
            let k = world.num_classes();
            let data = PipelineData {
                train: generate_split(&world, &default_counts(Split::Train, k), seed, Split::Train)?,
                val: generate_split(&world, &default_counts(Split::Val, k), seed, Split::Val)?,
                catalog: world.catalog,
            };
            tracing::info!(seed, "training models for the simulation");
            let out = run_pipeline(&data, pc, None)?;
            let bytes = |t| out.student(t).expect("pipeline student").bytes.clone();
            Ok((bytes(StageTag::Sft), bytes(StageTag::Dft)))
        }
    }
}

pub fn e2e(config: &SimConfig, initial: &[u8], update: &[u8]) -> Result<SimSummary, CliError> {
    Ok(run(config, &default_world(), initial, update)?)
}
