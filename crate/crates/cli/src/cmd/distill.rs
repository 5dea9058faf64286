//! Whole pipeline or one stage at a time. Stage runs read their inputs from
//! the artifact directory, so `teacher`, `dpt`, `sft`, `dft` in sequence
//! reproduce `all` exactly.

use std::fs;
use std::path::{Path, PathBuf};

use farmlight_core::distill::{
    artifact_file_name, run_pipeline, train_stage, PipelineConfig, PipelineData, StageConfig,
    TrainReport,
};
use farmlight_core::domain::to_canonical_vec;
use farmlight_core::model::{load, save, ModelConfig, ModelParams, Role, StageTag};
use farmlight_core::synthgen::{default_world, load_split, Split};
use serde::Serialize;

use crate::args::StageArg;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSummary {
    pub stage: String,
    pub artifact: PathBuf,
    pub version_id: String,
    pub final_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub frozen_unchanged: bool,
}

/// Train and val splits from a `synth gen` directory, checked against the
/// default world's catalog.
pub fn load_data(dir: &Path) -> Result<PipelineData, CliError> {
    let catalog = default_world().catalog;
    let (train, m) = load_split(dir, Split::Train)?;
    let (val, _) = load_split(dir, Split::Val)?;
    if m.catalog_digest != catalog.digest_hex() {
        return Err(CliError::Check(format!(
            "dataset in {} was generated for catalog {}, expected {}",
            dir.display(),
            m.catalog_digest,
            catalog.digest_hex()
        )));
    }
    Ok(PipelineData { train, val, catalog })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(CliError::io(path))
}

fn store(
    dir: &Path,
    params: &ModelParams,
    data: &PipelineData,
    tag: StageTag,
) -> Result<(PathBuf, String), CliError> {
    let (bytes, meta) = save(params, &data.catalog.digest_hex(), tag)?;
    let path = dir.join(artifact_file_name(params.config.role, tag));
    write(&path, &bytes)?;
    Ok((path, meta.version_id))
}

fn require(
    dir: &Path,
    role: Role,
    tag: StageTag,
    needs: &'static str,
    data: &PipelineData,
) -> Result<ModelParams, CliError> {
    let path = dir.join(artifact_file_name(role, tag));
    let what = match role {
        Role::Teacher => "teacher",
        Role::Student => match tag {
            StageTag::Dpt => "DPT student",
            StageTag::Sft => "SFT student",
            _ => "student",
        },
    };
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::MissingArtifact { what, needs, path })
        }
        Err(e) => return Err(CliError::io(path)(e)),
    };
    let m = load(&bytes)?;
    if m.meta.catalog_digest != data.catalog.digest_hex() {
        return Err(CliError::Check(format!(
            "{} was trained for a different class catalog",
            path.display()
        )));
    }
    Ok(m.params)
}

fn train_one(
    dir: &Path,
    data: &PipelineData,
    start: &ModelParams,
    teacher: Option<&ModelParams>,
    config: &StageConfig,
    tag: StageTag,
) -> Result<StageSummary, CliError> {
    let (params, report) = train_stage(start, teacher, &data.train, Some(&data.val), config)?;
    let (artifact, version_id) = store(dir, &params, data, tag)?;
    let mut bytes = to_canonical_vec(&report).expect("reports serialize");
    bytes.push(b'\n');
    write(&dir.join(format!("report-{tag}.json")), &bytes)?;
    Ok(summary(&report, artifact, version_id))
}

fn summary(report: &TrainReport, artifact: PathBuf, version_id: String) -> StageSummary {
    StageSummary {
        stage: report.stage.to_string(),
        artifact,
        version_id,
        final_loss: report.final_loss(),
        val_accuracy: report.val_accuracy,
        frozen_unchanged: report.frozen_unchanged(),
    }
}

fn student_init(dir: &Path, data: &PipelineData, pc: &PipelineConfig) -> Result<ModelParams, CliError> {
    let path = dir.join(artifact_file_name(Role::Student, StageTag::Init));
    if path.exists() {
        return Ok(load(&fs::read(&path).map_err(CliError::io(&path))?)?.params);
    }
    let p = ModelParams::init(
        ModelConfig::student().with_temperature(pc.temperature),
        pc.student_init_seed,
    )?;
    store(dir, &p, data, StageTag::Init)?;
    Ok(p)
}

pub fn distill(
    stage: StageArg,
    data: &PipelineData,
    pc: &PipelineConfig,
    dir: &Path,
) -> Result<Vec<StageSummary>, CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let out = match stage {
        StageArg::All => {
            let out = run_pipeline(data, pc, Some(dir))?;
            let arts = std::iter::once(&out.teacher).chain(&out.students[1..]);
            arts.zip(&out.reports)
                .map(|(a, r)| summary(r, dir.join(a.file_name()), a.meta.version_id.clone()))
                .collect()
        }
        StageArg::Teacher => {
            let init = ModelParams::init(
                ModelConfig::teacher().with_temperature(pc.temperature),
                pc.teacher_init_seed,
            )?;
            vec![train_one(dir, data, &init, None, &pc.teacher, StageTag::TeacherPretrain)?]
        }
        StageArg::Dpt => {
            let teacher = require(dir, Role::Teacher, StageTag::TeacherPretrain, "teacher", data)?;
            let init = student_init(dir, data, pc)?;
            vec![train_one(dir, data, &init, Some(&teacher), &pc.dpt, StageTag::Dpt)?]
        }
        StageArg::Sft => {
            let dpt = require(dir, Role::Student, StageTag::Dpt, "dpt", data)?;
            vec![train_one(dir, data, &dpt, None, &pc.sft, StageTag::Sft)?]
        }
        StageArg::Dft => {
            let teacher = require(dir, Role::Teacher, StageTag::TeacherPretrain, "teacher", data)?;
            let sft = require(dir, Role::Student, StageTag::Sft, "sft", data)?;
            vec![train_one(dir, data, &sft, Some(&teacher), &pc.dft, StageTag::Dft)?]
        }
    };
    Ok(out)
}
