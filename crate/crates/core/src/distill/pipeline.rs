use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{to_canonical_vec, ClassCatalog, Observation};
use crate::model::{save, ArtifactMeta, ModelConfig, ModelParams, StageTag};

use super::{train_stage, DistillError, Stage, StageConfig, TrainReport};

pub struct PipelineData {
    pub train: Vec<Observation>,
    pub val: Vec<Observation>,
    pub catalog: ClassCatalog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub teacher_init_seed: u64,
    pub student_init_seed: u64,
    pub temperature: f64,
    pub teacher: StageConfig,
    pub dpt: StageConfig,
    pub sft: StageConfig,
    pub dft: StageConfig,
}

impl PipelineConfig {
    pub fn with_seed(seed: u64) -> Self {
        PipelineConfig {
            teacher_init_seed: seed.wrapping_mul(31).wrapping_add(1),
            student_init_seed: seed.wrapping_mul(31).wrapping_add(2),
            temperature: 1.0,
            teacher: StageConfig::default_for(Stage::TeacherPretrain, seed.wrapping_add(10)),
            dpt: StageConfig::default_for(Stage::Dpt, seed.wrapping_add(11)),
            sft: StageConfig::default_for(Stage::Sft, seed.wrapping_add(12)),
            dft: StageConfig::default_for(Stage::Dft, seed.wrapping_add(13)),
        }
    }

    /// Teacher, DPT, SFT and DFT configs in pipeline order.
    pub fn stages(&self) -> [&StageConfig; 4] {
        [&self.teacher, &self.dpt, &self.sft, &self.dft]
    }

    /// Same pipeline with every stage's epoch count multiplied by `factor`
    /// (at least one epoch each).
    pub fn scaled_epochs(mut self, factor: f64) -> Self {
        for c in [
            &mut self.teacher,
            &mut self.dpt,
            &mut self.sft,
            &mut self.dft,
        ] {
            c.epochs = ((c.epochs as f64 * factor).round() as usize).max(1);
        }
        self
    }
}

#[derive(Debug, Clone)]
pub struct StageArtifact {
    pub tag: StageTag,
    pub params: ModelParams,
    pub meta: ArtifactMeta,
    pub bytes: Vec<u8>,
}

impl StageArtifact {
    fn new(
        params: ModelParams,
        catalog: &ClassCatalog,
        tag: StageTag,
    ) -> Result<Self, DistillError> {
        let (bytes, meta) = save(&params, &catalog.digest_hex(), tag)?;
        Ok(StageArtifact {
            tag,
            params,
            meta,
            bytes,
        })
    }

    pub fn file_name(&self) -> String {
        artifact_file_name(self.meta.config.role, self.tag)
    }
}

pub fn artifact_file_name(role: crate::model::Role, tag: StageTag) -> String {
    match role {
        crate::model::Role::Teacher => "teacher.flsm".to_string(),
        crate::model::Role::Student => format!("student-{tag}.flsm"),
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub teacher: StageArtifact,
    /// init, dpt, sft, dft, in that order.
    pub students: Vec<StageArtifact>,
    pub reports: Vec<TrainReport>,
}

impl PipelineOutput {
    pub fn final_student(&self) -> &StageArtifact {
        self.students.last().expect("pipeline produces students")
    }

    pub fn student(&self, tag: StageTag) -> Option<&StageArtifact> {
        self.students.iter().find(|s| s.tag == tag)
    }

    pub fn report(&self, stage: Stage) -> Option<&TrainReport> {
        self.reports.iter().find(|r| r.stage == stage)
    }
}

fn in_stage<T>(stage: Stage, r: Result<T, DistillError>) -> Result<T, DistillError> {
    r.map_err(|e| DistillError::Stage {
        stage: stage.to_string(),
        source: Box::new(e),
    })
}

/// Teacher pretraining followed by DPT, SFT and DFT on the student. When
/// `out_dir` is given every artifact and `reports.json` are written there.
pub fn run_pipeline(
    data: &PipelineData,
    config: &PipelineConfig,
    out_dir: Option<&Path>,
) -> Result<PipelineOutput, DistillError> {
    let catalog = &data.catalog;
    let val = Some(data.val.as_slice());

    let teacher_init = ModelParams::init(
        ModelConfig::teacher().with_temperature(config.temperature),
        config.teacher_init_seed,
    )?;
    let (teacher_params, teacher_report) = in_stage(
        Stage::TeacherPretrain,
        train_stage(&teacher_init, None, &data.train, val, &config.teacher),
    )?;
    let teacher = StageArtifact::new(teacher_params, catalog, StageTag::TeacherPretrain)?;

    let student_init = ModelParams::init(
        ModelConfig::student().with_temperature(config.temperature),
        config.student_init_seed,
    )?;
    let init = StageArtifact::new(student_init, catalog, StageTag::Init)?;

    let (dpt_params, dpt_report) = in_stage(
        Stage::Dpt,
        train_stage(
            &init.params,
            Some(&teacher.params),
            &data.train,
            val,
            &config.dpt,
        ),
    )?;
    let dpt = StageArtifact::new(dpt_params, catalog, StageTag::Dpt)?;

    let (sft_params, sft_report) = in_stage(
        Stage::Sft,
        train_stage(&dpt.params, None, &data.train, val, &config.sft),
    )?;
    let sft = StageArtifact::new(sft_params, catalog, StageTag::Sft)?;

    let (dft_params, dft_report) = in_stage(
        Stage::Dft,
        train_stage(
            &sft.params,
            Some(&teacher.params),
            &data.train,
            val,
            &config.dft,
        ),
    )?;
    let dft = StageArtifact::new(dft_params, catalog, StageTag::Dft)?;

    let output = PipelineOutput {
        teacher,
        students: vec![init, dpt, sft, dft],
        reports: vec![teacher_report, dpt_report, sft_report, dft_report],
    };
    if let Some(dir) = out_dir {
        write_outputs(&output, dir)?;
    }
    Ok(output)
}

fn write_outputs(output: &PipelineOutput, dir: &Path) -> Result<(), DistillError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DistillError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    for art in std::iter::once(&output.teacher).chain(&output.students) {
        let path = dir.join(art.file_name());
        fs::write(&path, &art.bytes).map_err(io(&path))?;
    }
    let path = dir.join("reports.json");
    let mut bytes = to_canonical_vec(&output.reports).expect("reports serialize");
    bytes.push(b'\n');
    fs::write(&path, bytes).map_err(io(&path))?;
    Ok(())
}
