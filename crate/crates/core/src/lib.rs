//! Core of the farmlight stack: shared domain types, the synthetic farm
//! world, prompt/patch featurization, the tiny multimodal classifier and the
//! teacher-to-student distillation pipeline that trains it.

pub mod distill;
pub mod domain;
pub mod evalbench;
pub mod fusion;
pub mod model;
pub mod synthgen;

pub use domain::{
    Action, ActionTaken, ActuationCommand, Alert, ClassCatalog, ClassInfo, CommandState, Diagnosis,
    Location, Observation, PatchImage, Rng, SensorReading, TelemetryRecord, Urgency,
};
