//! Deterministic synthetic farm world: sinusoidal leaf textures plus
//! Gaussian sensor readings per class, written as labeled datasets.

mod dataset;
mod generate;
mod oracle;
mod vqa;
mod world;

pub use dataset::{
    decode_dataset, default_counts, encode_dataset, gen_dataset, generate_split, load_split,
    DatasetManifest, Split, SynthError,
};
pub use generate::{gen_observation, random_uuid, texture_value};
pub use oracle::{oracle_features, NearestCentroid};
pub use vqa::{
    class_keywords, closed_answer, gen_vqa_pairs, VqaRecord, CLOSED_QUESTION, OPEN_QUESTION,
};
pub use world::{default_catalog, default_world, ClassSpec, World};
