use std::collections::HashSet;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::domain::{sha256_hex, to_canonical_vec, Observation, Rng};

use super::{gen_observation, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    /// Substream index; each split draws from its own jump-separated stream.
    fn stream(self) -> u32 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }

    pub fn data_file(self) -> String {
        format!("{}.ndjson.z", self.as_str())
    }

    pub fn manifest_file(self) -> String {
        format!("{}.manifest.json", self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub seed: u64,
    pub catalog_digest: String,
    pub counts: Vec<usize>,
    pub split: Split,
    pub file_digest: String,
}

impl DatasetManifest {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset {path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("dataset {path} does not match its manifest: {detail}")]
    Integrity { path: PathBuf, detail: String },
    #[error("counts has {got} entries but the world has {expected} classes")]
    CountMismatch { got: usize, expected: usize },
    #[error("observation {0} has no label")]
    Unlabeled(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Stratified, seed-shuffled observations for one split.
pub fn generate_split(
    world: &World,
    counts: &[usize],
    seed: u64,
    split: Split,
) -> Result<Vec<Observation>, SynthError> {
    if counts.len() != world.num_classes() {
        return Err(SynthError::CountMismatch {
            got: counts.len(),
            expected: world.num_classes(),
        });
    }
    let mut rng = Rng::substream(seed, split.stream());
    let mut out = Vec::with_capacity(counts.iter().sum());
    for (spec, &n) in world.specs.iter().zip(counts) {
        for _ in 0..n {
            out.push(gen_observation(spec, &mut rng));
        }
    }
    rng.shuffle(&mut out);
    Ok(out)
}

/// Newline-delimited canonical JSON, raw DEFLATE compressed.
pub fn encode_dataset(observations: &[Observation]) -> Vec<u8> {
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::default());
    for obs in observations {
        let line = to_canonical_vec(obs).expect("observation serializes");
        enc.write_all(&line).expect("in-memory write");
        enc.write_all(b"\n").expect("in-memory write");
    }
    enc.finish().expect("in-memory write")
}

pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<Vec<Observation>, SynthError> {
    let mut text = String::new();
    DeflateDecoder::new(bytes)
        .read_to_string(&mut text)
        .map_err(|e| SynthError::Format {
            path: path.to_path_buf(),
            detail: format!("deflate: {e}"),
        })?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let obs: Observation = serde_json::from_str(line).map_err(|e| SynthError::Format {
            path: path.to_path_buf(),
            detail: format!("line {}: {e}", n + 1),
        })?;
        if !seen.insert(obs.obs_id.clone()) {
            return Err(SynthError::Format {
                path: path.to_path_buf(),
                detail: format!("duplicate obs_id {}", obs.obs_id),
            });
        }
        out.push(obs);
    }
    Ok(out)
}

/// Generate one split and write `<split>.ndjson.z` plus `<split>.manifest.json`
/// into `dir`.
pub fn gen_dataset(
    world: &World,
    counts: &[usize],
    seed: u64,
    split: Split,
    dir: &Path,
) -> Result<(PathBuf, DatasetManifest), SynthError> {
    let observations = generate_split(world, counts, seed, split)?;
    let bytes = encode_dataset(&observations);
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let data_path = dir.join(split.data_file());
    fs::write(&data_path, &bytes).map_err(io_err(&data_path))?;

    let manifest = DatasetManifest {
        name: world.name.clone(),
        seed,
        catalog_digest: world.catalog.digest_hex(),
        counts: counts.to_vec(),
        split,
        file_digest: sha256_hex(&bytes),
    };
    let manifest_path = dir.join(split.manifest_file());
    let mut manifest_bytes = to_canonical_vec(&manifest).expect("manifest serializes");
    manifest_bytes.push(b'\n');
    fs::write(&manifest_path, manifest_bytes).map_err(io_err(&manifest_path))?;
    Ok((data_path, manifest))
}

/// Read a split back, checking the file digest and per-class counts against
/// its manifest.
pub fn load_split(
    dir: &Path,
    split: Split,
) -> Result<(Vec<Observation>, DatasetManifest), SynthError> {
    let manifest_path = dir.join(split.manifest_file());
    let raw = fs::read(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: DatasetManifest =
        serde_json::from_slice(&raw).map_err(|e| SynthError::Format {
            path: manifest_path.clone(),
            detail: e.to_string(),
        })?;

    let data_path = dir.join(split.data_file());
    let bytes = fs::read(&data_path).map_err(io_err(&data_path))?;
    if sha256_hex(&bytes) != manifest.file_digest {
        return Err(SynthError::Integrity {
            path: data_path,
            detail: "file digest differs from manifest".into(),
        });
    }
    let observations = decode_dataset(&bytes, &data_path)?;
    let mut counts = vec![0usize; manifest.counts.len()];
    for obs in &observations {
        match obs.label {
            Some(l) if l < counts.len() => counts[l] += 1,
            _ => {
                return Err(SynthError::Integrity {
                    path: data_path,
                    detail: format!("observation {} has an unexpected label", obs.obs_id),
                })
            }
        }
    }
    if counts != manifest.counts {
        return Err(SynthError::Integrity {
            path: data_path,
            detail: format!(
                "class counts {counts:?} differ from manifest {:?}",
                manifest.counts
            ),
        });
    }
    Ok((observations, manifest))
}

/// Per-class counts for the default dataset sizes (train 2000 / val 400 / test 400
/// over eight classes).
pub fn default_counts(split: Split, classes: usize) -> Vec<usize> {
    let per_class = match split {
        Split::Train => 250,
        Split::Val | Split::Test => 50,
    };
    vec![per_class; classes]
}
