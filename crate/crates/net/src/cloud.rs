//! Cloud side: a model registry serving chunked downloads and an idempotent
//! telemetry store. `CloudService::handle` is pure message-in, messages-out;
//! the TCP server and the simulator both drive it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use farmlight_core::domain::{sha256_hex, to_canonical_vec};
use farmlight_core::model::{load, ModelError, StageTag};
use farmlight_core::{Alert, TelemetryRecord};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::{
    decompress_records, BatchAck, HelloAck, Message, ModelChunk, ModelManifest, TelemetryBatch,
    CHUNK_SIZE,
};

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryEntry {
    pub version_id: String,
    pub bytes: Arc<Vec<u8>>,
    pub sha256_hex: String,
    pub published_ms: u64,
    pub stage: StageTag,
}

impl RegistryEntry {
    pub fn manifest(&self) -> ModelManifest {
        let total = self.bytes.len() as u64;
        ModelManifest {
            version_id: self.version_id.clone(),
            total_bytes: total,
            chunk_size: CHUNK_SIZE,
            chunk_count: chunk_count(total),
            sha256_hex: self.sha256_hex.clone(),
        }
    }

    pub fn chunk(&self, index: u32) -> Option<&[u8]> {
        let start = index as usize * CHUNK_SIZE as usize;
        if index >= chunk_count(self.bytes.len() as u64) {
            return None;
        }
        let end = (start + CHUNK_SIZE as usize).min(self.bytes.len());
        Some(&self.bytes[start..end])
    }
}

pub fn chunk_count(total_bytes: u64) -> u32 {
    total_bytes.div_ceil(CHUNK_SIZE as u64) as u32
}

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("artifact rejected: {0}")]
    InvalidArtifact(#[from] ModelError),
    #[error("version {0} is already published")]
    DuplicateVersion(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CloudError + '_ {
    move |source| CloudError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Default)]
pub struct Registry {
    entries: Vec<RegistryEntry>,
}

impl Registry {
    pub fn newest(&self) -> Option<&RegistryEntry> {
        self.entries.last()
    }

    pub fn get(&self, version_id: &str) -> Option<&RegistryEntry> {
        self.entries.iter().find(|e| e.version_id == version_id)
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    /// Verify the artifact, then append it as the newest version.
    pub fn publish(&mut self, bytes: Vec<u8>, now_ms: u64) -> Result<&RegistryEntry, CloudError> {
        let loaded = load(&bytes)?;
        let version_id = loaded.meta.version_id;
        if self.get(&version_id).is_some() {
            return Err(CloudError::DuplicateVersion(version_id));
        }
        self.entries.push(RegistryEntry {
            sha256_hex: sha256_hex(&bytes),
            version_id,
            bytes: Arc::new(bytes),
            published_ms: now_ms,
            stage: loaded.meta.stage,
        });
        Ok(self.entries.last().unwrap())
    }
}

#[derive(Debug, Default)]
pub struct TelemetryStore {
    batches: BTreeSet<(String, String)>,
    records: BTreeMap<String, Vec<TelemetryRecord>>,
}

impl TelemetryStore {
    /// Returns false (and stores nothing) when the batch was seen before.
    pub fn insert(&mut self, edge_id: &str, batch_id: &str, records: Vec<TelemetryRecord>) -> bool {
        if !self.batches.insert((edge_id.to_string(), batch_id.to_string())) {
            return false;
        }
        self.records.entry(edge_id.to_string()).or_default().extend(records);
        true
    }

    pub fn contains(&self, edge_id: &str, batch_id: &str) -> bool {
        self.batches.contains(&(edge_id.to_string(), batch_id.to_string()))
    }

    pub fn batch_ids(&self) -> impl Iterator<Item = &(String, String)> {
        self.batches.iter()
    }

    pub fn batch_count(&self) -> usize {
        self.batches.len()
    }

    pub fn records(&self, edge_id: &str) -> &[TelemetryRecord] {
        self.records.get(edge_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn record_count(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct IndexLine {
    published_ms: u64,
    sha256_hex: String,
    stage: StageTag,
    version_id: String,
}

/// One line per accepted batch in `telemetry/<edge_id>.ndjson`.
#[derive(Serialize, Deserialize)]
struct StoredBatch {
    batch_id: String,
    edge_id: String,
    records: Vec<TelemetryRecord>,
}

/// Edge ids become file names, so keep them to a safe alphabet.
pub fn valid_edge_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

#[derive(Debug, Default)]
pub struct CloudService {
    pub registry: Registry,
    pub store: TelemetryStore,
    pub alerts: Vec<Alert>,
    dir: Option<PathBuf>,
    sessions: u64,
}

impl CloudService {
    pub fn new() -> Self {
        CloudService::default()
    }

    /// A service persisting to `dir/registry` and `dir/telemetry`, reloading
    /// whatever an earlier run left there.
    pub fn open(dir: &Path) -> Result<Self, CloudError> {
        let mut svc = CloudService {
            dir: Some(dir.to_path_buf()),
            ..CloudService::default()
        };
        let reg = dir.join("registry");
        let tel = dir.join("telemetry");
        fs::create_dir_all(&reg).map_err(io_err(&reg))?;
        fs::create_dir_all(&tel).map_err(io_err(&tel))?;

        let index = reg.join("index.ndjson");
        if index.exists() {
            let f = File::open(&index).map_err(io_err(&index))?;
            for line in BufReader::new(f).lines() {
                let line = line.map_err(io_err(&index))?;
                let Ok(entry) = serde_json::from_str::<IndexLine>(&line) else {
                    // A torn final line from an interrupted append.
                    continue;
                };
                let path = reg.join(format!("{}.flsm", entry.version_id));
                let bytes = fs::read(&path).map_err(io_err(&path))?;
                if sha256_hex(&bytes) != entry.sha256_hex {
                    return Err(CloudError::Corrupt {
                        path,
                        detail: "digest differs from index".into(),
                    });
                }
                svc.registry.publish(bytes, entry.published_ms)?;
            }
        }

        for item in fs::read_dir(&tel).map_err(io_err(&tel))? {
            let path = item.map_err(io_err(&tel))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("ndjson") {
                continue;
            }
            let f = File::open(&path).map_err(io_err(&path))?;
            for line in BufReader::new(f).lines() {
                let line = line.map_err(io_err(&path))?;
                let Ok(b) = serde_json::from_str::<StoredBatch>(&line) else {
                    continue;
                };
                svc.store.insert(&b.edge_id, &b.batch_id, b.records);
            }
        }
        Ok(svc)
    }

    pub fn publish(&mut self, bytes: Vec<u8>, now_ms: u64) -> Result<RegistryEntry, CloudError> {
        let entry = self.registry.publish(bytes, now_ms)?.clone();
        if let Some(dir) = &self.dir {
            let reg = dir.join("registry");
            let path = reg.join(format!("{}.flsm", entry.version_id));
            fs::write(&path, entry.bytes.as_slice()).map_err(io_err(&path))?;
            let mut line = to_canonical_vec(&IndexLine {
                published_ms: entry.published_ms,
                sha256_hex: entry.sha256_hex.clone(),
                stage: entry.stage,
                version_id: entry.version_id.clone(),
            })
            .expect("index line serializes");
            line.push(b'\n');
            append(&reg.join("index.ndjson"), &line)?;
        }
        tracing::info!(version_id = %entry.version_id, bytes = entry.bytes.len(), "published model");
        Ok(entry)
    }

    fn persist_batch(&self, stored: &StoredBatch) -> Result<(), CloudError> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let mut line = to_canonical_vec(stored).expect("batch serializes");
        line.push(b'\n');
        append(
            &dir.join("telemetry").join(format!("{}.ndjson", stored.edge_id)),
            &line,
        )
    }

    fn on_batch(&mut self, b: TelemetryBatch) -> Message {
        let reject = |detail: String| Message::error("bad_batch", detail);
        if !valid_edge_id(&b.edge_id) {
            return reject(format!("invalid edge id {:?}", b.edge_id));
        }
        if self.store.contains(&b.edge_id, &b.batch_id) {
            return Message::BatchAck(BatchAck {
                batch_id: b.batch_id,
            });
        }
        let records = match decompress_records(&b.records) {
            Ok(r) => r,
            Err(e) => return reject(e.to_string()),
        };
        if records.len() != b.count as usize {
            return reject(format!("header says {} records, body has {}", b.count, records.len()));
        }
        for r in &records {
            if r.edge_id != b.edge_id {
                return reject(format!("record from {} inside batch of {}", r.edge_id, b.edge_id));
            }
            if let Err(e) = r.validate() {
                return reject(e.to_string());
            }
        }
        let stored = StoredBatch {
            batch_id: b.batch_id,
            edge_id: b.edge_id,
            records,
        };
        if let Err(e) = self.persist_batch(&stored) {
            tracing::error!(error = %e, "telemetry persistence failed");
            return Message::error("storage", e.to_string());
        }
        self.store
            .insert(&stored.edge_id, &stored.batch_id, stored.records);
        Message::BatchAck(BatchAck {
            batch_id: stored.batch_id,
        })
    }

    pub fn handle(&mut self, msg: Message) -> Vec<Message> {
        match msg {
            Message::Hello(h) => {
                self.sessions += 1;
                vec![Message::HelloAck(HelloAck {
                    session_id: format!("s{}-{}", self.sessions, h.node_id),
                })]
            }
            Message::TelemetryBatch(b) => vec![self.on_batch(b)],
            Message::ModelQuery(_) => match self.registry.newest() {
                Some(e) => vec![Message::ModelManifest(e.manifest())],
                None => vec![Message::error("no_such_version", "registry is empty")],
            },
            Message::ModelChunkReq(req) => match self.registry.get(&req.version_id) {
                None => vec![Message::error("no_such_version", req.version_id)],
                Some(e) => match e.chunk(req.index) {
                    None => vec![Message::error(
                        "bad_index",
                        format!("{} has no chunk {}", req.version_id, req.index),
                    )],
                    Some(bytes) => vec![Message::ModelChunk(ModelChunk {
                        version_id: req.version_id,
                        index: req.index,
                        bytes: bytes.to_vec(),
                    })],
                },
            },
            Message::Alert(a) => {
                self.alerts.push(a);
                Vec::new()
            }
            Message::Error(e) => {
                tracing::warn!(code = %e.code, detail = %e.detail, "peer reported error");
                Vec::new()
            }
            m @ (Message::Query(_) | Message::Response(_)) => {
                vec![Message::error("unsupported", format!("cloud does not answer {}", m.msg_type()))]
            }
            m => vec![Message::error("unexpected", format!("cloud does not accept {}", m.msg_type()))],
        }
    }

    /// Frame-level entry point: malformed input yields an ERROR frame.
    pub fn handle_frame(&mut self, frame: &[u8]) -> Vec<Vec<u8>> {
        let replies = match Message::decode(frame) {
            Ok(m) => self.handle(m),
            Err(e) => vec![Message::error(e.code(), e.to_string())],
        };
        replies
            .into_iter()
            .filter_map(|m| match m.encode() {
                Ok(f) => Some(f),
                Err(e) => {
                    tracing::error!(error = %e, "reply does not encode");
                    None
                }
            })
            .collect()
    }
}

fn append(path: &Path, bytes: &[u8]) -> Result<(), CloudError> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))?;
    f.sync_data().map_err(io_err(path))
}
