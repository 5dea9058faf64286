//! Append-only telemetry buffer. The log holds length-prefixed canonical
//! JSON entries (`u32 BE length | JSON`): a record, the opening of a batch
//! over the oldest pending records, or the acknowledgement of a batch.
//! Replaying the log after a restart restores pending records and the open
//! batch with its original batch_id.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use farmlight_core::domain::to_canonical_vec;
use farmlight_core::TelemetryRecord;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Entry {
    Record { record: TelemetryRecord },
    Batch { batch_id: String, count: usize },
    Ack { batch_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct OpenBatch {
    batch_id: String,
    count: usize,
}

#[derive(Debug)]
pub struct TelemetryBuffer {
    path: Option<PathBuf>,
    file: Option<File>,
    pending: Vec<TelemetryRecord>,
    open: Option<OpenBatch>,
    opened: Vec<String>,
    acked_records: u64,
}

impl TelemetryBuffer {
    pub fn in_memory() -> Self {
        TelemetryBuffer {
            path: None,
            file: None,
            pending: Vec::new(),
            open: None,
            opened: Vec::new(),
            acked_records: 0,
        }
    }

    /// Open (or create) the log at `path` and replay it. A torn final entry
    /// from an interrupted write is discarded.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut buf = TelemetryBuffer::in_memory();
        let mut bytes = Vec::new();
        if path.exists() {
            File::open(path)?.read_to_end(&mut bytes)?;
        }
        let mut at = 0;
        while at + 4 <= bytes.len() {
            let n = u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
            let Some(body) = bytes.get(at + 4..at + 4 + n) else {
                break;
            };
            let Ok(entry) = serde_json::from_slice::<Entry>(body) else {
                break;
            };
            buf.apply(entry);
            at += 4 + n;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        if at < bytes.len() {
            tracing::warn!(path = %path.display(), dropped = bytes.len() - at, "discarding torn telemetry log tail");
            file.set_len(at as u64)?;
        }
        buf.path = Some(path.to_path_buf());
        buf.file = Some(file);
        Ok(buf)
    }

    fn apply(&mut self, entry: Entry) {
        match entry {
            Entry::Record { record } => self.pending.push(record),
            Entry::Batch { batch_id, count } => {
                self.opened.push(batch_id.clone());
                self.open = Some(OpenBatch { batch_id, count });
            }
            Entry::Ack { batch_id } => {
                if let Some(open) = self.open.take_if(|o| o.batch_id == batch_id) {
                    self.pending.drain(..open.count.min(self.pending.len()));
                    self.acked_records += open.count as u64;
                }
            }
        }
    }

    fn write(&mut self, entry: &Entry) -> std::io::Result<()> {
        if let Some(f) = &mut self.file {
            let body = to_canonical_vec(entry).map_err(std::io::Error::other)?;
            let mut framed = Vec::with_capacity(4 + body.len());
            framed.extend_from_slice(&(body.len() as u32).to_be_bytes());
            framed.extend_from_slice(&body);
            f.write_all(&framed)?;
            f.flush()?;
        }
        Ok(())
    }

    fn log(&mut self, entry: Entry) -> std::io::Result<()> {
        self.write(&entry)?;
        self.apply(entry);
        Ok(())
    }

    pub fn append(&mut self, record: TelemetryRecord) -> std::io::Result<()> {
        self.log(Entry::Record { record })
    }

    /// The batch awaiting acknowledgement, if any.
    pub fn open_batch(&self) -> Option<(&str, &[TelemetryRecord])> {
        self.open
            .as_ref()
            .map(|o| (o.batch_id.as_str(), &self.pending[..o.count]))
    }

    /// Oldest pending records not yet in a batch (only when none is open).
    pub fn unbatched(&self, max: usize) -> &[TelemetryRecord] {
        if self.open.is_some() {
            return &[];
        }
        &self.pending[..max.min(self.pending.len())]
    }

    pub fn commit_batch(&mut self, batch_id: &str, count: usize) -> std::io::Result<()> {
        assert!(self.open.is_none(), "a batch is already open");
        assert!(count > 0 && count <= self.pending.len(), "bad batch size");
        self.log(Entry::Batch {
            batch_id: batch_id.to_string(),
            count,
        })
    }

    /// Drop the records of the open batch if `batch_id` names it.
    pub fn ack(&mut self, batch_id: &str) -> std::io::Result<bool> {
        if self.open.as_ref().is_none_or(|o| o.batch_id != batch_id) {
            return Ok(false);
        }
        self.log(Entry::Ack {
            batch_id: batch_id.to_string(),
        })?;
        if self.pending.is_empty() {
            // Nothing left to replay; start the log afresh.
            if let Some(f) = &self.file {
                f.set_len(0)?;
            }
        }
        Ok(true)
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn acked_records(&self) -> u64 {
        self.acked_records
    }

    /// Every batch_id this buffer has opened, oldest first.
    pub fn opened_batch_ids(&self) -> &[String] {
        &self.opened
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }
}
