//! Edge side of the cloud protocol as a sans-IO state machine. `poll` is
//! called on every tick and returns frames to send; `on_message` handles one
//! inbound message and may return an immediate follow-up. One request is in
//! flight at a time; a missing reply counts as a failure and the next
//! attempt waits out an exponential backoff with seeded jitter.

use farmlight_core::domain::sha256_hex;
use farmlight_core::synthgen::random_uuid;
use farmlight_core::Rng;
use farmlight_net::{
    chunk_count, compress_records, Hello, Message, ModelChunkReq, ModelManifest, ModelQuery,
    NodeRole, TelemetryBatch, CHUNK_SIZE, MAX_PAYLOAD,
};
use serde::Serialize;

use crate::runtime::EdgeRuntime;
use crate::EdgeError;

#[derive(Debug, Clone, PartialEq)]
pub struct SyncConfig {
    pub response_timeout_ms: u64,
    pub backoff_base_ms: u64,
    pub backoff_cap_ms: u64,
    pub max_model_bytes: u64,
    pub seed: u64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        SyncConfig {
            response_timeout_ms: 2_000,
            backoff_base_ms: 1_000,
            backoff_cap_ms: 60_000,
            max_model_bytes: 64 << 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Waiting {
    HelloAck,
    BatchAck(String),
    Manifest,
    Chunk(u32),
}

#[derive(Debug)]
struct Download {
    manifest: ModelManifest,
    data: Vec<u8>,
    next: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SyncStats {
    pub frames_sent: u64,
    pub timeouts: u64,
    pub errors_received: u64,
    pub batches_acked: u64,
    pub swaps: u64,
    pub integrity_failures: u64,
}

#[derive(Debug)]
pub struct SyncClient {
    config: SyncConfig,
    rng: Rng,
    session: Option<String>,
    waiting: Option<(Waiting, u64)>,
    failures: u32,
    retry_at: u64,
    last_model_check: Option<u64>,
    download: Option<Download>,
    pub stats: SyncStats,
}

impl SyncClient {
    pub fn new(config: SyncConfig) -> Self {
        SyncClient {
            rng: Rng::seeded(config.seed),
            config,
            session: None,
            waiting: None,
            failures: 0,
            retry_at: 0,
            last_model_check: None,
            download: None,
            stats: SyncStats::default(),
        }
    }

    pub fn session(&self) -> Option<&str> {
        self.session.as_deref()
    }

    pub fn backoff_ms(&self) -> u64 {
        self.retry_at
    }

    /// Backoff before attempt `failures + 1`: base·2^(failures−1) capped,
    /// then jittered uniformly into [d/2, d].
    fn fail(&mut self, now: u64) {
        self.failures = self.failures.saturating_add(1);
        let exp = (self.failures - 1).min(30);
        let d = self
            .config
            .backoff_base_ms
            .saturating_mul(1 << exp)
            .min(self.config.backoff_cap_ms);
        let jittered = d / 2 + self.rng.below(d / 2 + 1);
        self.retry_at = now + jittered;
    }

    fn succeed(&mut self) {
        self.failures = 0;
        self.retry_at = 0;
        self.waiting = None;
    }

    fn send(&mut self, now: u64, w: Waiting, m: Message) -> Message {
        self.waiting = Some((w, now));
        self.stats.frames_sent += 1;
        m
    }

    /// Transport lost: a new session must be negotiated. Download progress
    /// and the open telemetry batch are kept.
    pub fn on_disconnect(&mut self, rt: &EdgeRuntime) {
        self.session = None;
        self.waiting = None;
        rt.set_session(None);
    }

    pub fn poll(&mut self, rt: &EdgeRuntime) -> Vec<Message> {
        let now = rt.now_ms();
        let mut out = Vec::new();
        if self.session.is_some() {
            // Alerts go upstream best-effort; they are also in telemetry.
            for a in rt.take_alert_outbox() {
                self.stats.frames_sent += 1;
                out.push(Message::Alert(a));
            }
        }
        if let Some((_, at)) = &self.waiting {
            if now.saturating_sub(*at) < self.config.response_timeout_ms {
                return out;
            }
            self.stats.timeouts += 1;
            self.waiting = None;
            self.fail(now);
        }
        if now < self.retry_at {
            return out;
        }
        if self.session.is_none() {
            let m = Message::Hello(Hello {
                node_id: rt.edge_id().to_string(),
                role: NodeRole::Edge,
            });
            out.push(self.send(now, Waiting::HelloAck, m));
            return out;
        }
        if let Some(d) = &self.download {
            let m = Message::ModelChunkReq(ModelChunkReq {
                version_id: d.manifest.version_id.clone(),
                index: d.next,
            });
            let next = d.next;
            out.push(self.send(now, Waiting::Chunk(next), m));
            return out;
        }
        let check_due = self
            .last_model_check
            .is_none_or(|t| now.saturating_sub(t) >= rt.policy().model_check_ms());
        if check_due {
            let m = Message::ModelQuery(ModelQuery {
                current_version_id: rt.model_version(),
            });
            out.push(self.send(now, Waiting::Manifest, m));
            return out;
        }
        if rt.is_idle(now) {
            match self.next_batch(rt) {
                Ok(Some(m)) => {
                    let Message::TelemetryBatch(b) = &m else { unreachable!() };
                    let w = Waiting::BatchAck(b.batch_id.clone());
                    out.push(self.send(now, w, m));
                }
                Ok(None) => {}
                Err(e) => tracing::error!(edge = %rt.edge_id(), error = %e, "cannot form telemetry batch"),
            }
        }
        out
    }

    /// The open batch again (same batch_id), or a new one over the oldest
    /// pending records, halved until its frame fits.
    fn next_batch(&mut self, rt: &EdgeRuntime) -> Result<Option<Message>, EdgeError> {
        let mut buf = rt.telemetry();
        if let Some((id, records)) = buf.open_batch() {
            return Ok(Some(batch_message(rt.edge_id(), id, records)?));
        }
        let candidates = buf.unbatched(rt.policy().batch_max).to_vec();
        let mut n = candidates.len();
        while n > 0 {
            let id = random_uuid(&mut self.rng);
            let m = batch_message(rt.edge_id(), &id, &candidates[..n])?;
            if m.payload().map(|p| p.len() <= MAX_PAYLOAD).unwrap_or(false) {
                buf.commit_batch(&id, n)
                    .map_err(|e| EdgeError::Io(buf.path().unwrap_or("telemetry.log".as_ref()).to_path_buf(), e))?;
                return Ok(Some(m));
            }
            n /= 2;
        }
        if candidates.is_empty() {
            Ok(None)
        } else {
            Err(EdgeError::Oversize)
        }
    }

    pub fn on_message(&mut self, rt: &EdgeRuntime, msg: Message) -> Vec<Message> {
        let now = rt.now_ms();
        match msg {
            Message::HelloAck(ack) => {
                if self.waiting.as_ref().is_some_and(|(w, _)| *w == Waiting::HelloAck) {
                    rt.set_session(Some(ack.session_id.clone()));
                    self.session = Some(ack.session_id);
                    self.succeed();
                }
                Vec::new()
            }
            Message::BatchAck(ack) => {
                let acked = rt.telemetry().ack(&ack.batch_id).unwrap_or_else(|e| {
                    tracing::error!(error = %e, "telemetry ack not persisted");
                    false
                });
                if acked {
                    self.stats.batches_acked += 1;
                    rt.mark_synced(now);
                }
                if self
                    .waiting
                    .as_ref()
                    .is_some_and(|(w, _)| *w == Waiting::BatchAck(ack.batch_id.clone()))
                {
                    self.succeed();
                }
                Vec::new()
            }
            Message::ModelManifest(m) => {
                if self.waiting.as_ref().is_none_or(|(w, _)| *w != Waiting::Manifest) {
                    return Vec::new();
                }
                self.succeed();
                self.last_model_check = Some(now);
                rt.mark_synced(now);
                if Some(&m.version_id) == rt.model_version().as_ref() {
                    return Vec::new();
                }
                if let Err(detail) = self.check_manifest(&m) {
                    tracing::warn!(edge = %rt.edge_id(), %detail, "ignoring manifest");
                    return Vec::new();
                }
                self.download = Some(Download {
                    data: Vec::with_capacity(m.total_bytes as usize),
                    manifest: m,
                    next: 0,
                });
                self.poll(rt)
            }
            Message::ModelChunk(c) => {
                let Some(d) = self.download.as_mut() else {
                    return Vec::new();
                };
                if c.version_id != d.manifest.version_id || c.index != d.next {
                    return Vec::new();
                }
                let remaining = d.manifest.total_bytes - d.data.len() as u64;
                let len_ok = c.bytes.len() as u64 == remaining.min(d.manifest.chunk_size as u64);
                if len_ok {
                    d.data.extend_from_slice(&c.bytes);
                    d.next += 1;
                }
                let done = d.next >= d.manifest.chunk_count;
                if !len_ok {
                    // Wrong length: ask again after a backoff.
                    self.waiting = None;
                    self.fail(now);
                    return Vec::new();
                }
                self.succeed();
                if !done {
                    return self.poll(rt);
                }
                let d = self.download.take().expect("download in progress");
                self.finish(rt, d);
                Vec::new()
            }
            Message::Error(e) => {
                self.stats.errors_received += 1;
                let Some((w, _)) = self.waiting.take() else {
                    return Vec::new();
                };
                tracing::debug!(edge = %rt.edge_id(), code = %e.code, detail = %e.detail, "peer error");
                match (w, e.code.as_str()) {
                    (Waiting::Manifest, "no_such_version") => {
                        // Nothing published yet.
                        self.succeed();
                        self.last_model_check = Some(now);
                    }
                    (Waiting::Chunk(_), "no_such_version" | "bad_index") => {
                        self.download = None;
                        self.fail(now);
                    }
                    _ => self.fail(now),
                }
                Vec::new()
            }
            Message::Query(q) => {
                let reply = match rt.query(q.obs_id.as_deref(), &q.text) {
                    Ok(a) => Message::Response(a.diagnosis),
                    Err(e) => Message::error(e.code(), e.to_string()),
                };
                self.stats.frames_sent += 1;
                vec![reply]
            }
            _ => Vec::new(),
        }
    }

    fn check_manifest(&self, m: &ModelManifest) -> Result<(), String> {
        if m.chunk_size != CHUNK_SIZE {
            return Err(format!("unexpected chunk size {}", m.chunk_size));
        }
        if m.total_bytes == 0 || m.total_bytes > self.config.max_model_bytes {
            return Err(format!("implausible model size {}", m.total_bytes));
        }
        if m.chunk_count != chunk_count(m.total_bytes) {
            return Err("chunk count does not match size".into());
        }
        Ok(())
    }

    fn finish(&mut self, rt: &EdgeRuntime, d: Download) {
        let digest = sha256_hex(&d.data);
        let result = if digest != d.manifest.sha256_hex {
            let e = EdgeError::Integrity(format!(
                "downloaded {} hashes to {digest}, manifest says {}",
                d.manifest.version_id, d.manifest.sha256_hex
            ));
            rt.record_swap_failure(&e);
            Err(e)
        } else {
            rt.swap_model(&d.data)
        };
        match result {
            Ok(_) => self.stats.swaps += 1,
            Err(EdgeError::Integrity(_)) | Err(EdgeError::Model(_)) => {
                self.stats.integrity_failures += 1
            }
            Err(_) => {}
        }
    }
}

fn batch_message(
    edge_id: &str,
    batch_id: &str,
    records: &[farmlight_core::TelemetryRecord],
) -> Result<Message, EdgeError> {
    let compressed = compress_records(records).map_err(|e| EdgeError::Encode(e.to_string()))?;
    Ok(Message::TelemetryBatch(TelemetryBatch {
        batch_id: batch_id.to_string(),
        edge_id: edge_id.to_string(),
        count: records.len() as u32,
        records: compressed,
    }))
}
