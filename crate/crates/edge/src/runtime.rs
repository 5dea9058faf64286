use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use farmlight_core::fusion::{build_prompt, patchify};
use farmlight_core::model::{forward, load, ModelParams, StageTag};
use farmlight_core::synthgen::random_uuid;
use farmlight_core::{
    Action, ActionTaken, ActuationCommand, Alert, ClassCatalog, CommandState, Diagnosis,
    Observation, Rng, TelemetryRecord,
};
use serde::Serialize;
use tokio::sync::broadcast;

use crate::policy::{decide, Decision, EdgePolicy};
use crate::telemetry::TelemetryBuffer;
use crate::EdgeError;

pub const QUEUE_CAPACITY: usize = 10_000;

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

pub struct WallClock;

impl Clock for WallClock {
    fn now_ms(&self) -> u64 {
        farmlight_net::tcp::wall_ms()
    }
}

/// Manually advanced clock shared by everything in a simulation.
#[derive(Clone, Default)]
pub struct SimClock(Arc<AtomicU64>);

impl SimClock {
    pub fn new(start_ms: u64) -> Self {
        SimClock(Arc::new(AtomicU64::new(start_ms)))
    }

    pub fn set(&self, ms: u64) {
        self.0.store(ms, Ordering::SeqCst);
    }

    pub fn advance(&self, ms: u64) -> u64 {
        self.0.fetch_add(ms, Ordering::SeqCst) + ms
    }
}

impl Clock for SimClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// An immutable loaded model. Inference holds an `Arc` to one snapshot for
/// its whole duration, so a swap never mixes versions inside a forward pass.
#[derive(Debug)]
pub struct ModelSnapshot {
    pub params: ModelParams,
    pub version_id: String,
    pub stage: StageTag,
}

#[derive(Debug, Clone)]
pub struct EdgeConfig {
    pub edge_id: String,
    pub policy: EdgePolicy,
    pub catalog: ClassCatalog,
    pub queue_capacity: usize,
    /// Seeds alert and command ids.
    pub seed: u64,
}

impl EdgeConfig {
    pub fn new(edge_id: impl Into<String>, catalog: ClassCatalog) -> Self {
        EdgeConfig {
            edge_id: edge_id.into(),
            policy: EdgePolicy::default(),
            catalog,
            queue_capacity: QUEUE_CAPACITY,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEntry {
    pub ts_ms: u64,
    pub command_id: String,
    pub from: CommandState,
    pub to: CommandState,
    pub actor: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Processed {
    pub diagnosis: Diagnosis,
    pub alert: Option<Alert>,
    pub command: Option<ActuationCommand>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryAnswer {
    pub obs_id: String,
    pub question: String,
    /// The sensor prompt the model was conditioned on.
    pub prompt: String,
    pub class_name: String,
    pub answer: String,
    pub diagnosis: Diagnosis,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeStatus {
    pub edge_id: String,
    pub model_version: Option<String>,
    pub model_stage: Option<StageTag>,
    pub queue_depth: usize,
    pub processed: u64,
    pub telemetry_pending: usize,
    pub alerts: usize,
    pub pending_commands: usize,
    pub session: Option<String>,
    pub last_sync_ms: Option<u64>,
    pub swap_failures: u64,
    pub last_error: Option<String>,
    pub now_ms: u64,
}

#[derive(Default)]
struct SyncState {
    session: Option<String>,
    last_sync_ms: Option<u64>,
    swap_failures: u64,
    last_error: Option<String>,
}

struct State {
    observations: HashMap<String, Observation>,
    order: Vec<String>,
    diagnoses: HashMap<String, Diagnosis>,
    alerts: Vec<Alert>,
    alert_outbox: Vec<Alert>,
    commands: Vec<ActuationCommand>,
    audit: Vec<AuditEntry>,
    rng: Rng,
    seq: u64,
    processed: u64,
    last_activity_ms: u64,
}

pub struct EdgeRuntime {
    config: EdgeConfig,
    clock: Arc<dyn Clock>,
    model: RwLock<Option<Arc<ModelSnapshot>>>,
    model_path: Option<PathBuf>,
    queue: Mutex<VecDeque<Observation>>,
    state: Mutex<State>,
    telemetry: Mutex<TelemetryBuffer>,
    sync: Mutex<SyncState>,
    alerts_tx: broadcast::Sender<Alert>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

/// Run the model on one observation with a fixed snapshot.
pub fn diagnose_with(
    snapshot: &ModelSnapshot,
    catalog: &ClassCatalog,
    obs: &Observation,
) -> Result<Diagnosis, EdgeError> {
    let patches = patchify(&obs.image)?;
    let prompt = build_prompt(&obs.sensors);
    let trace = forward(&snapshot.params, &patches, &prompt.features)?;
    let d = Diagnosis::from_weights(
        obs.obs_id.clone(),
        &trace.p_resp,
        String::new(),
        snapshot.version_id.clone(),
    )?;
    Ok(Diagnosis {
        recommendation: catalog.recommendation(d.predicted),
        ..d
    })
}

impl EdgeRuntime {
    pub fn new(
        config: EdgeConfig,
        clock: Arc<dyn Clock>,
        telemetry: TelemetryBuffer,
    ) -> Result<Self, EdgeError> {
        config.policy.validate()?;
        let now = clock.now_ms();
        let (alerts_tx, _) = broadcast::channel(1024);
        Ok(EdgeRuntime {
            state: Mutex::new(State {
                observations: HashMap::new(),
                order: Vec::new(),
                diagnoses: HashMap::new(),
                alerts: Vec::new(),
                alert_outbox: Vec::new(),
                commands: Vec::new(),
                audit: Vec::new(),
                rng: Rng::seeded(config.seed),
                seq: 0,
                processed: 0,
                last_activity_ms: now,
            }),
            config,
            clock,
            model: RwLock::new(None),
            model_path: None,
            queue: Mutex::new(VecDeque::new()),
            telemetry: Mutex::new(telemetry),
            sync: Mutex::new(SyncState::default()),
            alerts_tx,
        })
    }

    /// Persist every successfully swapped model to `path` and load it now if
    /// it exists.
    pub fn with_model_file(mut self, path: &Path) -> Result<Self, EdgeError> {
        if path.exists() {
            let bytes = std::fs::read(path).map_err(|e| EdgeError::Io(path.to_path_buf(), e))?;
            self.install(&bytes)?;
        }
        self.model_path = Some(path.to_path_buf());
        Ok(self)
    }

    pub fn config(&self) -> &EdgeConfig {
        &self.config
    }

    pub fn edge_id(&self) -> &str {
        &self.config.edge_id
    }

    pub fn policy(&self) -> &EdgePolicy {
        &self.config.policy
    }

    pub fn catalog(&self) -> &ClassCatalog {
        &self.config.catalog
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn snapshot(&self) -> Option<Arc<ModelSnapshot>> {
        self.model.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn model_version(&self) -> Option<String> {
        self.snapshot().map(|s| s.version_id.clone())
    }

    fn install(&self, bytes: &[u8]) -> Result<Arc<ModelSnapshot>, EdgeError> {
        let loaded = load(bytes)?;
        if loaded.meta.catalog_digest != self.config.catalog.digest_hex() {
            return Err(EdgeError::CatalogMismatch(loaded.meta.version_id));
        }
        let snap = Arc::new(ModelSnapshot {
            params: loaded.params,
            version_id: loaded.meta.version_id,
            stage: loaded.meta.stage,
        });
        *self.model.write().unwrap_or_else(|p| p.into_inner()) = Some(snap.clone());
        Ok(snap)
    }

    /// Verify and atomically install a new artifact. On any failure the
    /// current model keeps serving.
    pub fn swap_model(&self, bytes: &[u8]) -> Result<String, EdgeError> {
        let result = self.install(bytes).and_then(|snap| {
            if let Some(path) = &self.model_path {
                let tmp = path.with_extension("flsm.tmp");
                std::fs::write(&tmp, bytes)
                    .and_then(|_| std::fs::rename(&tmp, path))
                    .map_err(|e| EdgeError::Io(path.clone(), e))?;
            }
            Ok(snap.version_id.clone())
        });
        match &result {
            Ok(v) => tracing::info!(edge = %self.config.edge_id, version = %v, "model swapped"),
            Err(e) => self.record_swap_failure(e),
        }
        result
    }

    pub fn record_swap_failure(&self, e: &EdgeError) {
        tracing::error!(edge = %self.config.edge_id, error = %e, "model swap aborted");
        let mut s = lock(&self.sync);
        s.swap_failures += 1;
        s.last_error = Some(e.to_string());
    }

    pub fn ingest(&self, obs: Observation) -> Result<usize, EdgeError> {
        let mut state = lock(&self.state);
        if state.observations.contains_key(&obs.obs_id) {
            return Err(EdgeError::DuplicateObservation(obs.obs_id));
        }
        let mut q = lock(&self.queue);
        if q.len() >= self.config.queue_capacity {
            return Err(EdgeError::Backpressure {
                capacity: self.config.queue_capacity,
            });
        }
        state.order.push(obs.obs_id.clone());
        state.observations.insert(obs.obs_id.clone(), obs.clone());
        state.last_activity_ms = self.clock.now_ms();
        q.push_back(obs);
        Ok(q.len())
    }

    pub fn queue_depth(&self) -> usize {
        lock(&self.queue).len()
    }

    pub fn diagnose(&self, obs: &Observation) -> Result<Diagnosis, EdgeError> {
        let snap = self.snapshot().ok_or(EdgeError::NotReady("no model loaded"))?;
        diagnose_with(&snap, &self.config.catalog, obs)
    }

    /// Take the oldest queued observation through diagnose, decide and the
    /// telemetry buffer. `Ok(None)` when the queue is empty. Without a model
    /// the observation stays queued.
    pub fn process_next(&self) -> Result<Option<Processed>, EdgeError> {
        let snap = self.snapshot().ok_or(EdgeError::NotReady("no model loaded"))?;
        let Some(obs) = lock(&self.queue).pop_front() else {
            return Ok(None);
        };
        let diagnosis = diagnose_with(&snap, &self.config.catalog, &obs)?;
        let now = self.clock.now_ms();
        let decision = decide(&diagnosis, &self.config.catalog, &self.config.policy);

        let mut state = lock(&self.state);
        let (alert, command) = match decision {
            Decision::None => (None, None),
            Decision::Alert | Decision::AlertAndCommand(_) => {
                let class = self.config.catalog.get(diagnosis.predicted).expect("decided class exists");
                let alert = Alert {
                    alert_id: random_uuid(&mut state.rng),
                    obs_id: obs.obs_id.clone(),
                    sensor_id: obs.sensors.sensor_id.clone(),
                    location: obs.location,
                    class_id: class.class_id,
                    class_name: class.name.clone(),
                    confidence: diagnosis.confidence,
                    recommendation: diagnosis.recommendation.clone(),
                    urgency: class.urgency,
                    created_ms: now as i64,
                    acked: false,
                    image_ref: format!("/v1/observations/{}", obs.obs_id),
                };
                let command = match decision {
                    Decision::AlertAndCommand(action) => {
                        let mut c = ActuationCommand {
                            command_id: random_uuid(&mut state.rng),
                            alert_id: alert.alert_id.clone(),
                            action,
                            target_sensor_id: obs.sensors.sensor_id.clone(),
                            requires_approval: !self.config.policy.auto_actuate,
                            state: CommandState::Pending,
                        };
                        if !c.requires_approval {
                            for to in [CommandState::Approved, CommandState::Executed] {
                                state.audit.push(AuditEntry {
                                    ts_ms: now,
                                    command_id: c.command_id.clone(),
                                    from: c.state,
                                    to,
                                    actor: "auto",
                                });
                                c.transition(to).expect("declared transition");
                            }
                        }
                        state.commands.push(c.clone());
                        Some(c)
                    }
                    _ => None,
                };
                state.alerts.push(alert.clone());
                state.alert_outbox.push(alert.clone());
                (Some(alert), command)
            }
        };
        // No receivers is fine: the feed is best-effort.
        if let Some(a) = &alert {
            let _ = self.alerts_tx.send(a.clone());
        }

        let seq = state.seq;
        state.seq += 1;
        state.processed += 1;
        state.last_activity_ms = now;
        state.diagnoses.insert(obs.obs_id.clone(), diagnosis.clone());
        drop(state);

        let record = TelemetryRecord {
            edge_id: self.config.edge_id.clone(),
            seq,
            observation: obs,
            diagnosis: diagnosis.clone(),
            action: ActionTaken {
                alert_id: alert.as_ref().map(|a| a.alert_id.clone()),
                command_id: command.as_ref().map(|c| c.command_id.clone()),
                action: command.as_ref().map(|c| c.action).unwrap_or(Action::None),
            },
        };
        lock(&self.telemetry)
            .append(record)
            .map_err(|e| EdgeError::Io(PathBuf::from("telemetry.log"), e))?;

        Ok(Some(Processed {
            diagnosis,
            alert,
            command,
        }))
    }

    /// Drain the whole queue; stops at the first error.
    pub fn process_all(&self) -> Result<Vec<Processed>, EdgeError> {
        let mut out = Vec::new();
        while let Some(p) = self.process_next()? {
            out.push(p);
        }
        Ok(out)
    }

    pub fn is_idle(&self, now_ms: u64) -> bool {
        let last = lock(&self.state).last_activity_ms;
        lock(&self.queue).is_empty() && now_ms.saturating_sub(last) >= self.config.policy.idle_ms()
    }

    pub fn subscribe_alerts(&self) -> broadcast::Receiver<Alert> {
        self.alerts_tx.subscribe()
    }

    pub fn alerts_since(&self, since_ms: i64) -> Vec<Alert> {
        lock(&self.state)
            .alerts
            .iter()
            .filter(|a| a.created_ms >= since_ms)
            .cloned()
            .collect()
    }

    pub fn ack_alert(&self, alert_id: &str) -> Result<Alert, EdgeError> {
        let mut state = lock(&self.state);
        let a = state
            .alerts
            .iter_mut()
            .find(|a| a.alert_id == alert_id)
            .ok_or_else(|| EdgeError::UnknownAlert(alert_id.to_string()))?;
        a.acked = true;
        Ok(a.clone())
    }

    pub(crate) fn take_alert_outbox(&self) -> Vec<Alert> {
        std::mem::take(&mut lock(&self.state).alert_outbox)
    }

    pub fn observation(&self, obs_id: &str) -> Option<(Observation, Option<Diagnosis>)> {
        let state = lock(&self.state);
        let obs = state.observations.get(obs_id)?.clone();
        Some((obs, state.diagnoses.get(obs_id).cloned()))
    }

    pub fn latest_observation_id(&self) -> Option<String> {
        lock(&self.state).order.last().cloned()
    }

    /// Diagnose the referenced observation, or the latest one, and phrase
    /// the result as an answer to `text`.
    pub fn query(&self, obs_id: Option<&str>, text: &str) -> Result<QueryAnswer, EdgeError> {
        let obs = {
            let state = lock(&self.state);
            let id = match obs_id {
                Some(id) => id.to_string(),
                None => state
                    .order
                    .last()
                    .cloned()
                    .ok_or(EdgeError::NotReady("no observations ingested"))?,
            };
            state
                .observations
                .get(&id)
                .cloned()
                .ok_or(EdgeError::UnknownObservation(id))?
        };
        let diagnosis = self.diagnose(&obs)?;
        let class = self
            .config
            .catalog
            .get(diagnosis.predicted)
            .expect("predicted class exists");
        let answer = format!(
            "Observation {}: {} (confidence {:.2}). {}",
            obs.obs_id, class.name, diagnosis.confidence, diagnosis.recommendation
        );
        Ok(QueryAnswer {
            obs_id: obs.obs_id.clone(),
            question: text.to_string(),
            prompt: build_prompt(&obs.sensors).text,
            class_name: class.name.clone(),
            answer,
            diagnosis,
        })
    }

    pub fn commands(&self) -> Vec<ActuationCommand> {
        lock(&self.state).commands.clone()
    }

    pub fn audit(&self) -> Vec<AuditEntry> {
        lock(&self.state).audit.clone()
    }

    /// Operator approval: pending→approved, then executed at once since
    /// actuators are simulated.
    pub fn approve(&self, command_id: &str) -> Result<ActuationCommand, EdgeError> {
        self.operate(command_id, &[CommandState::Approved, CommandState::Executed])
    }

    pub fn reject(&self, command_id: &str) -> Result<ActuationCommand, EdgeError> {
        self.operate(command_id, &[CommandState::Rejected])
    }

    fn operate(&self, command_id: &str, steps: &[CommandState]) -> Result<ActuationCommand, EdgeError> {
        let now = self.clock.now_ms();
        let mut state = lock(&self.state);
        let idx = state
            .commands
            .iter()
            .position(|c| c.command_id == command_id)
            .ok_or_else(|| EdgeError::UnknownCommand(command_id.to_string()))?;
        if !state.commands[idx].state.can_transition(steps[0]) {
            return Err(EdgeError::InvalidTransition {
                command_id: command_id.to_string(),
                from: state.commands[idx].state,
                to: steps[0],
            });
        }
        for &to in steps {
            let from = state.commands[idx].state;
            state.commands[idx].transition(to).expect("checked above");
            state.audit.push(AuditEntry {
                ts_ms: now,
                command_id: command_id.to_string(),
                from,
                to,
                actor: "operator",
            });
        }
        Ok(state.commands[idx].clone())
    }

    pub fn telemetry(&self) -> MutexGuard<'_, TelemetryBuffer> {
        lock(&self.telemetry)
    }

    pub(crate) fn set_session(&self, session: Option<String>) {
        lock(&self.sync).session = session;
    }

    pub(crate) fn mark_synced(&self, now_ms: u64) {
        lock(&self.sync).last_sync_ms = Some(now_ms);
    }

    pub fn status(&self) -> EdgeStatus {
        let snap = self.snapshot();
        let (processed, alerts, pending_commands) = {
            let s = lock(&self.state);
            (
                s.processed,
                s.alerts.len(),
                s.commands
                    .iter()
                    .filter(|c| c.state == CommandState::Pending)
                    .count(),
            )
        };
        let sync = lock(&self.sync);
        EdgeStatus {
            edge_id: self.config.edge_id.clone(),
            model_version: snap.as_ref().map(|s| s.version_id.clone()),
            model_stage: snap.as_ref().map(|s| s.stage),
            queue_depth: self.queue_depth(),
            processed,
            telemetry_pending: self.telemetry().pending_len(),
            alerts,
            pending_commands,
            session: sync.session.clone(),
            last_sync_ms: sync.last_sync_ms,
            swap_failures: sync.swap_failures,
            last_error: sync.last_error.clone(),
            now_ms: self.clock.now_ms(),
        }
    }
}
