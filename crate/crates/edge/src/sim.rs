//! Whole-system simulation on a fixed-step clock: one cloud, one gateway and
//! N edges joined by seeded lossy links. Edges start on an initial model,
//! ingest bursts of synthetic observations, upload telemetry while idle, and
//! must pick up a model published mid-run.

use std::collections::BTreeSet;
use std::sync::Arc;

use farmlight_core::synthgen::{gen_observation, World};
use farmlight_core::Rng;
use farmlight_net::{CloudService, Gateway, LinkConfig, LinkStats, Message, Route, SimLink};
use serde::Serialize;

use crate::policy::EdgePolicy;
use crate::runtime::{EdgeConfig, EdgeRuntime, SimClock};
use crate::sync::{SyncClient, SyncConfig, SyncStats};
use crate::telemetry::TelemetryBuffer;
use crate::EdgeError;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub edges: usize,
    /// Frame loss on each edge's link to the gateway, both directions.
    pub loss: f64,
    /// Frame loss between gateway and cloud, both directions.
    pub backhaul_loss: f64,
    pub tick_ms: u64,
    pub policy: EdgePolicy,
    pub observations_per_edge: usize,
    pub burst: usize,
    pub burst_spacing_ms: u64,
    pub burst_gap_ms: u64,
    pub publish_at_ms: u64,
    pub max_sim_ms: u64,
    /// Convergence bound in model-check intervals after publication.
    pub convergence_intervals: f64,
    /// Minimum share of anomalous observations that must raise an alert
    /// naming their true class.
    pub alert_recall_floor: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            edges: 3,
            loss: 0.2,
            backhaul_loss: 0.0,
            tick_ms: 50,
            policy: EdgePolicy {
                batch_max: 8,
                ..EdgePolicy::default()
            },
            observations_per_edge: 80,
            burst: 16,
            burst_spacing_ms: 250,
            burst_gap_ms: 20_000,
            publish_at_ms: 30_000,
            max_sim_ms: 1_800_000,
            convergence_intervals: 10.0,
            alert_recall_floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeSummary {
    pub edge_id: String,
    pub observations: usize,
    pub anomalies: usize,
    pub alerts: usize,
    pub alerts_matching_class: usize,
    pub final_version: Option<String>,
    pub converged_at_ms: Option<u64>,
    pub intervals_to_converge: Option<f64>,
    pub batches_opened: usize,
    pub records_acked: u64,
    pub swap_failures: u64,
    pub sync: SyncStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub seed: u64,
    pub edges: Vec<EdgeSummary>,
    pub loss: f64,
    pub backhaul_loss: f64,
    pub initial_version: String,
    pub published_version: String,
    pub published_at_ms: u64,
    pub end_ms: u64,
    pub all_converged: bool,
    pub max_intervals_to_converge: Option<f64>,
    pub generated_batches: usize,
    pub stored_batches: usize,
    pub missing_batches: Vec<String>,
    pub unexpected_batches: Vec<String>,
    pub generated_records: usize,
    pub stored_records: usize,
    pub alert_recall: f64,
    pub cloud_alerts: usize,
    pub frames_sent: u64,
    pub frames_dropped: u64,
    pub gateway_rejected: u64,
    pub failures: Vec<String>,
    pub ok: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("sim setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Edge(#[from] EdgeError),
}

struct Node {
    rt: Arc<EdgeRuntime>,
    client: SyncClient,
    up: SimLink,
    down: SimLink,
    to_cloud: SimLink,
    from_cloud: SimLink,
    schedule: Vec<(u64, farmlight_core::Observation)>,
    next: usize,
    anomalies: usize,
    alerts_matching: usize,
    converged_at: Option<u64>,
}

fn add(a: &mut LinkStats, b: &LinkStats) {
    a.sent += b.sent;
    a.dropped += b.dropped;
    a.corrupted += b.corrupted;
    a.delivered += b.delivered;
}

/// Run the scenario. `initial` is served from t=0 and preloaded on every
/// edge; `update` is published at `publish_at_ms`.
pub fn run(
    config: &SimConfig,
    world: &World,
    initial: &[u8],
    update: &[u8],
) -> Result<SimSummary, SimError> {
    config.policy.validate()?;
    if ![config.loss, config.backhaul_loss].iter().all(|l| (0.0..1.0).contains(l)) {
        return Err(SimError::Setup("frame loss must be in [0, 1)".into()));
    }
    if config.tick_ms == 0 || config.edges == 0 {
        return Err(SimError::Setup("tick_ms and edges must be positive".into()));
    }
    let clock = SimClock::new(0);
    let mut cloud = CloudService::new();
    let initial_version = cloud
        .publish(initial.to_vec(), 0)
        .map_err(|e| SimError::Setup(format!("initial model: {e}")))?
        .version_id;
    let mut gateway = Gateway::new();
    let link = |loss: f64, stream: u32| SimLink::new(LinkConfig::lossy(loss), Rng::substream(config.seed, stream));

    let mut nodes = Vec::new();
    for i in 0..config.edges {
        let edge_id = format!("edge-{:02}", i + 1);
        let mut ec = EdgeConfig::new(edge_id, world.catalog.clone());
        ec.policy = config.policy.clone();
        ec.seed = config.seed ^ (0xE0 + i as u64);
        let rt = Arc::new(EdgeRuntime::new(ec, Arc::new(clock.clone()), TelemetryBuffer::in_memory())?);
        rt.swap_model(initial)?;

        let mut rng = Rng::substream(config.seed, 1000 + i as u32);
        let mut schedule = Vec::new();
        let mut t = 1_000 + rng.below(2_000);
        for n in 0..config.observations_per_edge {
            if n > 0 && n % config.burst == 0 {
                t += config.burst_gap_ms;
            }
            let class = rng.below(world.specs.len() as u64) as usize;
            schedule.push((t, gen_observation(&world.specs[class], &mut rng)));
            t += config.burst_spacing_ms;
        }
        let anomalies = schedule
            .iter()
            .filter(|(_, o)| o.label.is_some_and(|l| !world.catalog.classes()[l].is_healthy))
            .count();
        let base = 10 * i as u32;
        nodes.push(Node {
            client: SyncClient::new(SyncConfig {
                seed: config.seed ^ (0x5C + i as u64),
                ..SyncConfig::default()
            }),
            rt,
            up: link(config.loss, base + 1),
            down: link(config.loss, base + 2),
            to_cloud: link(config.backhaul_loss, base + 3),
            from_cloud: link(config.backhaul_loss, base + 4),
            schedule,
            next: 0,
            anomalies,
            alerts_matching: 0,
            converged_at: None,
        });
    }

    let mut published: Option<(String, u64)> = None;
    let mut now = 0;
    loop {
        clock.set(now);
        if published.is_none() && now >= config.publish_at_ms {
            let e = cloud
                .publish(update.to_vec(), now)
                .map_err(|e| SimError::Setup(format!("update model: {e}")))?;
            published = Some((e.version_id, now));
        }

        for (i, n) in nodes.iter_mut().enumerate() {
            let conn = i as u64;
            while n.next < n.schedule.len() && n.schedule[n.next].0 <= now {
                n.rt.ingest(n.schedule[n.next].1.clone())?;
                n.next += 1;
                // Single-cycle loop: each observation is fully handled before
                // the next one is taken.
                if let Some(p) = n.rt.process_next()? {
                    if let (Some(a), Some(label)) = (&p.alert, n.schedule[n.next - 1].1.label) {
                        if a.class_id == label {
                            n.alerts_matching += 1;
                        }
                    }
                }
            }

            for f in n.up.deliver(now) {
                match gateway.from_edge(conn, now, f) {
                    Route::ToCloud(_, b) => n.to_cloud.send(now, b),
                    Route::ToEdge(_, b) => n.down.send(now, b),
                }
            }
            for f in n.to_cloud.deliver(now) {
                for r in cloud.handle_frame(&f) {
                    n.from_cloud.send(now, r);
                }
            }
            for f in n.from_cloud.deliver(now) {
                match gateway.from_cloud(conn, now, f) {
                    Route::ToEdge(_, b) => n.down.send(now, b),
                    Route::ToCloud(_, b) => n.to_cloud.send(now, b),
                }
            }
            let mut outgoing = Vec::new();
            for f in n.down.deliver(now) {
                if let Ok(m) = Message::decode(&f) {
                    outgoing.extend(n.client.on_message(&n.rt, m));
                }
            }
            outgoing.extend(n.client.poll(&n.rt));
            for m in outgoing {
                match m.encode() {
                    Ok(b) => n.up.send(now, b),
                    Err(e) => tracing::error!(error = %e, "edge message does not encode"),
                }
            }

            if let Some((v, _)) = &published {
                if n.converged_at.is_none() && n.rt.model_version().as_ref() == Some(v) {
                    n.converged_at = Some(now);
                }
            }
        }

        let done = published.is_some()
            && nodes.iter().all(|n| {
                n.next == n.schedule.len()
                    && n.rt.queue_depth() == 0
                    && n.rt.telemetry().is_empty()
                    && n.converged_at.is_some()
            });
        if done || now >= config.max_sim_ms {
            break;
        }
        now += config.tick_ms;
    }

    let (published_version, published_at) = published.unwrap_or_default();
    let interval = config.policy.model_check_ms() as f64;
    let mut failures = Vec::new();
    let mut generated = BTreeSet::new();
    let mut generated_records = 0;
    let mut link_stats = LinkStats::default();
    let mut edges = Vec::new();
    for n in &nodes {
        let status = n.rt.status();
        let buf = n.rt.telemetry();
        for id in buf.opened_batch_ids() {
            generated.insert(format!("{}/{}", n.rt.edge_id(), id));
        }
        generated_records += n.next;
        for l in [&n.up, &n.down, &n.to_cloud, &n.from_cloud] {
            add(&mut link_stats, &l.stats);
        }
        let intervals = n
            .converged_at
            .map(|t| (t - published_at) as f64 / interval);
        match intervals {
            None => failures.push(format!("{} never reached {published_version}", n.rt.edge_id())),
            Some(k) if k > config.convergence_intervals => failures.push(format!(
                "{} took {k:.2} model-check intervals to converge",
                n.rt.edge_id()
            )),
            _ => {}
        }
        if !buf.is_empty() {
            failures.push(format!("{} still holds {} telemetry records", n.rt.edge_id(), buf.pending_len()));
        }
        edges.push(EdgeSummary {
            edge_id: n.rt.edge_id().to_string(),
            observations: n.next,
            anomalies: n.anomalies,
            alerts: status.alerts,
            alerts_matching_class: n.alerts_matching,
            final_version: status.model_version,
            converged_at_ms: n.converged_at,
            intervals_to_converge: intervals,
            batches_opened: buf.opened_batch_ids().len(),
            records_acked: buf.acked_records(),
            swap_failures: status.swap_failures,
            sync: n.client.stats.clone(),
        });
    }
    let stored: BTreeSet<String> = cloud
        .store
        .batch_ids()
        .map(|(e, b)| format!("{e}/{b}"))
        .collect();
    let missing: Vec<String> = generated.difference(&stored).cloned().collect();
    let unexpected: Vec<String> = stored.difference(&generated).cloned().collect();
    if !missing.is_empty() || !unexpected.is_empty() {
        failures.push(format!(
            "batch sets differ: {} missing, {} unexpected",
            missing.len(),
            unexpected.len()
        ));
    }
    if cloud.store.record_count() != generated_records {
        failures.push(format!(
            "cloud holds {} records, edges produced {generated_records}",
            cloud.store.record_count()
        ));
    }
    let anomalies: usize = edges.iter().map(|e| e.anomalies).sum();
    let matching: usize = edges.iter().map(|e| e.alerts_matching_class).sum();
    let alert_recall = if anomalies == 0 { 1.0 } else { matching as f64 / anomalies as f64 };
    if alert_recall < config.alert_recall_floor {
        failures.push(format!(
            "only {matching} of {anomalies} anomalies raised an alert with their class"
        ));
    }
    let max_intervals = edges
        .iter()
        .filter_map(|e| e.intervals_to_converge)
        .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));

    Ok(SimSummary {
        seed: config.seed,
        loss: config.loss,
        backhaul_loss: config.backhaul_loss,
        initial_version,
        published_version,
        published_at_ms: published_at,
        end_ms: now,
        all_converged: edges.iter().all(|e| e.converged_at_ms.is_some()),
        max_intervals_to_converge: max_intervals,
        generated_batches: generated.len(),
        stored_batches: stored.len(),
        missing_batches: missing,
        unexpected_batches: unexpected,
        generated_records,
        stored_records: cloud.store.record_count(),
        alert_recall,
        cloud_alerts: cloud.alerts.len(),
        frames_sent: link_stats.sent,
        frames_dropped: link_stats.dropped,
        gateway_rejected: gateway.sessions().map(|s| s.rejected).sum(),
        ok: failures.is_empty(),
        failures,
        edges,
    })
}
