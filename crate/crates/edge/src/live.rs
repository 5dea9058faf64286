//! Live edge node: inference worker thread, TCP sync session through the
//! gateway, and the HTTP API, all sharing one runtime.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use farmlight_core::ClassCatalog;
use farmlight_net::tcp::FramedConn;
use serde::{Deserialize, Serialize};

use crate::policy::EdgePolicy;
use crate::runtime::{EdgeConfig, EdgeRuntime, WallClock};
use crate::sync::{SyncClient, SyncConfig};
use crate::telemetry::TelemetryBuffer;
use crate::EdgeError;

/// Contents of `edge.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeFileConfig {
    pub edge_id: String,
    pub gateway_addr: String,
    pub api_addr: String,
    pub data_dir: PathBuf,
    pub seed: u64,
    pub policy: EdgePolicy,
}

impl Default for EdgeFileConfig {
    fn default() -> Self {
        EdgeFileConfig {
            edge_id: "edge-01".into(),
            gateway_addr: "127.0.0.1:7701".into(),
            api_addr: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("edge-data"),
            seed: 0,
            policy: EdgePolicy::default(),
        }
    }
}

/// Open the runtime backed by `data_dir/telemetry.log` and `data_dir/model.flsm`.
pub fn open_runtime(cfg: &EdgeFileConfig, catalog: ClassCatalog) -> Result<Arc<EdgeRuntime>, EdgeError> {
    std::fs::create_dir_all(&cfg.data_dir).map_err(|e| EdgeError::Io(cfg.data_dir.clone(), e))?;
    let log = cfg.data_dir.join("telemetry.log");
    let telemetry = TelemetryBuffer::open(&log).map_err(|e| EdgeError::Io(log.clone(), e))?;
    let mut ec = EdgeConfig::new(cfg.edge_id.clone(), catalog);
    ec.policy = cfg.policy.clone();
    ec.seed = cfg.seed;
    let rt = EdgeRuntime::new(ec, Arc::new(WallClock), telemetry)?
        .with_model_file(&cfg.data_dir.join("model.flsm"))?;
    Ok(Arc::new(rt))
}

/// Drain the queue forever on a dedicated thread.
pub fn spawn_worker(rt: Arc<EdgeRuntime>) -> std::thread::JoinHandle<()> {
    std::thread::spawn(move || loop {
        match rt.process_next() {
            Ok(Some(_)) => continue,
            Ok(None) | Err(EdgeError::NotReady(_)) => std::thread::sleep(Duration::from_millis(10)),
            Err(e) => tracing::error!(error = %e, "inference failed"),
        }
    })
}

/// Keep a session to the gateway alive and run the sync state machine on it.
pub async fn sync_loop(rt: Arc<EdgeRuntime>, gateway_addr: String, config: SyncConfig) {
    let mut client = SyncClient::new(config);
    let mut reconnect_delay = Duration::from_secs(1);
    loop {
        let mut conn = match FramedConn::connect(&gateway_addr).await {
            Ok(c) => {
                reconnect_delay = Duration::from_secs(1);
                c
            }
            Err(e) => {
                tracing::warn!(addr = %gateway_addr, error = %e, "gateway unreachable");
                tokio::time::sleep(reconnect_delay).await;
                reconnect_delay = (reconnect_delay * 2).min(Duration::from_secs(60));
                continue;
            }
        };
        'session: loop {
            for m in client.poll(&rt) {
                if conn.send(&m).await.is_err() {
                    break 'session;
                }
            }
            match conn.recv(Duration::from_millis(100)).await {
                Ok(Some(Ok(m))) => {
                    for r in client.on_message(&rt, m) {
                        if conn.send(&r).await.is_err() {
                            break 'session;
                        }
                    }
                }
                Ok(Some(Err(e))) => tracing::warn!(error = %e, "malformed frame from gateway"),
                Ok(None) => {}
                Err(e) => {
                    tracing::warn!(error = %e, "gateway connection lost");
                    break 'session;
                }
            }
        }
        client.on_disconnect(&rt);
        tokio::time::sleep(reconnect_delay).await;
    }
}

pub async fn serve_api(rt: Arc<EdgeRuntime>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "edge API listening");
    axum::serve(listener, crate::api::router(rt)).await
}
