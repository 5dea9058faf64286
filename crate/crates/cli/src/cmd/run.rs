//! Live nodes on real sockets. Each runs until Ctrl-C.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use farmlight_core::synthgen::default_catalog;
use farmlight_edge::live::{open_runtime, serve_api, spawn_worker, sync_loop, EdgeFileConfig};
use farmlight_edge::SyncConfig;
use farmlight_net::tcp::{serve_cloud, serve_gateway, wall_ms};
use farmlight_net::{CloudError, CloudService, Gateway};
use tokio::net::TcpListener;

use crate::config::check_addr;
use crate::error::CliError;

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::io("tokio runtime"))
}

async fn until_ctrl_c<F>(serve: F) -> Result<(), CliError>
where
    F: std::future::Future<Output = std::io::Result<()>>,
{
    tokio::select! {
        r = serve => r.map_err(CliError::io("listener")),
        _ = tokio::signal::ctrl_c() => {
            tracing::info!("shutting down");
            Ok(())
        }
    }
}

async fn bind(addr: &str) -> Result<TcpListener, CliError> {
    check_addr(addr)?;
    TcpListener::bind(addr).await.map_err(CliError::io(addr))
}

pub fn cloud(listen: &str, dir: &Path, publish: &[PathBuf]) -> Result<(), CliError> {
    let mut svc = CloudService::open(dir)?;
    for path in publish {
        let bytes = std::fs::read(path).map_err(CliError::io(path))?;
        match svc.publish(bytes, wall_ms()) {
            Ok(e) => tracing::info!(version = %e.version_id, path = %path.display(), "published"),
            Err(CloudError::DuplicateVersion(v)) => tracing::info!(version = %v, "already published"),
            Err(e) => return Err(e.into()),
        }
    }
    let svc = Arc::new(Mutex::new(svc));
    runtime()?.block_on(async {
        let l = bind(listen).await?;
        tracing::info!(addr = %listen, "cloud listening");
        until_ctrl_c(serve_cloud(l, svc)).await
    })
}

pub fn gateway(listen: &str, cloud_addr: &str) -> Result<(), CliError> {
    check_addr(cloud_addr)?;
    let gw = Arc::new(Mutex::new(Gateway::new()));
    runtime()?.block_on(async {
        let l = bind(listen).await?;
        tracing::info!(addr = %listen, cloud = %cloud_addr, "gateway listening");
        until_ctrl_c(serve_gateway(l, cloud_addr.to_string(), gw)).await
    })
}

pub fn edge(cfg: &EdgeFileConfig, model: Option<&Path>) -> Result<(), CliError> {
    check_addr(&cfg.gateway_addr)?;
    let api: SocketAddr = cfg
        .api_addr
        .parse()
        .map_err(|_| CliError::Config(format!("api_addr {:?} is not ip:port", cfg.api_addr)))?;
    let rt = open_runtime(cfg, default_catalog())?;
    if let Some(path) = model {
        let bytes = std::fs::read(path).map_err(CliError::io(path))?;
        let v = rt.swap_model(&bytes)?;
        tracing::info!(version = %v, "model loaded");
    }
    spawn_worker(rt.clone());
    let sync = SyncConfig {
        seed: cfg.seed,
        ..SyncConfig::default()
    };
    runtime()?.block_on(async {
        tokio::spawn(sync_loop(rt.clone(), cfg.gateway_addr.clone(), sync));
        until_ctrl_c(serve_api(rt, api)).await
    })
}
