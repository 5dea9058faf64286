//! Live TCP realizations of the cloud server, the gateway relay and an edge
//! side connection. Protocol logic stays in the sans-IO cores.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::{TcpListener, TcpStream, ToSocketAddrs};

use crate::cloud::CloudService;
use crate::frame::{DecodeError, FrameReader, Read};
use crate::gateway::{ConnId, Direction, Gateway, Route};
use crate::message::{EncodeError, Message};

pub fn wall_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn error_frame(e: &DecodeError) -> Vec<u8> {
    Message::error(e.code(), e.to_string())
        .encode()
        .expect("error frames are small")
}

pub async fn serve_cloud(listener: TcpListener, cloud: Arc<Mutex<CloudService>>) -> std::io::Result<()> {
    loop {
        let (stream, peer) = listener.accept().await?;
        let cloud = cloud.clone();
        tokio::spawn(async move {
            tracing::info!(%peer, "cloud connection");
            if let Err(e) = cloud_conn(stream, cloud).await {
                tracing::warn!(%peer, error = %e, "cloud connection ended");
            }
        });
    }
}

async fn cloud_conn(mut stream: TcpStream, cloud: Arc<Mutex<CloudService>>) -> std::io::Result<()> {
    let mut reader = FrameReader::new();
    let mut buf = vec![0u8; 64 * 1024];
    loop {
        let n = stream.read(&mut buf).await?;
        if n == 0 {
            return Ok(());
        }
        reader.push(&buf[..n]);
        while let Some(item) = reader.next() {
            let replies = match item {
                Read::Frame(f) => cloud.lock().unwrap().handle_frame(&f),
                Read::Malformed(e) => vec![error_frame(&e)],
            };
            for r in replies {
                stream.write_all(&r).await?;
            }
        }
    }
}

type Writer = Arc<tokio::sync::Mutex<OwnedWriteHalf>>;

pub async fn serve_gateway(
    listener: TcpListener,
    cloud_addr: String,
    gateway: Arc<Mutex<Gateway>>,
) -> std::io::Result<()> {
    let next = AtomicU64::new(1);
    loop {
        let (edge, peer) = listener.accept().await?;
        let conn = next.fetch_add(1, Ordering::Relaxed);
        let upstream = match TcpStream::connect(&cloud_addr).await {
            Ok(s) => s,
            Err(e) => {
                tracing::error!(%peer, error = %e, "cloud unreachable; dropping edge connection");
                continue;
            }
        };
        gateway.lock().unwrap().open(conn, wall_ms());
        tracing::info!(%peer, conn, "edge session opened");
        let (edge_r, edge_w) = edge.into_split();
        let (cloud_r, cloud_w) = upstream.into_split();
        let edge_w: Writer = Arc::new(tokio::sync::Mutex::new(edge_w));
        let cloud_w: Writer = Arc::new(tokio::sync::Mutex::new(cloud_w));
        let gw = gateway.clone();
        tokio::spawn(async move {
            let up = pump(conn, Direction::Up, edge_r, gw.clone(), edge_w.clone(), cloud_w.clone());
            let down = pump(conn, Direction::Down, cloud_r, gw.clone(), edge_w.clone(), cloud_w.clone());
            // When either side goes away the session ends.
            tokio::select! {
                r = up => if let Err(e) = r { tracing::debug!(conn, error = %e, "edge side closed") },
                r = down => if let Err(e) = r { tracing::debug!(conn, error = %e, "cloud side closed") },
            }
            let _ = edge_w.lock().await.shutdown().await;
            let _ = cloud_w.lock().await.shutdown().await;
            gw.lock().unwrap().close(conn);
            tracing::info!(conn, "edge session closed");
        });
    }
}

async fn pump(
    conn: ConnId,
    dir: Direction,
    mut from: tokio::net::tcp::OwnedReadHalf,
    gateway: Arc<Mutex<Gateway>>,
    edge_w: Writer,
    cloud_w: Writer,
) -> std::io::Result<()> {
    let mut reader = FrameReader::new();
    let mut buf = vec![0u8; 64 * 1024];
    loop {
        let n = from.read(&mut buf).await?;
        if n == 0 {
            return Ok(());
        }
        reader.push(&buf[..n]);
        while let Some(item) = reader.next() {
            let route = {
                let mut g = gateway.lock().unwrap();
                match (item, dir) {
                    (Read::Frame(f), Direction::Up) => g.from_edge(conn, wall_ms(), f),
                    (Read::Frame(f), Direction::Down) => g.from_cloud(conn, wall_ms(), f),
                    (Read::Malformed(e), d) => g.reject(conn, d, &e),
                }
            };
            match route {
                Route::ToCloud(_, bytes) => cloud_w.lock().await.write_all(&bytes).await?,
                Route::ToEdge(_, bytes) => edge_w.lock().await.write_all(&bytes).await?,
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConnError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("connection closed by peer")]
    Closed,
}

/// Client end of a framed connection.
pub struct FramedConn {
    stream: TcpStream,
    reader: FrameReader,
}

impl FramedConn {
    pub async fn connect(addr: impl ToSocketAddrs) -> std::io::Result<Self> {
        Ok(FramedConn {
            stream: TcpStream::connect(addr).await?,
            reader: FrameReader::new(),
        })
    }

    pub fn from_std(stream: std::net::TcpStream) -> std::io::Result<Self> {
        stream.set_nonblocking(true)?;
        Ok(FramedConn {
            stream: TcpStream::from_std(stream)?,
            reader: FrameReader::new(),
        })
    }

    pub async fn send(&mut self, msg: &Message) -> Result<(), ConnError> {
        self.stream.write_all(&msg.encode()?).await?;
        Ok(())
    }

    /// Next decoded message or decode error, or `None` on timeout.
    pub async fn recv(
        &mut self,
        timeout: Duration,
    ) -> Result<Option<Result<Message, DecodeError>>, ConnError> {
        let deadline = tokio::time::Instant::now() + timeout;
        let mut buf = vec![0u8; 64 * 1024];
        loop {
            if let Some(item) = self.reader.next() {
                return Ok(Some(match item {
                    Read::Frame(f) => Message::decode(&f),
                    Read::Malformed(e) => Err(e),
                }));
            }
            let n = match tokio::time::timeout_at(deadline, self.stream.read(&mut buf)).await {
                Err(_) => return Ok(None),
                Ok(r) => r?,
            };
            if n == 0 {
                return Err(ConnError::Closed);
            }
            self.reader.push(&buf[..n]);
        }
    }
}
