//! Relay core of the gateway. It owns no sockets: callers hand it frames from
//! either side and it says where the bytes go. Valid frames pass through
//! byte-for-byte; malformed ones are answered with ERROR to whoever sent them.

use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;

use crate::frame::{decode_frame, DecodeError, MsgType};
use crate::message::{Hello, Message};

pub type ConnId = u64;

const LOG_CAPACITY: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Edge towards cloud.
    Up,
    /// Cloud towards edge.
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelayLogEntry {
    pub ts_ms: u64,
    pub conn: ConnId,
    pub direction: Direction,
    pub msg_type: Option<u8>,
    pub payload_len: usize,
    /// `None` when forwarded, otherwise the error code sent back.
    pub rejected: Option<&'static str>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Session {
    pub conn: ConnId,
    pub node_id: Option<String>,
    pub opened_ms: u64,
    pub last_seen_ms: u64,
    pub frames_up: u64,
    pub frames_down: u64,
    pub rejected: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Route {
    ToCloud(ConnId, Vec<u8>),
    ToEdge(ConnId, Vec<u8>),
}

#[derive(Debug, Default)]
pub struct Gateway {
    sessions: BTreeMap<ConnId, Session>,
    log: VecDeque<RelayLogEntry>,
}

fn error_frame(e: &DecodeError) -> Vec<u8> {
    Message::error(e.code(), e.to_string())
        .encode()
        .expect("error frames are small")
}

impl Gateway {
    pub fn new() -> Self {
        Gateway::default()
    }

    /// Register a new edge connection; each one gets its own upstream link.
    pub fn open(&mut self, conn: ConnId, now_ms: u64) {
        self.sessions.insert(
            conn,
            Session {
                conn,
                node_id: None,
                opened_ms: now_ms,
                last_seen_ms: now_ms,
                frames_up: 0,
                frames_down: 0,
                rejected: 0,
            },
        );
    }

    pub fn close(&mut self, conn: ConnId) -> Option<Session> {
        self.sessions.remove(&conn)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.sessions.values()
    }

    pub fn session(&self, conn: ConnId) -> Option<&Session> {
        self.sessions.get(&conn)
    }

    pub fn log(&self) -> impl Iterator<Item = &RelayLogEntry> {
        self.log.iter()
    }

    fn record(&mut self, entry: RelayLogEntry) {
        tracing::debug!(
            conn = entry.conn,
            direction = ?entry.direction,
            msg_type = ?entry.msg_type,
            payload_len = entry.payload_len,
            rejected = ?entry.rejected,
            "relay"
        );
        if self.log.len() == LOG_CAPACITY {
            self.log.pop_front();
        }
        self.log.push_back(entry);
    }

    fn relay(&mut self, conn: ConnId, now_ms: u64, dir: Direction, frame: Vec<u8>) -> Route {
        if !self.sessions.contains_key(&conn) {
            self.open(conn, now_ms);
        }
        let type_byte = frame.get(5).copied();
        let checked = decode_frame(&frame).map(|raw| {
            let hello = (raw.msg_type == MsgType::Hello)
                .then(|| Message::from_raw(&raw).ok())
                .flatten();
            (raw.payload.len(), hello)
        });
        let session = self.sessions.get_mut(&conn).expect("session opened above");
        session.last_seen_ms = now_ms;
        match checked {
            Ok((payload_len, hello)) => {
                if let Some(Message::Hello(Hello { node_id, .. })) = hello {
                    session.node_id = Some(node_id);
                }
                match dir {
                    Direction::Up => session.frames_up += 1,
                    Direction::Down => session.frames_down += 1,
                }
                self.record(RelayLogEntry {
                    ts_ms: now_ms,
                    conn,
                    direction: dir,
                    msg_type: type_byte,
                    payload_len,
                    rejected: None,
                });
                match dir {
                    Direction::Up => Route::ToCloud(conn, frame),
                    Direction::Down => Route::ToEdge(conn, frame),
                }
            }
            Err(e) => {
                session.rejected += 1;
                self.record(RelayLogEntry {
                    ts_ms: now_ms,
                    conn,
                    direction: dir,
                    msg_type: type_byte,
                    payload_len: frame.len().saturating_sub(14),
                    rejected: Some(e.code()),
                });
                self.reject(conn, dir, &e)
            }
        }
    }

    /// Answer a malformed frame (possibly one a stream reader already
    /// discarded) with ERROR to its sender.
    pub fn reject(&mut self, conn: ConnId, from: Direction, e: &DecodeError) -> Route {
        match from {
            Direction::Up => Route::ToEdge(conn, error_frame(e)),
            Direction::Down => Route::ToCloud(conn, error_frame(e)),
        }
    }

    pub fn from_edge(&mut self, conn: ConnId, now_ms: u64, frame: Vec<u8>) -> Route {
        self.relay(conn, now_ms, Direction::Up, frame)
    }

    pub fn from_cloud(&mut self, conn: ConnId, now_ms: u64, frame: Vec<u8>) -> Route {
        self.relay(conn, now_ms, Direction::Down, frame)
    }
}
