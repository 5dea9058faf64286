//! The FLSK wire protocol that links edge nodes, the gateway and the cloud,
//! plus the gateway relay, the cloud registry and telemetry store, and
//! deterministic simulated links for testing all of it.

pub mod arbitrary;
pub mod cloud;
pub mod frame;
pub mod gateway;
pub mod message;
pub mod sim;
pub mod tcp;

pub use cloud::{chunk_count, CloudError, CloudService, Registry, RegistryEntry, TelemetryStore};
pub use frame::{decode_frame, encode_frame, DecodeError, FrameReader, MsgType, MAX_PAYLOAD};
pub use gateway::{ConnId, Direction, Gateway, Route};
pub use message::{
    compress_records, decompress_records, BatchAck, ErrorMsg, Hello, HelloAck, Message,
    ModelChunk, ModelChunkReq, ModelManifest, ModelQuery, NodeRole, Query, TelemetryBatch,
    CHUNK_SIZE,
};
pub use sim::{LinkConfig, LinkStats, SimLink};
