//! Typed payloads. Every payload is canonical JSON except TELEMETRY_BATCH and
//! MODEL_CHUNK, which carry `u32 BE header_len | canonical JSON header | raw
//! bytes` so the compressed records and chunk bytes travel unencoded.

use std::io::{Read as _, Write as _};

use farmlight_core::domain::{from_json_slice, to_canonical_vec};
use farmlight_core::{Alert, Diagnosis, TelemetryRecord};
use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{decode_frame, decode_prefix, encode_frame, DecodeError, MsgType, RawFrame};

pub const CHUNK_SIZE: u32 = 65_536;
/// Upper bound on a decompressed telemetry batch.
pub const MAX_RECORDS_BYTES: u64 = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Edge,
    Gateway,
    Cloud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub node_id: String,
    pub role: NodeRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloAck {
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryBatch {
    pub batch_id: String,
    pub edge_id: String,
    pub count: u32,
    /// DEFLATE-compressed canonical JSON array of records.
    pub records: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct BatchHeader {
    batch_id: String,
    count: u32,
    edge_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchAck {
    pub batch_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelQuery {
    /// None when the edge has no model yet.
    pub current_version_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub version_id: String,
    pub total_bytes: u64,
    pub chunk_size: u32,
    pub chunk_count: u32,
    pub sha256_hex: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelChunkReq {
    pub version_id: String,
    pub index: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelChunk {
    pub version_id: String,
    pub index: u32,
    pub bytes: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct ChunkHeader {
    index: u32,
    version_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub text: String,
    #[serde(default)]
    pub obs_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMsg {
    pub code: String,
    pub detail: String,
}

impl ErrorMsg {
    pub fn new(code: impl Into<String>, detail: impl Into<String>) -> Self {
        ErrorMsg {
            code: code.into(),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello(Hello),
    HelloAck(HelloAck),
    TelemetryBatch(TelemetryBatch),
    BatchAck(BatchAck),
    ModelQuery(ModelQuery),
    ModelManifest(ModelManifest),
    ModelChunkReq(ModelChunkReq),
    ModelChunk(ModelChunk),
    Alert(Alert),
    Query(Query),
    Response(Diagnosis),
    Error(ErrorMsg),
}

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("payload of {0} bytes exceeds the frame limit")]
    Oversize(usize),
    #[error("payload does not serialize: {0}")]
    Json(String),
}

fn json<T: Serialize>(v: &T) -> Result<Vec<u8>, EncodeError> {
    to_canonical_vec(v).map_err(|e| EncodeError::Json(e.to_string()))
}

fn with_blob<T: Serialize>(header: &T, blob: &[u8]) -> Result<Vec<u8>, EncodeError> {
    let h = json(header)?;
    let mut out = Vec::with_capacity(4 + h.len() + blob.len());
    out.extend_from_slice(&(h.len() as u32).to_be_bytes());
    out.extend_from_slice(&h);
    out.extend_from_slice(blob);
    Ok(out)
}

fn bad(msg_type: MsgType, detail: impl std::fmt::Display) -> DecodeError {
    DecodeError::BadPayloadJson {
        msg_type,
        detail: detail.to_string(),
    }
}

fn parse<T: DeserializeOwned>(msg_type: MsgType, payload: &[u8]) -> Result<T, DecodeError> {
    from_json_slice(payload).map_err(|e| bad(msg_type, e))
}

fn split_blob<T: DeserializeOwned>(
    msg_type: MsgType,
    payload: &[u8],
) -> Result<(T, Vec<u8>), DecodeError> {
    if payload.len() < 4 {
        return Err(bad(msg_type, "missing header length"));
    }
    let n = u32::from_be_bytes(payload[..4].try_into().unwrap()) as usize;
    if n > payload.len() - 4 {
        return Err(bad(msg_type, format!("header length {n} exceeds payload")));
    }
    let header = parse(msg_type, &payload[4..4 + n])?;
    Ok((header, payload[4 + n..].to_vec()))
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Hello(_) => MsgType::Hello,
            Message::HelloAck(_) => MsgType::HelloAck,
            Message::TelemetryBatch(_) => MsgType::TelemetryBatch,
            Message::BatchAck(_) => MsgType::BatchAck,
            Message::ModelQuery(_) => MsgType::ModelQuery,
            Message::ModelManifest(_) => MsgType::ModelManifest,
            Message::ModelChunkReq(_) => MsgType::ModelChunkReq,
            Message::ModelChunk(_) => MsgType::ModelChunk,
            Message::Alert(_) => MsgType::Alert,
            Message::Query(_) => MsgType::Query,
            Message::Response(_) => MsgType::Response,
            Message::Error(_) => MsgType::Error,
        }
    }

    pub fn error(code: impl Into<String>, detail: impl Into<String>) -> Message {
        Message::Error(ErrorMsg::new(code, detail))
    }

    pub fn payload(&self) -> Result<Vec<u8>, EncodeError> {
        match self {
            Message::Hello(m) => json(m),
            Message::HelloAck(m) => json(m),
            Message::TelemetryBatch(m) => with_blob(
                &BatchHeader {
                    batch_id: m.batch_id.clone(),
                    count: m.count,
                    edge_id: m.edge_id.clone(),
                },
                &m.records,
            ),
            Message::BatchAck(m) => json(m),
            Message::ModelQuery(m) => json(m),
            Message::ModelManifest(m) => json(m),
            Message::ModelChunkReq(m) => json(m),
            Message::ModelChunk(m) => with_blob(
                &ChunkHeader {
                    index: m.index,
                    version_id: m.version_id.clone(),
                },
                &m.bytes,
            ),
            Message::Alert(m) => json(m),
            Message::Query(m) => json(m),
            Message::Response(m) => json(m),
            Message::Error(m) => json(m),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        let payload = self.payload()?;
        encode_frame(self.msg_type() as u8, &payload).map_err(|e| EncodeError::Oversize(e.0))
    }

    pub fn from_raw(frame: &RawFrame<'_>) -> Result<Message, DecodeError> {
        let t = frame.msg_type;
        let p = frame.payload;
        Ok(match t {
            MsgType::Hello => Message::Hello(parse(t, p)?),
            MsgType::HelloAck => Message::HelloAck(parse(t, p)?),
            MsgType::TelemetryBatch => {
                let (h, records): (BatchHeader, _) = split_blob(t, p)?;
                Message::TelemetryBatch(TelemetryBatch {
                    batch_id: h.batch_id,
                    edge_id: h.edge_id,
                    count: h.count,
                    records,
                })
            }
            MsgType::BatchAck => Message::BatchAck(parse(t, p)?),
            MsgType::ModelQuery => Message::ModelQuery(parse(t, p)?),
            MsgType::ModelManifest => Message::ModelManifest(parse(t, p)?),
            MsgType::ModelChunkReq => Message::ModelChunkReq(parse(t, p)?),
            MsgType::ModelChunk => {
                let (h, bytes): (ChunkHeader, _) = split_blob(t, p)?;
                Message::ModelChunk(ModelChunk {
                    version_id: h.version_id,
                    index: h.index,
                    bytes,
                })
            }
            MsgType::Alert => Message::Alert(parse(t, p)?),
            MsgType::Query => Message::Query(parse(t, p)?),
            MsgType::Response => Message::Response(parse(t, p)?),
            MsgType::Error => Message::Error(parse(t, p)?),
        })
    }

    /// Decode exactly one frame.
    pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
        Message::from_raw(&decode_frame(bytes)?)
    }

    /// Decode the frame at the start of `bytes` and report its length.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Message, usize), DecodeError> {
        let (raw, used) = decode_prefix(bytes)?;
        Ok((Message::from_raw(&raw)?, used))
    }
}

pub fn compress_records(records: &[TelemetryRecord]) -> Result<Vec<u8>, EncodeError> {
    let body = json(&records)?;
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::default());
    enc.write_all(&body).expect("writing to a Vec cannot fail");
    Ok(enc.finish().expect("writing to a Vec cannot fail"))
}

#[derive(Debug, Error)]
pub enum RecordsError {
    #[error("records do not inflate: {0}")]
    Inflate(String),
    #[error("decompressed records exceed {MAX_RECORDS_BYTES} bytes")]
    TooLarge,
    #[error("records are not valid JSON: {0}")]
    Json(String),
}

pub fn decompress_records(bytes: &[u8]) -> Result<Vec<TelemetryRecord>, RecordsError> {
    let mut out = Vec::new();
    DeflateDecoder::new(bytes)
        .take(MAX_RECORDS_BYTES + 1)
        .read_to_end(&mut out)
        .map_err(|e| RecordsError::Inflate(e.to_string()))?;
    if out.len() as u64 > MAX_RECORDS_BYTES {
        return Err(RecordsError::TooLarge);
    }
    from_json_slice(&out).map_err(|e| RecordsError::Json(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hello_ack_exact_bytes() {
        let m = Message::HelloAck(HelloAck {
            session_id: "s1".into(),
        });
        let f = m.encode().unwrap();
        assert_eq!(&f[..10], &[0x46, 0x4C, 0x53, 0x4B, 0x01, 0x02, 0, 0, 0, 0x13]);
        assert_eq!(&f[10..29], br#"{"session_id":"s1"}"#);
        assert_eq!(Message::decode(&f).unwrap(), m);
    }

    #[test]
    fn json_payloads_are_canonical() {
        let m = Message::ModelManifest(ModelManifest {
            version_id: "v".into(),
            total_bytes: 3,
            chunk_size: CHUNK_SIZE,
            chunk_count: 1,
            sha256_hex: "ab".into(),
        });
        let p = m.payload().unwrap();
        assert_eq!(
            std::str::from_utf8(&p).unwrap(),
            r#"{"chunk_count":1,"chunk_size":65536,"sha256_hex":"ab","total_bytes":3,"version_id":"v"}"#
        );
    }

    #[test]
    fn chunk_carries_raw_bytes() {
        let m = Message::ModelChunk(ModelChunk {
            version_id: "v1".into(),
            index: 2,
            bytes: vec![0, 255, 7],
        });
        let f = m.encode().unwrap();
        assert_eq!(&f[f.len() - 7..f.len() - 4], &[0, 255, 7]);
        assert_eq!(Message::decode(&f).unwrap(), m);
    }

    #[test]
    fn bad_json_is_reported_with_type() {
        let f = encode_frame(MsgType::BatchAck as u8, b"{\"nope\":1}").unwrap();
        assert!(matches!(
            Message::decode(&f),
            Err(DecodeError::BadPayloadJson {
                msg_type: MsgType::BatchAck,
                ..
            })
        ));
        let f = encode_frame(MsgType::ModelChunk as u8, &[0, 0, 0, 9, b'{']).unwrap();
        assert!(matches!(
            Message::decode(&f),
            Err(DecodeError::BadPayloadJson { .. })
        ));
    }

    #[test]
    fn records_round_trip_and_reject_garbage() {
        let bytes = compress_records(&[]).unwrap();
        assert!(decompress_records(&bytes).unwrap().is_empty());
        assert!(decompress_records(b"\xff\xff\xff").is_err());
    }
}
