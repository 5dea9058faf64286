//! Frame layout:
//!
//! ```text
//! "FLSK" | version u8 | msg_type u8 | payload_len u32 BE | payload | crc u32 BE
//! ```
//!
//! The CRC-32 (IEEE) covers the msg_type byte followed by the payload.

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"FLSK";
pub const VERSION: u8 = 0x01;
pub const MAX_PAYLOAD: usize = 1 << 20;
pub const HEADER_LEN: usize = 10;
pub const TRAILER_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MsgType {
    Hello = 0x01,
    HelloAck = 0x02,
    TelemetryBatch = 0x03,
    BatchAck = 0x04,
    ModelQuery = 0x05,
    ModelManifest = 0x06,
    ModelChunkReq = 0x07,
    ModelChunk = 0x08,
    Alert = 0x09,
    Query = 0x0A,
    Response = 0x0B,
    Error = 0x0C,
}

impl MsgType {
    pub const ALL: [MsgType; 12] = [
        MsgType::Hello,
        MsgType::HelloAck,
        MsgType::TelemetryBatch,
        MsgType::BatchAck,
        MsgType::ModelQuery,
        MsgType::ModelManifest,
        MsgType::ModelChunkReq,
        MsgType::ModelChunk,
        MsgType::Alert,
        MsgType::Query,
        MsgType::Response,
        MsgType::Error,
    ];

    pub fn from_byte(b: u8) -> Option<MsgType> {
        MsgType::ALL.get((b as usize).wrapping_sub(1)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgType::Hello => "HELLO",
            MsgType::HelloAck => "HELLO_ACK",
            MsgType::TelemetryBatch => "TELEMETRY_BATCH",
            MsgType::BatchAck => "BATCH_ACK",
            MsgType::ModelQuery => "MODEL_QUERY",
            MsgType::ModelManifest => "MODEL_MANIFEST",
            MsgType::ModelChunkReq => "MODEL_CHUNK_REQ",
            MsgType::ModelChunk => "MODEL_CHUNK",
            MsgType::Alert => "ALERT",
            MsgType::Query => "QUERY",
            MsgType::Response => "RESPONSE",
            MsgType::Error => "ERROR",
        }
    }
}

impl std::fmt::Display for MsgType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("bad magic {0:02x?}")]
    BadMagic(Vec<u8>),
    #[error("unsupported protocol version {0:#04x}")]
    BadVersion(u8),
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("payload length {0} exceeds the {MAX_PAYLOAD}-byte limit")]
    LengthOverflow(u32),
    #[error("crc mismatch: frame says {expected:#010x}, computed {actual:#010x}")]
    CrcMismatch { expected: u32, actual: u32 },
    #[error("truncated frame: need {needed} bytes, have {got}")]
    Truncated { needed: usize, got: usize },
    #[error("bad {msg_type} payload: {detail}")]
    BadPayloadJson { msg_type: MsgType, detail: String },
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
}

impl DecodeError {
    /// Short code used in ERROR replies.
    pub fn code(&self) -> &'static str {
        match self {
            DecodeError::BadMagic(_) => "bad_magic",
            DecodeError::BadVersion(_) => "bad_version",
            DecodeError::UnknownType(_) => "unknown_type",
            DecodeError::LengthOverflow(_) => "oversize",
            DecodeError::CrcMismatch { .. } => "crc_mismatch",
            DecodeError::Truncated { .. } => "truncated",
            DecodeError::BadPayloadJson { .. } => "bad_payload",
            DecodeError::TrailingBytes(_) => "trailing_bytes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte limit")]
pub struct OversizePayload(pub usize);

pub fn crc(msg_type: u8, payload: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(&[msg_type]);
    h.update(payload);
    h.finalize()
}

/// Frame an arbitrary type byte and payload.
pub fn encode_frame(msg_type: u8, payload: &[u8]) -> Result<Vec<u8>, OversizePayload> {
    if payload.len() > MAX_PAYLOAD {
        return Err(OversizePayload(payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + TRAILER_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg_type);
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc(msg_type, payload).to_be_bytes());
    Ok(out)
}

/// A checked frame whose payload has not been interpreted yet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFrame<'a> {
    pub msg_type: MsgType,
    pub payload: &'a [u8],
}

/// Validate the header fields and return the declared payload length.
/// Works on partial input: missing bytes only yield `Truncated`.
pub fn check_header(bytes: &[u8]) -> Result<usize, DecodeError> {
    let n = bytes.len().min(4);
    if bytes[..n] != MAGIC[..n] {
        return Err(DecodeError::BadMagic(bytes[..n].to_vec()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(DecodeError::Truncated {
            needed: HEADER_LEN,
            got: bytes.len(),
        });
    }
    if bytes[4] != VERSION {
        return Err(DecodeError::BadVersion(bytes[4]));
    }
    let len = u32::from_be_bytes(bytes[6..10].try_into().unwrap());
    if len as usize > MAX_PAYLOAD {
        return Err(DecodeError::LengthOverflow(len));
    }
    Ok(len as usize)
}

/// Decode the frame at the start of `bytes`, returning it and the number of
/// bytes it occupies. The CRC is checked before the type byte is interpreted,
/// so any corruption of type or payload surfaces as `CrcMismatch`.
pub fn decode_prefix(bytes: &[u8]) -> Result<(RawFrame<'_>, usize), DecodeError> {
    let len = check_header(bytes)?;
    let total = HEADER_LEN + len + TRAILER_LEN;
    if bytes.len() < total {
        return Err(DecodeError::Truncated {
            needed: total,
            got: bytes.len(),
        });
    }
    let type_byte = bytes[5];
    let payload = &bytes[HEADER_LEN..HEADER_LEN + len];
    let expected = u32::from_be_bytes(bytes[HEADER_LEN + len..total].try_into().unwrap());
    let actual = crc(type_byte, payload);
    if expected != actual {
        return Err(DecodeError::CrcMismatch { expected, actual });
    }
    let msg_type = MsgType::from_byte(type_byte).ok_or(DecodeError::UnknownType(type_byte))?;
    Ok((RawFrame { msg_type, payload }, total))
}

/// Decode exactly one frame.
pub fn decode_frame(bytes: &[u8]) -> Result<RawFrame<'_>, DecodeError> {
    let (frame, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(DecodeError::TrailingBytes(bytes.len() - used));
    }
    Ok(frame)
}

/// What a [`FrameReader`] produced from the stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Read {
    /// Bytes of one complete, CRC-valid frame of a known type.
    Frame(Vec<u8>),
    /// A malformed frame was skipped; the reader has resynchronized.
    Malformed(DecodeError),
}

/// Splits a byte stream into frames. Garbage between frames is skipped by
/// scanning for the next magic; a frame with a bad CRC is dropped whole.
#[derive(Debug, Default)]
pub struct FrameReader {
    buf: Vec<u8>,
}

impl FrameReader {
    pub fn new() -> Self {
        FrameReader::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    pub fn next(&mut self) -> Option<Read> {
        if self.buf.is_empty() {
            return None;
        }
        match decode_prefix(&self.buf) {
            Ok((_, used)) => Some(Read::Frame(self.buf.drain(..used).collect())),
            Err(DecodeError::Truncated { .. }) => None,
            Err(e @ (DecodeError::CrcMismatch { .. } | DecodeError::UnknownType(_))) => {
                let len = check_header(&self.buf).expect("header was valid");
                self.buf.drain(..HEADER_LEN + len + TRAILER_LEN);
                Some(Read::Malformed(e))
            }
            Err(e) => {
                // Header itself is bad: skip to the next candidate magic.
                let skip = self.buf[1..]
                    .windows(4)
                    .position(|w| w == MAGIC)
                    .map(|p| p + 1)
                    .unwrap_or_else(|| self.buf.len().saturating_sub(3).max(1));
                self.buf.drain(..skip);
                Some(Read::Malformed(e))
            }
        }
    }
}
