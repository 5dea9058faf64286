//! Seeded generators of random messages and byte strings, shared by the
//! codec round-trip, fuzz and bit-flip harnesses.

use farmlight_core::domain::Urgency;
use farmlight_core::{Alert, Diagnosis, Location, Rng};

use crate::frame::{encode_frame, MsgType};
use crate::message::*;

fn text(rng: &mut Rng, max: usize) -> String {
    const ALPHABET: &[char] = &[
        'a', 'b', 'z', 'A', 'Q', '0', '9', '-', '_', ' ', '"', '\\', '/', '\n', '\t', 'é', '°',
        'ß', '中', '🌱', '\u{1}', '\u{7f}',
    ];
    let n = rng.below(max as u64 + 1) as usize;
    (0..n)
        .map(|_| ALPHABET[rng.below(ALPHABET.len() as u64) as usize])
        .collect()
}

fn real(rng: &mut Rng) -> f64 {
    match rng.below(4) {
        0 => 0.0,
        1 => rng.uniform(-1e6, 1e6),
        2 => rng.next_f64(),
        _ => f64::from_bits(rng.next_u64() & 0x3FEF_FFFF_FFFF_FFFF),
    }
}

fn bytes(rng: &mut Rng, max: usize) -> Vec<u8> {
    let mut v = vec![0u8; rng.below(max as u64 + 1) as usize];
    rng.fill_bytes(&mut v);
    v
}

fn opt_text(rng: &mut Rng) -> Option<String> {
    (rng.below(2) == 1).then(|| text(rng, 20))
}

pub fn random_diagnosis(rng: &mut Rng) -> Diagnosis {
    let k = 1 + rng.below(10) as usize;
    Diagnosis {
        obs_id: text(rng, 36),
        probs: (0..k).map(|_| rng.next_f64()).collect(),
        predicted: rng.below(k as u64) as usize,
        confidence: rng.next_f64(),
        recommendation: text(rng, 60),
        model_version: text(rng, 16),
    }
}

pub fn random_alert(rng: &mut Rng) -> Alert {
    Alert {
        alert_id: text(rng, 36),
        obs_id: text(rng, 36),
        sensor_id: text(rng, 12),
        location: Location {
            lat: real(rng),
            lon: real(rng),
        },
        class_id: rng.below(8) as usize,
        class_name: text(rng, 20),
        confidence: rng.next_f64(),
        recommendation: text(rng, 60),
        urgency: [Urgency::Low, Urgency::Medium, Urgency::High][rng.below(3) as usize],
        created_ms: rng.next_u64() as i64 >> 12,
        acked: rng.below(2) == 1,
        image_ref: text(rng, 40),
    }
}

/// A random, encodable message of the given type.
pub fn random_message(rng: &mut Rng, t: MsgType) -> Message {
    let u32_ = |rng: &mut Rng| rng.next_u64() as u32;
    match t {
        MsgType::Hello => Message::Hello(Hello {
            node_id: text(rng, 20),
            role: [NodeRole::Edge, NodeRole::Gateway, NodeRole::Cloud][rng.below(3) as usize],
        }),
        MsgType::HelloAck => Message::HelloAck(HelloAck {
            session_id: text(rng, 20),
        }),
        MsgType::TelemetryBatch => Message::TelemetryBatch(TelemetryBatch {
            batch_id: text(rng, 36),
            edge_id: text(rng, 12),
            count: u32_(rng),
            records: bytes(rng, 2048),
        }),
        MsgType::BatchAck => Message::BatchAck(BatchAck {
            batch_id: text(rng, 36),
        }),
        MsgType::ModelQuery => Message::ModelQuery(ModelQuery {
            current_version_id: opt_text(rng),
        }),
        MsgType::ModelManifest => Message::ModelManifest(ModelManifest {
            version_id: text(rng, 16),
            total_bytes: rng.next_u64() >> 11,
            chunk_size: CHUNK_SIZE,
            chunk_count: u32_(rng),
            sha256_hex: text(rng, 64),
        }),
        MsgType::ModelChunkReq => Message::ModelChunkReq(ModelChunkReq {
            version_id: text(rng, 16),
            index: u32_(rng),
        }),
        MsgType::ModelChunk => Message::ModelChunk(ModelChunk {
            version_id: text(rng, 16),
            index: u32_(rng),
            bytes: bytes(rng, CHUNK_SIZE as usize),
        }),
        MsgType::Alert => Message::Alert(random_alert(rng)),
        MsgType::Query => Message::Query(Query {
            text: text(rng, 80),
            obs_id: opt_text(rng),
        }),
        MsgType::Response => Message::Response(random_diagnosis(rng)),
        MsgType::Error => Message::Error(ErrorMsg {
            code: text(rng, 12),
            detail: text(rng, 60),
        }),
    }
}

/// Fuzz input: a mix of pure noise, valid frames with mutations, and frames
/// with arbitrary payloads under a correct CRC.
pub fn fuzz_input(rng: &mut Rng) -> Vec<u8> {
    match rng.below(4) {
        0 => bytes(rng, 64),
        1 => {
            let mut b = bytes(rng, 256);
            if b.len() >= 4 {
                b[..4].copy_from_slice(b"FLSK");
            }
            b
        }
        2 => {
            let t = MsgType::ALL[rng.below(12) as usize];
            let mut f = random_message(rng, t).encode().expect("generated messages encode");
            for _ in 0..1 + rng.below(4) {
                let i = rng.below(f.len() as u64) as usize;
                f[i] = rng.next_u64() as u8;
            }
            if rng.below(3) == 0 {
                let keep = rng.below(f.len() as u64 + 1) as usize;
                f.truncate(keep);
            }
            f
        }
        _ => {
            let type_byte = rng.below(16) as u8;
            let payload = bytes(rng, 128);
            encode_frame(type_byte, &payload).expect("small payload")
        }
    }
}
