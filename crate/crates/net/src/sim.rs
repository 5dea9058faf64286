//! Deterministic in-process links. Each link is one direction of a byte
//! stream carrying whole frames; loss, corruption and latency come from a
//! seeded generator so every run is reproducible.

use std::collections::VecDeque;

use farmlight_core::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkConfig {
    /// Probability that a frame is silently dropped.
    pub loss: f64,
    /// Probability that one bit of a delivered frame is flipped.
    pub corrupt: f64,
    pub min_latency_ms: u64,
    pub max_latency_ms: u64,
}

impl LinkConfig {
    pub fn reliable() -> Self {
        LinkConfig {
            loss: 0.0,
            corrupt: 0.0,
            min_latency_ms: 10,
            max_latency_ms: 10,
        }
    }

    pub fn lossy(loss: f64) -> Self {
        LinkConfig {
            loss,
            corrupt: 0.0,
            min_latency_ms: 5,
            max_latency_ms: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub sent: u64,
    pub dropped: u64,
    pub corrupted: u64,
    pub delivered: u64,
}

#[derive(Debug)]
pub struct SimLink {
    config: LinkConfig,
    rng: Rng,
    in_flight: VecDeque<(u64, Vec<u8>)>,
    last_arrival: u64,
    pub stats: LinkStats,
}

impl SimLink {
    pub fn new(config: LinkConfig, rng: Rng) -> Self {
        SimLink {
            config,
            rng,
            in_flight: VecDeque::new(),
            last_arrival: 0,
            stats: LinkStats::default(),
        }
    }

    pub fn send(&mut self, now_ms: u64, mut frame: Vec<u8>) {
        self.stats.sent += 1;
        if self.rng.next_f64() < self.config.loss {
            self.stats.dropped += 1;
            return;
        }
        if !frame.is_empty() && self.rng.next_f64() < self.config.corrupt {
            let bit = self.rng.below(frame.len() as u64 * 8) as usize;
            frame[bit / 8] ^= 1 << (bit % 8);
            self.stats.corrupted += 1;
        }
        let spread = self.config.max_latency_ms.saturating_sub(self.config.min_latency_ms);
        let latency = self.config.min_latency_ms + self.rng.below(spread + 1);
        // Stream semantics: frames never overtake each other.
        let at = (now_ms + latency).max(self.last_arrival);
        self.last_arrival = at;
        self.in_flight.push_back((at, frame));
    }

    /// Frames whose arrival time is at or before `now_ms`, in send order.
    pub fn deliver(&mut self, now_ms: u64) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        while self.in_flight.front().is_some_and(|(at, _)| *at <= now_ms) {
            out.push(self.in_flight.pop_front().unwrap().1);
        }
        self.stats.delivered += out.len() as u64;
        out
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }
}
