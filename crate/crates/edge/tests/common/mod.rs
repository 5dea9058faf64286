#![allow(dead_code)]

use std::sync::Arc;

use farmlight_core::model::{save, ModelConfig, ModelParams, StageTag, TensorId};
use farmlight_core::synthgen::{default_world, gen_observation, World};
use farmlight_core::{Observation, Rng};
use farmlight_edge::{EdgeConfig, EdgePolicy, EdgeRuntime, SimClock, TelemetryBuffer};

pub fn world() -> World {
    default_world()
}

/// A student whose only non-zero weights are output biases, so it predicts
/// `class` with softmax weight e^logit / (e^logit + K - 1) for every input.
pub fn biased_model(class: usize, logit: f64, stage: StageTag) -> Vec<u8> {
    let mut p = ModelParams::zeros(ModelConfig::student()).unwrap();
    p.tensor_mut(TensorId::H2B)[class] = logit;
    save(&p, &world().catalog.digest_hex(), stage).unwrap().0
}

pub fn zero_model() -> Vec<u8> {
    let p = ModelParams::zeros(ModelConfig::student()).unwrap();
    save(&p, &world().catalog.digest_hex(), StageTag::Init).unwrap().0
}

pub fn runtime_with(policy: EdgePolicy, clock: &SimClock) -> Arc<EdgeRuntime> {
    let mut c = EdgeConfig::new("edge-01", world().catalog);
    c.policy = policy;
    Arc::new(EdgeRuntime::new(c, Arc::new(clock.clone()), TelemetryBuffer::in_memory()).unwrap())
}

pub fn runtime() -> (Arc<EdgeRuntime>, SimClock) {
    let clock = SimClock::new(1_000);
    (runtime_with(EdgePolicy::default(), &clock), clock)
}

pub fn observation(class: usize, seed: u64) -> Observation {
    gen_observation(&world().specs[class], &mut Rng::seeded(seed))
}
