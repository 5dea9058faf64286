mod common;

use common::*;
use farmlight_core::model::StageTag;
use farmlight_edge::sim::{run, SimConfig};

fn models() -> (Vec<u8>, Vec<u8>) {
    (biased_model(0, 1.0, StageTag::Sft), biased_model(3, 4.0, StageTag::Dft))
}

#[test]
fn lossy_three_edge_run_converges_with_exact_batches() {
    let (initial, update) = models();
    let s = run(&SimConfig::default(), &world(), &initial, &update).unwrap();
    assert!(s.ok, "{:?}", s.failures);
    assert!(s.all_converged);
    assert!(s.max_intervals_to_converge.unwrap() <= 10.0);
    assert_eq!(s.generated_batches, 30);
    assert_eq!(s.stored_batches, 30);
    assert!(s.missing_batches.is_empty() && s.unexpected_batches.is_empty());
    assert_eq!(s.stored_records, 240);
    assert!(s.frames_dropped > 0, "the link must actually lose frames");
    for e in &s.edges {
        assert_eq!(e.final_version.as_deref(), Some(s.published_version.as_str()));
        assert_eq!(e.batches_opened, 10);
        assert_eq!(e.records_acked, 80);
    }
}

#[test]
fn same_seed_same_summary() {
    let (initial, update) = models();
    let c = SimConfig { seed: 4, ..SimConfig::default() };
    let a = serde_json::to_string(&run(&c, &world(), &initial, &update).unwrap()).unwrap();
    let b = serde_json::to_string(&run(&c, &world(), &initial, &update).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn converges_across_seeds() {
    let (initial, update) = models();
    for seed in 1..=10 {
        let s = run(&SimConfig { seed, ..SimConfig::default() }, &world(), &initial, &update).unwrap();
        assert!(s.ok, "seed {seed}: {:?}", s.failures);
        assert_eq!(s.stored_batches, s.generated_batches);
    }
}

#[test]
fn lossless_link_loses_nothing() {
    let (initial, update) = models();
    let s = run(&SimConfig { loss: 0.0, ..SimConfig::default() }, &world(), &initial, &update).unwrap();
    assert!(s.ok, "{:?}", s.failures);
    assert_eq!(s.frames_dropped, 0);
    assert_eq!(s.edges.iter().map(|e| e.sync.timeouts).sum::<u64>(), 0);
}

#[test]
fn alerts_reach_the_cloud_with_the_updated_model() {
    // The update always predicts aphids with confidence above threshold,
    // so every observation after the swap raises an alert.
    let (initial, update) = models();
    let s = run(&SimConfig { loss: 0.0, ..SimConfig::default() }, &world(), &initial, &update).unwrap();
    let alerts: usize = s.edges.iter().map(|e| e.alerts).sum();
    assert!(alerts > 0);
    assert_eq!(s.cloud_alerts, alerts);
}

#[test]
fn bad_config_rejected() {
    let (initial, update) = models();
    assert!(run(&SimConfig { edges: 0, ..SimConfig::default() }, &world(), &initial, &update).is_err());
    assert!(run(&SimConfig::default(), &world(), b"junk", &update).is_err());
    assert!(run(&SimConfig { loss: 1.0, ..SimConfig::default() }, &world(), &initial, &update).is_err());
}

#[test]
fn lossy_backhaul_still_delivers_exactly_once() {
    let (initial, update) = models();
    for seed in 1..=5 {
        let c = SimConfig { seed, backhaul_loss: 0.2, ..SimConfig::default() };
        let s = run(&c, &world(), &initial, &update).unwrap();
        assert!(s.all_converged, "seed {seed}");
        assert!(s.missing_batches.is_empty() && s.unexpected_batches.is_empty(), "seed {seed}");
        assert_eq!(s.stored_records, s.generated_records);
    }
}
