mod common;

use common::*;
use farmlight_core::model::StageTag;
use farmlight_edge::dialogue::{eval_dialogue, Http, InProcess};

#[test]
fn matching_model_passes_every_session() {
    let (rt, _) = runtime();
    rt.swap_model(&biased_model(2, 6.0, StageTag::Dft)).unwrap();
    let script: Vec<_> = (0..10).map(|i| observation(2, i)).collect();
    let r = eval_dialogue(&InProcess(rt), &world().catalog, &script);
    assert_eq!(r.passed, 10);
    assert_eq!(r.pass_rate, 1.0);
    assert_eq!(r.transport_failures, 0);
    let s = &r.sessions[0];
    assert!(s.names_class && s.has_treatment && s.keeps_context);
    assert_eq!(s.rounds[1].obs_id.as_deref(), Some(script[0].obs_id.as_str()));
}

#[test]
fn healthy_sessions_expect_no_action() {
    let (rt, _) = runtime();
    rt.swap_model(&biased_model(0, 6.0, StageTag::Dft)).unwrap();
    let script: Vec<_> = (0..3).map(|i| observation(0, i)).collect();
    let r = eval_dialogue(&InProcess(rt), &world().catalog, &script);
    assert_eq!(r.passed, 3);
}

#[test]
fn wrong_class_fails_but_keeps_context() {
    let (rt, _) = runtime();
    rt.swap_model(&biased_model(2, 6.0, StageTag::Dft)).unwrap();
    let script: Vec<_> = (0..4).map(|i| observation(5, i)).collect();
    let r = eval_dialogue(&InProcess(rt), &world().catalog, &script);
    assert_eq!(r.passed, 0);
    assert!(r.sessions.iter().all(|s| !s.names_class && s.keeps_context));
    assert_eq!(r.transport_failures, 0);
}

#[test]
fn unreachable_edge_fails_every_round() {
    // Bind then drop to get a port nobody listens on.
    let addr = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let script: Vec<_> = (0..3).map(|i| observation(1, i)).collect();
    let r = eval_dialogue(&Http::new(format!("http://{addr}")), &world().catalog, &script);
    assert_eq!(r.passed, 0);
    assert_eq!(r.transport_failures, 3);
    assert!(r.sessions.iter().all(|s| s.rounds.iter().all(|x| x.error.is_some())));
}

#[test]
fn http_client_against_live_api() {
    let (rt, _) = runtime();
    rt.swap_model(&biased_model(6, 6.0, StageTag::Dft)).unwrap();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    listener.set_nonblocking(true).unwrap();
    let app = farmlight_edge::api::router(rt.clone());
    std::thread::spawn(move || {
        tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .unwrap()
            .block_on(async move {
                let l = tokio::net::TcpListener::from_std(listener).unwrap();
                axum::serve(l, app).await.unwrap();
            })
    });
    let script: Vec<_> = (0..5).map(|i| observation(6, i)).collect();
    let r = eval_dialogue(&Http::new(format!("http://{addr}/")), &world().catalog, &script);
    assert_eq!(r.passed, 5, "{:#?}", r.sessions[0]);
    assert_eq!(rt.queue_depth(), 5);
}
