use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use sidground_cli::server::{router, AppState};
use sidground_core::dualtrack::{Engine, PrefixCache, ServeConfig, Snapshot};
use sidground_core::generator::HistPopGenerator;
use sidground_core::padr::{read_histories, read_profiles};
use sidground_core::pool::NewsPool;
use tower::ServiceExt;

fn shipped() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/standard")
}

fn state() -> Arc<AppState> {
    let f = shipped();
    let pool = NewsPool::ingest(f.join("pool.jsonl")).unwrap();
    let config = ServeConfig {
        enhance_workers: 0,
        ..Default::default()
    };
    let engine = Engine::new(Snapshot::new(Arc::new(pool), None), Arc::new(PrefixCache::new()), config)
        .unwrap()
        .with_generator(Arc::new(HistPopGenerator::new(10)));
    Arc::new(AppState {
        engine,
        profiles: read_profiles(f.join("profiles.jsonl")).unwrap().into_iter().map(|p| (p.user_id.clone(), p)).collect(),
        histories: read_histories(f.join("histories.jsonl")).unwrap().into_iter().map(|h| (h.user_id.clone(), h)).collect(),
        tau: 10,
    })
}

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: serde_json::Value) -> (StatusCode, serde_json::Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(if method == "GET" { Body::empty() } else { Body::from(body.to_string()) })
        .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null))
}

#[tokio::test]
async fn recommend_miss_then_hit() {
    let state = state();
    let req = serde_json::json!({"user_id": "u000080", "query": "more like this", "k": 4});
    let (status, first) = call(&state, "POST", "/recommend", req.clone()).await;
    assert_eq!(status, StatusCode::OK);
    assert!(first["served_from"].as_str().unwrap().starts_with("fallback_level_"));
    assert!(first["articles"].as_array().unwrap().len() <= 4);

    // Fill the cache the way an enhance worker would.
    let profile = state.profiles["u000080"].clone();
    let history = state.histories["u000080"].clone();
    let ctx = sidground_core::padr::route(&profile, &history, "more like this", 10);
    assert!(state.engine.enhance(&ctx).unwrap());
    let (_, second) = call(&state, "POST", "/recommend", req).await;
    assert!(["cache", "fallback_level_2", "fallback_level_3", "fallback_level_4"].contains(&second["served_from"].as_str().unwrap()));
    assert_eq!(second["pool_version"], 1);

    let (status, metrics) = call(&state, "GET", "/metrics", serde_json::Value::Null).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(metrics["requests"], 2);
    assert_eq!(metrics["cache_hit_rate"], 0.5);
}

#[tokio::test]
async fn unknown_user_is_cold_and_bad_requests_are_rejected() {
    let state = state();
    let (status, resp) = call(&state, "POST", "/recommend", serde_json::json!({"user_id": "nobody"})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(resp["served_from"], "fallback_level_4");
    let (status, _) = call(&state, "POST", "/recommend", serde_json::json!({"user_id": "u000080", "k": 0})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&state, "POST", "/recommend", serde_json::json!({"query": "x"})).await;
    assert!(status.is_client_error());
}

#[tokio::test]
async fn refresh_swaps_pool() {
    let state = state();
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("next.json");
    let mut pool = NewsPool::ingest(shipped().join("pool.jsonl")).unwrap();
    let dropped: Vec<String> = pool.articles().iter().skip(10).map(|a| a.id.clone()).collect();
    pool = pool.refresh(vec![], &dropped).unwrap().pool;
    pool.save(&snap).unwrap();

    let (status, reply) = call(&state, "POST", "/refresh", serde_json::json!({"path": snap})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(reply["pool_version"], 2);
    assert_eq!(reply["articles"], 10);
    let (_, resp) = call(&state, "POST", "/recommend", serde_json::json!({"user_id": "u000002"})).await;
    assert_eq!(resp["pool_version"], 2);
    for a in resp["articles"].as_array().unwrap() {
        assert!(pool.contains(a["article_id"].as_str().unwrap()));
    }

    let (status, _) = call(&state, "POST", "/refresh", serde_json::json!({"path": "/nonexistent"})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}
