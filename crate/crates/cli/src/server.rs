//! HTTP front end for the dual-track engine.
//!
//! | route              | body                         | reply                      |
//! |--------------------|------------------------------|----------------------------|
//! | `POST /recommend`  | `{user_id, query, k}`        | `ServeResponse`            |
//! | `GET /metrics`     |                              | `TrackMetrics`             |
//! | `POST /refresh`    | `{path}` (snapshot or JSONL) | `{pool_version, articles}` |
//!
//! Unknown users are served as pure cold-start users.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sidground_core::dualtrack::{Engine, ServeResponse, Snapshot, TrackMetrics};
use sidground_core::padr::{route, BehaviorHistory, UserProfile};
use sidground_core::pool::NewsPool;

pub struct AppState {
    pub engine: Engine,
    pub profiles: HashMap<String, UserProfile>,
    pub histories: HashMap<String, BehaviorHistory>,
    pub tau: usize,
}

#[derive(Debug, Deserialize)]
pub struct RecommendRequest {
    pub user_id: String,
    #[serde(default)]
    pub query: String,
    pub k: Option<usize>,
}

#[derive(Debug, Deserialize)]
pub struct RefreshRequest {
    pub path: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RefreshReply {
    pub pool_version: u64,
    pub articles: usize,
}

#[derive(Debug, Serialize)]
struct ErrorReply {
    error: String,
}

fn error(status: StatusCode, msg: impl ToString) -> Response {
    (status, Json(ErrorReply { error: msg.to_string() })).into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/recommend", post(recommend))
        .route("/metrics", get(metrics))
        .route("/refresh", post(refresh))
        .with_state(state)
}

async fn recommend(State(state): State<Arc<AppState>>, Json(req): Json<RecommendRequest>) -> Response {
    if req.k == Some(0) {
        return error(StatusCode::BAD_REQUEST, "k must be positive");
    }
    let fallback;
    let profile = match state.profiles.get(&req.user_id) {
        Some(p) => p,
        None => {
            fallback = UserProfile {
                user_id: req.user_id.clone(),
                ..Default::default()
            };
            &fallback
        }
    };
    let history = state
        .histories
        .get(&req.user_id)
        .cloned()
        .unwrap_or_else(|| BehaviorHistory::empty(&req.user_id));
    let ctx = route(profile, &history, &req.query, state.tau);
    match state.engine.fast_track(&ctx) {
        Ok(mut resp) => {
            truncate(&mut resp, req.k);
            Json(resp).into_response()
        }
        Err(e) => error(StatusCode::SERVICE_UNAVAILABLE, e),
    }
}

fn truncate(resp: &mut ServeResponse, k: Option<usize>) {
    if let Some(k) = k {
        resp.articles.truncate(k);
    }
}

async fn metrics(State(state): State<Arc<AppState>>) -> Json<TrackMetrics> {
    Json(state.engine.metrics())
}

async fn refresh(State(state): State<Arc<AppState>>, Json(req): Json<RefreshRequest>) -> Response {
    let loaded = tokio::task::spawn_blocking(move || {
        let pool = NewsPool::open(&req.path)?;
        let reply = RefreshReply {
            pool_version: pool.version(),
            articles: pool.len(),
        };
        let clicks = state.engine.snapshot().clicks().cloned();
        state.engine.swap_snapshot(Snapshot::new(Arc::new(pool), clicks));
        Ok::<_, sidground_core::Error>(reply)
    })
    .await;
    match loaded {
        Ok(Ok(reply)) => Json(reply).into_response(),
        Ok(Err(e)) => error(StatusCode::UNPROCESSABLE_ENTITY, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}
