//! HTTP JSON API over loaded artifacts.

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tower_http::cors::CorsLayer;

use super::{recommend, ApiError, Artifacts, RecommendRequest};

/// Shared handle to the current artifact bundle. Requests clone the inner
/// `Arc` and keep using it even if a reload swaps the bundle meanwhile.
#[derive(Clone)]
pub struct AppState {
    current: Arc<RwLock<Arc<Artifacts>>>,
}

impl AppState {
    pub fn new(artifacts: Artifacts) -> Self {
        AppState {
            current: Arc::new(RwLock::new(Arc::new(artifacts))),
        }
    }

    pub fn artifacts(&self) -> Arc<Artifacts> {
        self.current.read().expect("artifact lock poisoned").clone()
    }

    /// Replaces the bundle atomically.
    pub fn swap(&self, artifacts: Artifacts) {
        *self.current.write().expect("artifact lock poisoned") = Arc::new(artifacts);
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    model_version: String,
    corpus_size: usize,
    indexed: usize,
    ranker_loaded: bool,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    let a = state.artifacts();
    Json(Health {
        status: "ok",
        model_version: a.model_version.clone(),
        corpus_size: a.store.len(),
        indexed: a.forest.len(),
        ranker_loaded: a.ranker.is_some(),
    })
}

async fn document(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    let a = state.artifacts();
    match a.store.get(&id) {
        Some(d) => Json(d).into_response(),
        None => ApiError {
            status: 404,
            error: format!("unknown document id `{id}`"),
        }
        .into_response(),
    }
}

async fn recommend_handler(
    State(state): State<AppState>,
    body: Result<Json<RecommendRequest>, JsonRejection>,
) -> Response {
    let req = match body {
        Ok(Json(r)) => r,
        Err(e) => return ApiError::bad_request(e.body_text()).into_response(),
    };
    let a = state.artifacts();
    let out = tokio::task::spawn_blocking(move || recommend(&a, &req)).await;
    match out {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => ApiError {
            status: 500,
            error: e.to_string(),
        }
        .into_response(),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/recommend", post(recommend_handler))
        .route("/document/{id}", get(document))
        .route("/health", get(health))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Binds `addr` and serves until the returned future is dropped or the
/// process is interrupted.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
