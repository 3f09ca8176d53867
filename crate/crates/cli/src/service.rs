//! Request service over the same [`Engine`] the simulator drives.
//!
//! `POST /generate` serves one prompt, `GET /metrics` reports running totals
//! and `POST /maintain` forces a maintenance run. The engine sits behind one
//! mutex, so requests are applied one at a time in arrival order. There is
//! no authentication.

use std::collections::BTreeMap;
use std::future::Future;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use edgecache::dispatch::DispatchMode;
use edgecache::maintenance::MaintenanceReport;
use edgecache::pipeline::{Engine, RequestOutcome};
use edgecache::scheduler::ScheduleReason;
use edgecache::Error;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

/// Default listen address; `EDGECACHE_ADDR` overrides it.
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub prompt: String,
    #[serde(default)]
    pub quality: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub mode: DispatchMode,
    pub reason: ScheduleReason,
    pub node: String,
    pub score: Option<f64>,
    pub latency_s: f64,
    pub payload_uri: String,
    pub request_index: u64,
}

impl From<RequestOutcome> for GenerateResponse {
    fn from(o: RequestOutcome) -> Self {
        GenerateResponse {
            mode: o.mode,
            reason: o.reason,
            node: o.node_id.to_string(),
            score: o.score,
            latency_s: o.latency_s,
            payload_uri: o.payload_uri,
            request_index: o.request_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaintainResponse {
    pub run: u64,
    pub policy: String,
    pub evicted: usize,
    pub sizes_before: Vec<usize>,
    pub sizes_after: Vec<usize>,
}

impl From<&MaintenanceReport> for MaintainResponse {
    fn from(r: &MaintenanceReport) -> Self {
        MaintainResponse {
            run: r.run,
            policy: r.policy.to_string(),
            evicted: r.evicted.len(),
            sizes_before: r.sizes_before.clone(),
            sizes_after: r.sizes_after.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub requests: u64,
    pub mode_counts: BTreeMap<DispatchMode, u64>,
    /// Share of requests served from a cached image or reference.
    pub hit_rate: f64,
    pub mean_latency_s: f64,
    pub gpu_seconds: f64,
    pub maintenance_runs: u64,
    pub evicted: u64,
    pub entries: BTreeMap<String, usize>,
    pub uptime_s: f64,
}

#[derive(Debug, Default)]
struct Totals {
    mode_counts: BTreeMap<DispatchMode, u64>,
    latency_sum: f64,
    gpu_seconds: f64,
    evicted: u64,
}

struct Inner {
    engine: Engine,
    totals: Totals,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Mutex<Inner>>,
    started: Instant,
}

impl AppState {
    pub fn new(engine: Engine) -> Self {
        AppState {
            inner: Arc::new(Mutex::new(Inner {
                engine,
                totals: Totals::default(),
            })),
            started: Instant::now(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        // A panic mid-request leaves totals at worst one request stale.
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn metrics(&self) -> Metrics {
        let inner = self.lock();
        let requests = inner.engine.requests();
        let t = &inner.totals;
        let misses = t.mode_counts.get(&DispatchMode::TextToImage).copied().unwrap_or(0);
        let ratio = |x: f64| if requests > 0 { x / requests as f64 } else { 0.0 };
        Metrics {
            requests,
            mode_counts: t.mode_counts.clone(),
            hit_rate: ratio((requests - misses) as f64),
            mean_latency_s: ratio(t.latency_sum),
            gpu_seconds: t.gpu_seconds,
            maintenance_runs: inner.engine.maintenance_runs(),
            evicted: t.evicted,
            entries: inner
                .engine
                .shards()
                .iter()
                .map(|(id, s)| (id.to_string(), s.len()))
                .collect(),
            uptime_s: self.started.elapsed().as_secs_f64(),
        }
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: ErrorDetail,
}

#[derive(Debug, Serialize)]
struct ErrorDetail {
    code: &'static str,
    message: String,
}

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::EmptyPrompt => (StatusCode::BAD_REQUEST, "empty_prompt"),
            Error::Backend { .. } | Error::Embedder(_) => (StatusCode::BAD_GATEWAY, "backend_failed"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError {
            status,
            code,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code,
                message: self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/generate", post(generate))
        .route("/metrics", get(metrics))
        .route("/maintain", post(maintain))
        .with_state(state)
}

async fn generate(
    State(state): State<AppState>,
    body: Result<Json<GenerateRequest>, JsonRejection>,
) -> Result<Json<GenerateResponse>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::bad_request("invalid_body", e.body_text()))?;
    if req.prompt.trim().is_empty() {
        return Err(Error::EmptyPrompt.into());
    }
    let outcome = tokio::task::spawn_blocking(move || {
        let mut inner = state.lock();
        let (outcome, report) = inner.engine.handle(&req.prompt, req.quality)?;
        let t = &mut inner.totals;
        *t.mode_counts.entry(outcome.mode).or_default() += 1;
        t.latency_sum += outcome.latency_s;
        t.gpu_seconds += outcome.gpu_seconds;
        if let Some(r) = report {
            t.evicted += r.evicted.len() as u64;
        }
        Ok::<_, Error>(outcome)
    })
    .await
    .map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        code: "internal",
        message: e.to_string(),
    })??;
    Ok(Json(outcome.into()))
}

async fn metrics(State(state): State<AppState>) -> Json<Metrics> {
    Json(state.metrics())
}

async fn maintain(State(state): State<AppState>) -> Result<Json<MaintainResponse>, ApiError> {
    let mut inner = state.lock();
    let report = inner.engine.maintain()?;
    inner.totals.evicted += report.evicted.len() as u64;
    Ok(Json(MaintainResponse::from(&report)))
}

/// Serves until `shutdown` resolves, then finishes in-flight requests.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
