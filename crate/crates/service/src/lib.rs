//! JSON-over-HTTP prediction service.
//!
//! `POST /api/v1/predict` and `GET /api/v1/health`. Models load in the
//! background; until they are ready both endpoints answer 503.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use codeorigin_core::corpus::Language;
use codeorigin_core::pipeline::Detector;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tower_http::cors::CorsLayer;

pub const MAX_CODE_BYTES: usize = 256 * 1024;
pub const DEFAULT_MODEL: &str = "gptsniffer";
pub const MODEL_KEYS: [&str; 2] = ["gptsniffer", "whodunit"];
const BODY_LIMIT: usize = 4 * MAX_CODE_BYTES;
const RETRY_AFTER_S: u64 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub code: String,
    #[serde(default)]
    pub language: Option<Language>,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    /// `"human"` or `"ai"`.
    pub label: String,
    pub probability: f64,
    pub threshold: f64,
    pub model: String,
    pub model_version: String,
    pub degraded_dfg: bool,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retry_after_s: Option<u64>,
}

#[derive(Debug, Default, Serialize, Deserialize, PartialEq, Clone)]
pub struct Counters {
    pub predictions: u64,
    pub degraded_dfg: u64,
    pub errors: u64,
    pub rejected_overload: u64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Clone)]
pub struct Health {
    pub status: String,
    pub models: BTreeMap<String, String>,
    pub default_model: String,
    pub counters: Counters,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// Model key to stage-2 checkpoint directory.
    pub models: BTreeMap<String, PathBuf>,
    pub default_model: String,
    /// Concurrent inference jobs.
    pub workers: usize,
    /// Requests allowed to wait for a worker before 503.
    pub queue: usize,
}

impl ServiceConfig {
    pub fn new(bind: SocketAddr) -> Self {
        ServiceConfig {
            bind,
            models: BTreeMap::new(),
            default_model: DEFAULT_MODEL.into(),
            workers: 1,
            queue: 16,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown model key {0:?} (expected one of gptsniffer, whodunit)")]
    UnknownKey(String),
    #[error("no models configured")]
    NoModels,
    #[error("default model {0:?} is not configured")]
    MissingDefault(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] codeorigin_core::Error),
}

#[derive(Default)]
struct AtomicCounters {
    predictions: AtomicU64,
    degraded_dfg: AtomicU64,
    errors: AtomicU64,
    rejected_overload: AtomicU64,
}

/// Shared service state.
pub struct AppState {
    models: OnceLock<BTreeMap<String, Arc<Detector>>>,
    load_error: OnceLock<String>,
    default_model: String,
    admission: Semaphore,
    workers: Semaphore,
    counters: AtomicCounters,
}

impl AppState {
    /// State whose models have not been loaded yet.
    pub fn loading(default_model: &str, workers: usize, queue: usize) -> Arc<Self> {
        let workers = workers.max(1);
        Arc::new(AppState {
            models: OnceLock::new(),
            load_error: OnceLock::new(),
            default_model: default_model.to_string(),
            admission: Semaphore::new(workers + queue),
            workers: Semaphore::new(workers),
            counters: AtomicCounters::default(),
        })
    }

    pub fn ready(models: BTreeMap<String, Arc<Detector>>, default_model: &str, workers: usize, queue: usize) -> Arc<Self> {
        let state = Self::loading(default_model, workers, queue);
        state.install(models);
        state
    }

    pub fn install(&self, models: BTreeMap<String, Arc<Detector>>) {
        let _ = self.models.set(models);
    }

    pub fn fail(&self, message: String) {
        let _ = self.load_error.set(message);
    }

    /// Takes one admission slot until the permit drops; requests beyond the
    /// remaining capacity get 503.
    pub fn reserve_slot(&self) -> Option<tokio::sync::SemaphorePermit<'_>> {
        self.admission.try_acquire().ok()
    }

    pub fn is_ready(&self) -> bool {
        self.models.get().is_some()
    }

    fn counters(&self) -> Counters {
        let c = &self.counters;
        Counters {
            predictions: c.predictions.load(Ordering::Relaxed),
            degraded_dfg: c.degraded_dfg.load(Ordering::Relaxed),
            errors: c.errors.load(Ordering::Relaxed),
            rejected_overload: c.rejected_overload.load(Ordering::Relaxed),
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/v1/predict", post(predict))
        .route("/api/v1/health", get(health))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

fn error(status: StatusCode, kind: &str, message: impl Into<String>) -> Response {
    let body = ErrorBody {
        error: kind.into(),
        message: message.into(),
        retry_after_s: None,
    };
    (status, Json(body)).into_response()
}

fn unavailable(state: &AppState) -> Response {
    match state.load_error.get() {
        Some(msg) => error(StatusCode::SERVICE_UNAVAILABLE, "load_failed", msg.clone()),
        None => {
            let mut r = error(StatusCode::SERVICE_UNAVAILABLE, "loading", "models are loading");
            r.headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from(RETRY_AFTER_S));
            r
        }
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    let Some(models) = state.models.get() else {
        return unavailable(&state);
    };
    let body = Health {
        status: "ready".into(),
        models: models
            .iter()
            .map(|(k, d)| (k.clone(), d.version().to_string()))
            .collect(),
        default_model: state.default_model.clone(),
        counters: state.counters(),
    };
    Json(body).into_response()
}

async fn predict(State(state): State<Arc<AppState>>, body: Result<Json<PredictRequest>, JsonRejection>) -> Response {
    let response = predict_inner(&state, body).await;
    if !response.status().is_success() && response.status() != StatusCode::SERVICE_UNAVAILABLE {
        state.counters.errors.fetch_add(1, Ordering::Relaxed);
    }
    response
}

async fn predict_inner(state: &Arc<AppState>, body: Result<Json<PredictRequest>, JsonRejection>) -> Response {
    let started = Instant::now();
    let Json(req) = match body {
        Ok(b) => b,
        Err(JsonRejection::BytesRejection(_)) => {
            return error(StatusCode::BAD_REQUEST, "too_large", format!("request exceeds {BODY_LIMIT} bytes"))
        }
        Err(e) => return error(StatusCode::BAD_REQUEST, "bad_request", e.body_text()),
    };
    if req.code.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "empty_code", "code is empty");
    }
    if req.code.len() > MAX_CODE_BYTES {
        return error(
            StatusCode::BAD_REQUEST,
            "too_large",
            format!("code is {} bytes; limit is {MAX_CODE_BYTES}", req.code.len()),
        );
    }
    if let Some(t) = req.threshold {
        if !(t > 0.0 && t < 1.0) {
            return error(StatusCode::BAD_REQUEST, "bad_threshold", format!("threshold must be in (0, 1), got {t}"));
        }
    }
    let Some(models) = state.models.get() else {
        return unavailable(state);
    };
    let key = req.model.clone().unwrap_or_else(|| state.default_model.clone());
    let Some(detector) = models.get(&key).cloned() else {
        return error(StatusCode::NOT_FOUND, "unknown_model", format!("model {key:?} is not loaded"));
    };
    let Ok(_admitted) = state.admission.try_acquire() else {
        state.counters.rejected_overload.fetch_add(1, Ordering::Relaxed);
        let body = ErrorBody {
            error: "overloaded".into(),
            message: "inference queue is full".into(),
            retry_after_s: Some(RETRY_AFTER_S),
        };
        let mut r = (StatusCode::SERVICE_UNAVAILABLE, Json(body)).into_response();
        r.headers_mut()
            .insert(header::RETRY_AFTER, HeaderValue::from(RETRY_AFTER_S));
        return r;
    };
    let _worker = state.workers.acquire().await.expect("worker semaphore never closes");
    let PredictRequest {
        code,
        language,
        threshold,
        ..
    } = req;
    let joined = tokio::task::spawn_blocking(move || detector.predict(&code, language, threshold)).await;
    let result = match joined {
        Ok(r) => r,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    };
    match result {
        Ok(p) => {
            state.counters.predictions.fetch_add(1, Ordering::Relaxed);
            if p.degraded_dfg {
                state.counters.degraded_dfg.fetch_add(1, Ordering::Relaxed);
            }
            Json(PredictResponse {
                label: p.label.name().to_string(),
                probability: p.probability,
                threshold: p.threshold,
                model: key,
                model_version: p.model_version,
                degraded_dfg: p.degraded_dfg,
                latency_ms: started.elapsed().as_secs_f64() * 1e3,
            })
            .into_response()
        }
        Err(codeorigin_core::Error::NoCodeContent) => {
            error(StatusCode::UNPROCESSABLE_ENTITY, "no_code_content", "no code content")
        }
        Err(e @ codeorigin_core::Error::InvalidArgument(_)) => error(StatusCode::BAD_REQUEST, e.kind(), e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.kind(), e.to_string()),
    }
}

/// Loads every configured checkpoint.
pub fn load_models(config: &ServiceConfig) -> Result<BTreeMap<String, Arc<Detector>>, ServiceError> {
    if config.models.is_empty() {
        return Err(ServiceError::NoModels);
    }
    if !config.models.contains_key(&config.default_model) {
        return Err(ServiceError::MissingDefault(config.default_model.clone()));
    }
    let mut out = BTreeMap::new();
    for (key, path) in &config.models {
        if !MODEL_KEYS.contains(&key.as_str()) {
            return Err(ServiceError::UnknownKey(key.clone()));
        }
        log::info!("loading model {key} from {}", path.display());
        out.insert(key.clone(), Arc::new(Detector::load(path)?));
    }
    Ok(out)
}

/// Binds, starts answering (503 until loaded), loads models in the
/// background and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    for key in config.models.keys() {
        if !MODEL_KEYS.contains(&key.as_str()) {
            return Err(ServiceError::UnknownKey(key.clone()));
        }
    }
    let state = AppState::loading(&config.default_model, config.workers, config.queue);
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    let loader_state = state.clone();
    tokio::task::spawn_blocking(move || match load_models(&config) {
        Ok(models) => {
            loader_state.install(models);
            log::info!("models ready");
        }
        Err(e) => {
            log::error!("model loading failed: {e}");
            loader_state.fail(e.to_string());
        }
    });
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

