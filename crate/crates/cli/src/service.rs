//! HTTP front end: prediction, routing and on-demand simulation.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::{json, Value};
use surrogate_core::router::decide;
use surrogate_core::simulator::{self, BuildingParams, SimOutputs, Simulator};
use surrogate_core::{DesignSpace, Error, ModelArtifact, PredictOptions, PredictiveDistribution, Surrogate, ThresholdPolicy, TrainedModel};
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Artificial delay added to every simulation.
    pub simulate_latency: Duration,
    /// Simulations slower than this run as background jobs.
    pub async_threshold: Duration,
    pub mc_samples: usize,
    /// Fixed MC seed for reproducible responses; `None` draws fresh entropy.
    pub fixed_seed: Option<u64>,
    pub max_jobs: usize,
    pub workers: usize,
    /// `None` allows any origin.
    pub cors_origin: Option<String>,
    /// Uniform σ threshold used when the artifact carries no policy.
    pub threshold: Option<f64>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            simulate_latency: Duration::ZERO,
            async_threshold: Duration::from_millis(100),
            mc_samples: 30,
            fixed_seed: None,
            max_jobs: 1024,
            workers: 4,
            cors_origin: None,
            threshold: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum JobState {
    Pending,
    Done { outputs: SimOutputs },
    Failed { error: String },
}

#[derive(Debug)]
struct JobTable {
    jobs: HashMap<u64, JobState>,
    order: VecDeque<u64>,
    next_id: u64,
    capacity: usize,
}

impl JobTable {
    fn new(capacity: usize) -> Self {
        Self {
            jobs: HashMap::new(),
            order: VecDeque::new(),
            next_id: 1,
            capacity: capacity.max(1),
        }
    }

    /// New pending job, evicting the oldest finished one when full.
    fn open(&mut self) -> Option<u64> {
        if self.jobs.len() >= self.capacity {
            let pos = self
                .order
                .iter()
                .position(|id| !matches!(self.jobs.get(id), Some(JobState::Pending)))?;
            let old = self.order.remove(pos)?;
            self.jobs.remove(&old);
        }
        let id = self.next_id;
        self.next_id += 1;
        self.jobs.insert(id, JobState::Pending);
        self.order.push_back(id);
        Some(id)
    }

    fn finish(&mut self, id: u64, state: JobState) {
        if let Some(slot) = self.jobs.get_mut(&id) {
            *slot = state;
        }
    }
}

pub struct AppState {
    model: Option<Arc<ModelArtifact>>,
    space: DesignSpace,
    policy: Option<ThresholdPolicy>,
    simulator: Simulator,
    config: ServiceConfig,
    jobs: Mutex<JobTable>,
    workers: Arc<Semaphore>,
}

impl AppState {
    pub fn new(model: Option<ModelArtifact>, config: ServiceConfig) -> Self {
        let space = model
            .as_ref()
            .and_then(|m| m.design_space.clone())
            .unwrap_or_else(simulator::default_space);
        let policy = model.as_ref().and_then(|m| {
            m.threshold_policy
                .clone()
                .or_else(|| config.threshold.map(|t| ThresholdPolicy::uniform(m.output_names(), t)))
        });
        Self {
            model: model.map(Arc::new),
            space,
            policy,
            simulator: Simulator::default().with_latency(config.simulate_latency),
            jobs: Mutex::new(JobTable::new(config.max_jobs)),
            workers: Arc::new(Semaphore::new(config.workers.max(1))),
            config,
        }
    }

    fn options(&self) -> PredictOptions {
        PredictOptions {
            mc_samples: self.config.mc_samples,
            seed: self.config.fixed_seed.unwrap_or_else(rand::random),
        }
    }

    fn model(&self) -> Result<Arc<ModelArtifact>, ApiError> {
        self.model
            .clone()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "unavailable", "no model loaded"))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
    field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            message: message.into(),
            field: None,
        }
    }

    fn field(field: &str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            kind: "invalid-input",
            message: message.into(),
            field: Some(field.to_string()),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::OutOfBounds { ref name, .. } => Self {
                status: StatusCode::BAD_REQUEST,
                kind: e.kind(),
                field: Some(name.clone()),
                message: e.to_string(),
            },
            Error::DimensionMismatch { .. } | Error::InvalidArgument(_) => {
                Self::new(StatusCode::BAD_REQUEST, e.kind(), e.to_string())
            }
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, other.kind(), other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "kind": self.kind, "message": self.message, "field": self.field } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

/// Pulls `{"inputs": {name: number}}` into `names` order, checking bounds.
fn parse_inputs(body: &[u8], names: &[String], space: &DesignSpace) -> Result<Vec<f64>, ApiError> {
    let v: Value = serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "json", format!("malformed body: {e}")))?;
    let obj = v
        .get("inputs")
        .and_then(Value::as_object)
        .ok_or_else(|| ApiError::field("inputs", "body must contain an `inputs` object"))?;
    if let Some(extra) = obj.keys().find(|k| !names.contains(k)) {
        return Err(ApiError::field(extra, format!("unknown input `{extra}`")));
    }
    let mut x = Vec::with_capacity(names.len());
    for name in names {
        let value = obj
            .get(name)
            .ok_or_else(|| ApiError::field(name, format!("missing input `{name}`")))?
            .as_f64()
            .ok_or_else(|| ApiError::field(name, format!("input `{name}` must be a number")))?;
        if let Some(p) = space.params.iter().find(|p| &p.name == name) {
            if !p.contains(value) {
                return Err(Error::OutOfBounds {
                    name: name.clone(),
                    value,
                    lower: p.lower,
                    upper: p.upper,
                }
                .into());
            }
        }
        x.push(value);
    }
    Ok(x)
}

fn render_estimate(model: &ModelArtifact, p: &PredictiveDistribution) -> Value {
    let std = p.std();
    let outputs: BTreeMap<&str, Value> = model
        .output_names()
        .iter()
        .enumerate()
        .map(|(o, name)| {
            (
                name.as_str(),
                json!({ "mean": p.mean[o], "std": std[o], "unit": simulator::output_unit(name) }),
            )
        })
        .collect();
    json!({
        "model_id": model.model_id(),
        "mc_samples": p.mc_samples_used,
        "outputs": outputs,
    })
}

async fn predict_blocking(state: &Arc<AppState>, body: &[u8]) -> Result<(Arc<ModelArtifact>, Vec<f64>, PredictiveDistribution), ApiError> {
    let model = state.model()?;
    let x = parse_inputs(body, model.input_names(), &state.space)?;
    let opts = state.options();
    let (m, xc) = (model.clone(), x.clone());
    let p = tokio::task::spawn_blocking(move || m.predict_one(&xc, &opts))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok((model, x, p))
}

async fn predict(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let (model, _, p) = predict_blocking(&state, &body).await?;
    Ok(Json(render_estimate(&model, &p)).into_response())
}

/// Reorders a named point into the simulator's parameter order.
fn building_params(names: &[String], x: &[f64]) -> Result<BuildingParams, Error> {
    let v: Vec<f64> = simulator::INPUT_NAMES
        .iter()
        .map(|n| {
            names
                .iter()
                .position(|m| m == n)
                .map(|i| x[i])
                .ok_or_else(|| Error::InvalidSpace(format!("model lacks building parameter `{n}`")))
        })
        .collect::<Result<_, _>>()?;
    BuildingParams::from_slice(&v)
}

/// Runs synchronously when fast enough, otherwise as a pollable job.
async fn start_simulation(state: &Arc<AppState>, params: BuildingParams) -> Result<Value, ApiError> {
    if state.config.simulate_latency <= state.config.async_threshold {
        let _permit = state.workers.acquire().await.expect("semaphore open");
        let sim = state.simulator;
        let out = tokio::task::spawn_blocking(move || sim.run(&params))
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
        return Ok(match out {
            Ok(outputs) => json!({ "status": "done", "outputs": outputs }),
            Err(e) => json!({ "status": "failed", "error": e.to_string() }),
        });
    }
    let id = state
        .jobs
        .lock()
        .expect("job table poisoned")
        .open()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "busy", "job table full"))?;
    let st = state.clone();
    tokio::spawn(async move {
        let _permit = st.workers.clone().acquire_owned().await.expect("semaphore open");
        let sim = st.simulator;
        let result = tokio::task::spawn_blocking(move || sim.run(&params)).await;
        let job = match result {
            Ok(Ok(outputs)) => JobState::Done { outputs },
            Ok(Err(e)) => JobState::Failed { error: e.to_string() },
            Err(e) => JobState::Failed { error: e.to_string() },
        };
        st.jobs.lock().expect("job table poisoned").finish(id, job);
    });
    Ok(json!({ "status": "pending", "job_id": id }))
}

async fn route(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let policy = state.policy.clone().ok_or_else(|| {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "unavailable", "no threshold policy loaded")
    })?;
    let (model, x, p) = predict_blocking(&state, &body).await?;
    let decision = decide(&policy, p, &x, None);
    let simulation = if decision.routed {
        match building_params(model.input_names(), &x) {
            Ok(params) => start_simulation(&state, params).await?,
            Err(e) => json!({ "status": "failed", "error": e.to_string() }),
        }
    } else {
        json!({ "status": "not_required" })
    };
    Ok(Json(json!({
        "estimate": render_estimate(&model, &decision.estimate),
        "routed": decision.routed,
        "triggering_outputs": decision.triggering_outputs,
        "simulation": simulation,
    }))
    .into_response())
}

async fn simulate(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let names = simulator::default_space().names();
    let x = parse_inputs(&body, &names, &state.space)?;
    let params = BuildingParams::from_slice(&x)?;
    let v = start_simulation(&state, params).await?;
    let status = if v["status"] == "pending" { StatusCode::ACCEPTED } else { StatusCode::OK };
    Ok((status, Json(v)).into_response())
}

async fn simulate_job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, "not-found", format!("unknown job `{id}`"));
    let n: u64 = id.parse().map_err(|_| not_found())?;
    let job = state.jobs.lock().expect("job table poisoned").jobs.get(&n).cloned();
    let job = job.ok_or_else(not_found)?;
    let mut v = serde_json::to_value(job).expect("job state serialises");
    v["job_id"] = json!(n);
    Ok(Json(v).into_response())
}

fn architecture(model: &ModelArtifact) -> Value {
    match &model.model {
        TrainedModel::Bnn(m) => json!(m.architecture),
        TrainedModel::Svgp(m) => json!({
            "kernel": m.config.kernel,
            "n_inducing": m.outputs.first().map_or(0, |o| o.n_inducing()),
            "include_noise": m.include_noise,
            "outputs": m.outputs.iter().map(|o| json!({
                "variance": o.kernel.variance,
                "lengthscales": o.kernel.lengthscales,
                "noise_variance": o.noise_variance,
            })).collect::<Vec<_>>(),
        }),
    }
}

async fn model_info(State(state): State<Arc<AppState>>) -> ApiResult {
    let model = state.model()?;
    let inputs: Vec<Value> = model
        .input_names()
        .iter()
        .map(|n| match state.space.params.iter().find(|p| &p.name == n) {
            Some(p) => json!({ "name": n, "lower": p.lower, "upper": p.upper, "unit": p.unit }),
            None => json!({ "name": n, "lower": null, "upper": null, "unit": "" }),
        })
        .collect();
    let outputs: Vec<Value> = model
        .output_names()
        .iter()
        .map(|n| json!({ "name": n, "unit": simulator::output_unit(n), "higher_is_better": simulator::higher_is_better(n) }))
        .collect();
    Ok(Json(json!({
        "model_id": model.model_id(),
        "kind": model.kind(),
        "architecture": architecture(&model),
        "inputs": inputs,
        "outputs": outputs,
        "threshold_policy": state.policy,
        "mc_samples": state.config.mc_samples,
        "simulate_latency_ms": state.config.simulate_latency.as_millis() as u64,
    }))
    .into_response())
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({
        "version": env!("CARGO_PKG_VERSION"),
        "model_loaded": state.model.is_some(),
        "model_id": state.model.as_ref().map(|m| m.model_id()),
    }))
}

pub fn app(state: Arc<AppState>) -> Router {
    let origin = match &state.config.cors_origin {
        Some(o) => HeaderValue::from_str(o).map_or_else(|_| AllowOrigin::any(), AllowOrigin::exact),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers(Any);
    Router::new()
        .route("/predict", post(predict))
        .route("/route", post(route))
        .route("/simulate", post(simulate))
        .route("/simulate/{id}", get(simulate_job))
        .route("/model", get(model_info))
        .route("/health", get(health))
        .layer(cors)
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app(state)).await?;
    Ok(())
}
