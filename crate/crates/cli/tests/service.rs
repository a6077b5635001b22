use std::sync::Arc;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use surrogate_cli::service::{app, AppState, ServiceConfig};
use surrogate_core::simulator::{self, Simulator};
use surrogate_core::{BnnArchitecture, BnnModel, ModelArtifact, ThresholdPolicy, TrainConfig, TrainedModel};
use tower::ServiceExt;

fn tiny_model() -> ModelArtifact {
    let space = simulator::default_space();
    let ds = simulator::generate_dataset(&space, 60, 5, &Simulator::default()).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let m = BnnModel::init(BnnArchitecture::new(10, 6).with_hidden(vec![8]), 5)
        .unwrap()
        .train(&ds, &cfg)
        .unwrap();
    ModelArtifact::new(TrainedModel::Bnn(m), Some(space))
}

fn service(model: Option<ModelArtifact>, config: ServiceConfig) -> Router {
    app(Arc::new(AppState::new(model, config)))
}

fn fixed() -> ServiceConfig {
    ServiceConfig {
        fixed_seed: Some(7),
        mc_samples: 10,
        ..ServiceConfig::default()
    }
}

fn midpoint_inputs() -> Value {
    let space = simulator::default_space();
    let obj: serde_json::Map<String, Value> = space
        .params
        .iter()
        .map(|p| (p.name.clone(), json!(p.midpoint())))
        .collect();
    json!({ "inputs": obj })
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), 1 << 20).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn predict_in_bounds_returns_every_output() {
    let app = service(Some(tiny_model()), fixed());
    let (status, body) = call(&app, "POST", "/predict", Some(midpoint_inputs())).await;
    assert_eq!(status, StatusCode::OK);
    let outputs = body["outputs"].as_object().unwrap();
    assert_eq!(outputs.len(), 6);
    for v in outputs.values() {
        assert!(v["mean"].is_f64());
        assert!(v["std"].as_f64().unwrap() >= 0.0);
        assert_eq!(v["unit"], "MWh/yr");
    }
    assert_eq!(body["mc_samples"], 10);
    assert!(body["model_id"].as_str().unwrap().starts_with("bnn-"));
}

#[tokio::test]
async fn predict_is_reproducible_with_fixed_seed() {
    let app = service(Some(tiny_model()), fixed());
    let (_, a) = call(&app, "POST", "/predict", Some(midpoint_inputs())).await;
    let (_, b) = call(&app, "POST", "/predict", Some(midpoint_inputs())).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn out_of_bounds_input_is_rejected_by_name() {
    let app = service(Some(tiny_model()), fixed());
    let mut body = midpoint_inputs();
    body["inputs"]["u_wall"] = json!(5.0);
    let (status, resp) = call(&app, "POST", "/predict", Some(body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(resp["error"]["field"], "u_wall");
    assert!(resp["error"]["message"].as_str().unwrap().contains("u_wall"));
}

#[tokio::test]
async fn missing_model_gives_503() {
    let app = service(None, fixed());
    let (status, _) = call(&app, "POST", "/predict", Some(midpoint_inputs())).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    let (status, health) = call(&app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health["model_loaded"], false);
}

#[tokio::test]
async fn zero_threshold_routes_and_simulates() {
    let mut model = tiny_model();
    model.threshold_policy = Some(ThresholdPolicy::uniform(&simulator::output_names(), 0.0));
    let app = service(Some(model), fixed());
    let (status, body) = call(&app, "POST", "/route", Some(midpoint_inputs())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["routed"], true);
    assert!(!body["triggering_outputs"].as_array().unwrap().is_empty());
    assert_eq!(body["simulation"]["status"], "done");
    let expected = simulator::simulate(
        &simulator::BuildingParams::midpoint(),
        &simulator::BuildingConstants::default(),
    )
    .unwrap();
    assert_eq!(body["simulation"]["outputs"]["pv_generation"].as_f64().unwrap(), expected.pv_generation);
}

#[tokio::test]
async fn infinite_threshold_does_not_route() {
    let app = service(
        Some(tiny_model()),
        ServiceConfig {
            threshold: Some(f64::MAX),
            ..fixed()
        },
    );
    let (_, body) = call(&app, "POST", "/route", Some(midpoint_inputs())).await;
    assert_eq!(body["routed"], false);
    assert_eq!(body["simulation"]["status"], "not_required");
}

#[tokio::test]
async fn slow_simulation_becomes_a_pollable_job() {
    let app = service(
        None,
        ServiceConfig {
            simulate_latency: Duration::from_millis(150),
            async_threshold: Duration::from_millis(10),
            ..fixed()
        },
    );
    let (status, body) = call(&app, "POST", "/simulate", Some(midpoint_inputs())).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(body["status"], "pending");
    let id = body["job_id"].as_u64().unwrap();
    let uri = format!("/simulate/{id}");
    let mut last = Value::Null;
    for _ in 0..100 {
        let (s, b) = call(&app, "GET", &uri, None).await;
        assert_eq!(s, StatusCode::OK);
        last = b;
        if last["status"] == "done" {
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    assert_eq!(last["status"], "done");
    assert!(last["outputs"]["heating_demand"].as_f64().unwrap() > 0.0);
    let (s, _) = call(&app, "GET", "/simulate/999999", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn fast_simulation_answers_inline_and_round_trips_floats() {
    let app = service(None, fixed());
    let (status, body) = call(&app, "POST", "/simulate", Some(midpoint_inputs())).await;
    assert_eq!(status, StatusCode::OK);
    let expected = simulator::simulate(
        &simulator::BuildingParams::midpoint(),
        &simulator::BuildingConstants::default(),
    )
    .unwrap();
    assert_eq!(body["outputs"]["heating_demand"].as_f64().unwrap(), expected.heating_demand);
    assert_eq!(body["outputs"]["fans"].as_f64().unwrap(), expected.fans);
}

#[tokio::test]
async fn model_endpoint_describes_space_and_policy() {
    let app = service(
        Some(tiny_model()),
        ServiceConfig {
            threshold: Some(1.5),
            ..fixed()
        },
    );
    let (status, body) = call(&app, "GET", "/model", None).await;
    assert_eq!(status, StatusCode::OK);
    let inputs = body["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 10);
    assert_eq!(inputs[0]["name"], "u_wall");
    assert_eq!(inputs[0]["lower"], 0.1);
    assert_eq!(inputs[0]["unit"], "W/m2K");
    assert_eq!(body["outputs"].as_array().unwrap().len(), 6);
    assert_eq!(body["threshold_policy"]["thresholds"][0], 1.5);
    assert_eq!(body["architecture"]["hidden_layers"], json!([8]));
}

#[tokio::test]
async fn cors_headers_are_present() {
    let app = service(None, fixed());
    let req = Request::builder()
        .method("GET")
        .uri("/health")
        .header("origin", "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert!(resp.headers().contains_key("access-control-allow-origin"));
}
