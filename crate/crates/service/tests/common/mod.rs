#![allow(dead_code)]

use std::net::{SocketAddr, TcpListener};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::http::StatusCode;
use axum::routing::post;
use axum::Router;
use serde_json::Value;
use sqlcritic_core::dataset::read_corpus;
use sqlcritic_core::EvalSample;
use sqlcritic_service::{server, Engine, ServiceConfig};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

pub fn fixture_config() -> ServiceConfig {
    ServiceConfig {
        db_root: fixtures().join("databases"),
        ..ServiceConfig::default()
    }
}

/// The bundled batch, with databases still given by id.
pub fn fixture_batch() -> Vec<EvalSample> {
    read_corpus(&fixtures().join("batch.jsonl")).expect("fixture batch")
}

fn spawn_router(router: Router) -> SocketAddr {
    let std_listener = TcpListener::bind("127.0.0.1:0").expect("bind");
    std_listener.set_nonblocking(true).expect("nonblocking");
    let addr = std_listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .expect("runtime");
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener");
            axum::serve(listener, router).await.expect("serve");
        });
    });
    addr
}

/// Starts the scoring service on an ephemeral port and returns its base URL.
pub fn spawn_service(cfg: ServiceConfig) -> String {
    let addr = spawn_router(server::router(Arc::new(Engine::new(cfg))));
    format!("http://{addr}")
}

/// A chat-completion endpoint answering every request with `reply(request)`,
/// given as (status, assistant text). Returns the API base URL.
pub fn spawn_chat_mock<F>(reply: F) -> String
where
    F: Fn(&Value) -> (u16, String) + Send + Sync + 'static,
{
    let reply = Arc::new(reply);
    let router = Router::new().route(
        "/v1/chat/completions",
        post(move |body: Bytes| {
            let reply = reply.clone();
            async move {
                let req: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
                let (status, text) = reply(&req);
                let body = serde_json::json!({
                    "choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]
                });
                (StatusCode::from_u16(status).unwrap(), body.to_string())
            }
        }),
    );
    format!("http://{}/v1", spawn_router(router))
}

/// The last user message of a chat request.
pub fn user_text(req: &Value) -> String {
    req["messages"]
        .as_array()
        .and_then(|m| m.iter().rev().find(|m| m["role"] == "user"))
        .and_then(|m| m["content"].as_str())
        .unwrap_or_default()
        .to_string()
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(60)))
        .build()
        .new_agent()
}

/// POSTs a raw body; returns the status and the raw response text.
pub fn post_raw(url: &str, body: &str) -> (u16, String) {
    let mut resp = agent()
        .post(url)
        .header("content-type", "application/json")
        .send(body)
        .expect("request");
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_to_string().expect("body"))
}

pub fn post_json(url: &str, body: &Value) -> (u16, Value) {
    let (status, text) = post_raw(url, &body.to_string());
    (status, serde_json::from_str(&text).expect("json response"))
}

pub fn get_json(url: &str) -> (u16, Value) {
    let mut resp = agent().get(url).call().expect("request");
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_json().expect("json"))
}

/// Strips the wall-clock part of a score response.
pub fn without_timing(mut v: Value) -> Value {
    if let Some(o) = v.as_object_mut() {
        o.remove("timing");
    }
    v
}

/// What the reward functions give for one sample when called directly,
/// without the scorer or the service in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Direct {
    pub verdict: Option<bool>,
    pub breakdown: Option<sqlcritic_core::RewardBreakdown>,
    pub inference: Option<sqlcritic_core::reward::InferenceReport>,
    pub r_verify: Option<u8>,
}

pub fn direct_score(
    sample: &EvalSample,
    mode: sqlcritic_core::RewardMode,
    exec: &sqlcritic_core::exec::SqlExecutor,
    judge: &dyn sqlcritic_core::judge::StepJudge,
) -> Direct {
    use sqlcritic_core::reward::{inference_report, total_reward, Variant};
    let mode = mode.normalized();
    let resp = sqlcritic_core::parse_critique(sample.critique_text.as_deref().expect("critique"));
    let judgments = (mode.variant != Variant::Ex && resp.format.valid)
        .then(|| sqlcritic_core::judge::judge_steps(sample, &resp, judge, 1).ok())
        .flatten();
    let r_verify = match (&resp.corrected_sql, resp.verdict) {
        (Some(corrected), Some(false)) if mode.variant == Variant::ExPrVc && resp.format.valid => exec
            .verify_correction(&sample.predicted_sql, corrected, &sample.db, sample.gold_sql.as_deref(), None)
            .ok(),
        _ => None,
    };
    Direct {
        verdict: resp.verdict.filter(|_| resp.format.valid),
        breakdown: sample
            .label
            .map(|_| total_reward(sample, &resp, judgments.as_deref(), r_verify, mode).expect("labeled")),
        inference: sample.label.is_none().then(|| inference_report(&resp, judgments.as_deref())),
        r_verify,
    }
}
