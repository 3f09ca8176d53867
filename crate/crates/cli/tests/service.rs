use std::collections::BTreeMap;

use edgecache::config::SystemConfig;
use edgecache::pipeline::Engine;
use edgecache_cli::service::{serve, AppState, GenerateResponse, MaintainResponse, Metrics};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

struct Server {
    base: String,
    stop: Option<oneshot::Sender<()>>,
    handle: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl Server {
    async fn start(config: SystemConfig) -> Self {
        let engine = Engine::local(config, BTreeMap::new()).unwrap();
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = oneshot::channel();
        let handle = tokio::spawn(serve(listener, AppState::new(engine), async {
            let _ = rx.await;
        }));
        Server {
            base,
            stop: Some(tx),
            handle,
        }
    }

    async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let url = format!("{}{path}", self.base);
        tokio::task::spawn_blocking(move || {
            let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
            let mut resp = agent.post(&url).send_json(&body).unwrap();
            let status = resp.status().as_u16();
            (status, resp.body_mut().read_json::<Value>().unwrap())
        })
        .await
        .unwrap()
    }

    async fn get(&self, path: &str) -> Value {
        let url = format!("{}{path}", self.base);
        tokio::task::spawn_blocking(move || ureq::get(&url).call().unwrap().body_mut().read_json::<Value>().unwrap())
            .await
            .unwrap()
    }

    async fn stop(mut self) {
        self.stop.take().unwrap().send(()).unwrap();
        self.handle.await.unwrap().unwrap();
    }
}

#[tokio::test]
async fn empty_cache_generates_then_reuses_history() {
    let server = Server::start(SystemConfig::default()).await;
    let body = json!({"prompt": "a red sports car parked on a wet street at night"});

    let (status, first) = server.post("/generate", body.clone()).await;
    assert_eq!(status, 200);
    let first: GenerateResponse = serde_json::from_value(first).unwrap();
    assert_eq!(first.mode.as_str(), "text_to_image");
    assert_eq!(first.node, "edge-4090d");

    let (_, second) = server.post("/generate", body).await;
    assert_eq!(second["mode"], "return_cached");
    assert_eq!(second["reason"], "history_reuse");
    assert_eq!(second["payload_uri"], json!(first.payload_uri));

    let metrics: Metrics = serde_json::from_value(server.get("/metrics").await).unwrap();
    assert_eq!(metrics.requests, 2);
    assert_eq!(metrics.hit_rate, 0.5);
    assert_eq!(metrics.entries.values().sum::<usize>(), 1);
    server.stop().await;
}

#[tokio::test]
async fn maintain_under_budget_evicts_nothing() {
    let server = Server::start(SystemConfig::default()).await;
    server.post("/generate", json!({"prompt": "a lighthouse in fog"})).await;
    let (status, body) = server.post("/maintain", json!({})).await;
    assert_eq!(status, 200);
    let report: MaintainResponse = serde_json::from_value(body).unwrap();
    assert_eq!(report.evicted, 0);
    assert_eq!(report.run, 1);
    server.stop().await;
}

#[tokio::test]
async fn maintain_over_budget_evicts_to_budget() {
    let mut cfg = SystemConfig::default();
    cfg.maintenance.c_max = 3;
    cfg.maintenance.period = 1000;
    let server = Server::start(cfg).await;
    for prompt in [
        "volcano erupting at dawn",
        "kitten asleep in a teacup",
        "neon city skyline in rain",
        "medieval knight on horseback",
        "coral reef with turtles",
        "desert caravan under stars",
    ] {
        let (_, out) = server.post("/generate", json!({ "prompt": prompt })).await;
        assert_eq!(out["mode"], "text_to_image", "{prompt}");
    }
    let (_, body) = server.post("/maintain", json!({})).await;
    assert_eq!(body["evicted"], 3);
    let metrics = server.get("/metrics").await;
    assert_eq!(metrics["evicted"], 3);
    server.stop().await;
}

#[tokio::test]
async fn bad_requests_get_structured_errors() {
    let server = Server::start(SystemConfig::default()).await;
    let (status, body) = server.post("/generate", json!({"prompt": "   "})).await;
    assert_eq!(status, 400);
    assert_eq!(body["error"]["code"], "empty_prompt");

    let (status, body) = server.post("/generate", json!({"text": "wrong field"})).await;
    assert_eq!(status, 400);
    assert_eq!(body["error"]["code"], "invalid_body");
    assert!(body["error"]["message"].as_str().unwrap().contains("prompt"));
    server.stop().await;
}

#[tokio::test]
async fn quality_flag_regenerates_on_fastest_node() {
    let server = Server::start(SystemConfig::default()).await;
    let body = json!({"prompt": "portrait of an old fisherman"});
    server.post("/generate", body.clone()).await;
    let (_, again) = server
        .post(
            "/generate",
            json!({"prompt": "portrait of an old fisherman", "quality": true}),
        )
        .await;
    assert_eq!(again["mode"], "text_to_image");
    assert_eq!(again["reason"], "quality_priority");
    assert_eq!(again["node"], "edge-4090d");
    server.stop().await;
}
