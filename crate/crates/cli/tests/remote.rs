use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use axum::routing::post;
use axum::{Json, Router};
use edgecache::config::{BackendKind, SystemConfig};
use edgecache::dispatch::DispatchMode;
use edgecache::dispatch::{GenerationResponse, Txt2ImgRequest};
use edgecache::embedding::{EmbedKind, EmbedRequest, EmbedResponse, EmbedderBackend};
use edgecache::pipeline::Engine;
use edgecache_cli::remote::{backends, RemoteEmbedder};

type Calls = Arc<Mutex<Vec<String>>>;

/// Embeds by text length into four dimensions; stores nothing.
async fn mock(calls: Calls) -> String {
    let c1 = calls.clone();
    let app = Router::new()
        .route(
            "/embed",
            post(move |Json(req): Json<EmbedRequest>| {
                let calls = c1.clone();
                async move {
                    calls.lock().unwrap().push(format!("embed:{:?}", req.kind));
                    let n = req.data.len() as f64;
                    let bias = if req.kind == EmbedKind::Image { 0.1 } else { 0.0 };
                    Json(EmbedResponse {
                        vector: vec![3.0 + bias, n % 7.0, 1.0, 0.5],
                    })
                }
            }),
        )
        .route(
            "/txt2img",
            post(move |Json(req): Json<Txt2ImgRequest>| {
                let calls = calls.clone();
                async move {
                    calls.lock().unwrap().push(format!("txt2img:{}", req.steps));
                    Json(GenerationResponse {
                        payload_uri: format!("remote/{}.png", req.prompt.len()),
                    })
                }
            }),
        );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(async move { axum::serve(listener, app).await });
    base
}

#[tokio::test(flavor = "multi_thread")]
async fn remote_embedder_normalizes_and_checks_width() {
    let calls = Calls::default();
    let base = mock(calls.clone()).await;
    let (ok, wrong) = tokio::task::spawn_blocking(move || {
        let ok = RemoteEmbedder::new(base.clone(), 4).embed_text("hello").unwrap();
        let wrong = RemoteEmbedder::new(base, 8).embed_image(b"\x00\x01").unwrap_err();
        (ok, wrong)
    })
    .await
    .unwrap();
    let norm: f64 = ok.values().iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-12);
    assert!(wrong.to_string().contains("expected 8"));
    assert_eq!(*calls.lock().unwrap(), ["embed:Text", "embed:Image"]);
}

#[tokio::test(flavor = "multi_thread")]
async fn engine_runs_on_remote_backends() {
    let calls = Calls::default();
    let base = mock(calls.clone()).await;
    let mut cfg = SystemConfig {
        dim: 4,
        ..SystemConfig::default()
    };
    cfg.embedder.backend = BackendKind::Remote;
    cfg.embedder.url = Some(base.clone());
    cfg.generator.backend = BackendKind::Remote;
    cfg.generator.url = Some(format!("{base}/"));
    let outcome = tokio::task::spawn_blocking(move || {
        let mut engine = Engine::new(cfg.clone(), BTreeMap::new(), backends(&cfg).unwrap()).unwrap();
        engine.handle("a quiet harbor", false).unwrap().0
    })
    .await
    .unwrap();
    assert_eq!(outcome.mode, DispatchMode::TextToImage);
    assert_eq!(outcome.payload_uri, "remote/14.png");
    assert_eq!(*calls.lock().unwrap(), ["embed:Text", "txt2img:50"]);
}
