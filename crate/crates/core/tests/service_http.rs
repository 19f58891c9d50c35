use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tower::ServiceExt;

use sdfedit::editor::{EditorConfig, EditorParams};
use sdfedit::numerics::Tensor;
use sdfedit::regressor::{train_regressor, RegressorConfig};
use sdfedit::sdfnet::{Decoder, DecoderConfig};
use sdfedit::service::{router, CatalogEntry, ServiceLimits, SessionState, CONFIG_HASH_HEADER};

fn state() -> Arc<SessionState> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let decoder = Decoder::new(
        DecoderConfig {
            latent_dim: 4,
            hidden_width: 16,
            num_layers: 3,
            skip_layer: None,
            bands: 2,
            ..Default::default()
        },
        &mut rng,
    )
    .unwrap();
    let z: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| rng.gen_range(-0.1..0.1)).collect()).collect();
    let y: Vec<Vec<f64>> = z.iter().map(|z| vec![0.5 + z[0], 0.5 - z[1]]).collect();
    let ids: Vec<String> = (0..10).map(|i| format!("car{i}")).collect();
    let rcfg = RegressorConfig {
        hidden: vec![8, 8, 4],
        epochs: 10,
        ..Default::default()
    };
    let (reg, _) = train_regressor(&ids, &z, &y, &["height".into(), "width".into()], &rcfg).unwrap();
    let ecfg = EditorConfig {
        mlp_hidden: 8,
        ..Default::default()
    };
    let mut editor = EditorParams::new(&ecfg, &reg.attribute_names, &[0.0; 4], &[0.05; 4]).unwrap();
    for p in editor.store.params_mut() {
        p.value = Tensor::randn(p.value.shape(), 0.3, &mut rng);
    }
    let catalog = ids
        .iter()
        .zip(&z)
        .take(3)
        .map(|(id, z)| CatalogEntry {
            id: id.clone(),
            name: id.clone(),
            latent: z.clone(),
        })
        .collect();
    Arc::new(SessionState::new(decoder, reg, editor, catalog, ServiceLimits::default(), "cafe".into()))
}

async fn call(s: &Arc<SessionState>, method: Method, uri: &str, body: Option<&str>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let resp = router(s.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, headers, bytes.to_vec())
}

fn json(b: &[u8]) -> Value {
    serde_json::from_slice(b).unwrap()
}

#[tokio::test]
async fn health_and_catalog() {
    let s = state();
    let (st, h, b) = call(&s, Method::GET, "/health", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(h[CONFIG_HASH_HEADER], "cafe");
    assert_eq!(json(&b)["config_hash"], "cafe");
    let (st, _, b) = call(&s, Method::GET, "/shapes", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(json(&b)["shapes"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn edit_then_fetch_mesh() {
    let s = state();
    let (st, _, b) = call(&s, Method::POST, "/edit", Some(r#"{"shape_id":"car1","eps":{"height":0.5}}"#)).await;
    assert_eq!(st, StatusCode::OK);
    let v = json(&b);
    let id = v["latent_id"].as_str().unwrap();
    assert_ne!(v["source_latent_id"].as_str().unwrap(), id);

    let (st, h, bin) = call(&s, Method::GET, &format!("/latents/{id}/mesh?res=8&format=bin"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(h["content-type"], "application/octet-stream");
    let nv = u32::from_le_bytes(bin[0..4].try_into().unwrap()) as usize;
    let nt = u32::from_le_bytes(bin[4..8].try_into().unwrap()) as usize;
    assert_eq!(bin.len(), 8 + 12 * nv + 12 * nt);

    let (st, _, b) = call(&s, Method::GET, "/shapes/car0/mesh?res=8", None).await;
    assert_eq!(st, StatusCode::OK);
    let m = json(&b);
    assert_eq!(m["vertices"].as_array().unwrap().len(), 3 * m["vertex_count"].as_u64().unwrap() as usize);
}

#[tokio::test]
async fn error_statuses() {
    let s = state();
    let cases = [
        (Method::GET, "/shapes/nope/mesh", None, StatusCode::NOT_FOUND),
        (Method::GET, "/latents/00/mesh", None, StatusCode::NOT_FOUND),
        (Method::GET, "/shapes/car0/mesh?res=abc", None, StatusCode::BAD_REQUEST),
        (Method::GET, "/shapes/car0/mesh?res=100000", None, StatusCode::BAD_REQUEST),
        (Method::POST, "/edit", Some("{not json"), StatusCode::BAD_REQUEST),
        (Method::POST, "/edit", Some(r#"{"shape_id":"car0","eps":{"height":2}}"#), StatusCode::BAD_REQUEST),
        (Method::POST, "/edit", Some(r#"{"shape_id":"car0","eps":{"colour":0.1}}"#), StatusCode::BAD_REQUEST),
    ];
    for (m, uri, body, want) in cases {
        let (st, h, b) = call(&s, m, uri, body).await;
        assert_eq!(st, want, "{uri} {body:?}");
        assert_eq!(h[CONFIG_HASH_HEADER], "cafe", "{uri}");
        let v = json(&b);
        assert_eq!(v["config_hash"], "cafe", "{uri}");
        assert!(v["error"]["message"].is_string(), "{uri}");
    }
}

#[tokio::test]
async fn cors_preflight_allowed() {
    let s = state();
    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/edit")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let resp = router(s).oneshot(req).await.unwrap();
    assert!(resp.status().is_success());
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
}
