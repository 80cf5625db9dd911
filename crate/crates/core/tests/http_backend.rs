//! The HTTP transport against an in-process server that dispatches to the
//! synthetic backends.

use std::sync::Arc;

use intervene_core::adapters::conformance::run_conformance;
use intervene_core::adapters::{protocol, Backends, Grounding};
use intervene_core::domain::{normalize_concept, Endpoints, MaskDimPolicy, OperatorEndpoint, RunConfig};
use intervene_core::engine::{run_images, EngineOptions};
use intervene_core::synthetic::{SceneParams, SyntheticWorld};

const SEED: u64 = 5;

/// Serves the protocol on an ephemeral port until the process exits.
fn serve(backends: Backends) -> String {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let addr = server.server_addr().to_ip().unwrap();
    std::thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            let op = req.url().trim_start_matches('/').to_string();
            let reply = match serde_json::from_str(&body) {
                Ok(v) => protocol::dispatch(&backends, &op, v),
                Err(e) => serde_json::json!({ "error": e.to_string() }),
            };
            let status = if reply.get("error").is_some() { 422 } else { 200 };
            let _ = req.respond(tiny_http::Response::from_string(reply.to_string()).with_status_code(status));
        }
    });
    format!("http://{addr}")
}

fn world() -> Arc<SyntheticWorld> {
    Arc::new(SyntheticWorld::new(SEED, SceneParams::default()).unwrap())
}

fn http_config(url: &str) -> RunConfig {
    RunConfig {
        rng_seed: SEED,
        endpoints: Endpoints::all(url.parse::<OperatorEndpoint>().unwrap()),
        ..RunConfig::default()
    }
}

#[test]
fn pipeline_over_http_matches_the_in_process_run() {
    let w = world();
    let url = serve(Backends::synthetic(w.clone()));
    let images: Vec<_> = (0..6).map(|i| w.generate_record(i, &format!("img{i}")).unwrap().1).collect();
    let config = http_config(&url);
    let remote = Backends::from_config(&config).unwrap();
    let opts = EngineOptions { workers: 4, artifacts: None };
    let over_http = run_images(&images, &config, &remote, &opts).unwrap();
    let local = run_images(&images, &config, &Backends::synthetic(w), &opts).unwrap();
    assert_eq!(over_http.to_json(), local.to_json());
    assert!(over_http.records().count() > 0);
}

#[test]
fn absent_concepts_get_a_failure_reply() {
    let w = world();
    let url = serve(Backends::synthetic(w.clone()));
    let remote = Backends::from_config(&http_config(&url)).unwrap();
    let (_, img) = w.generate_record(1, "a").unwrap();
    let g = remote
        .ground_concept(&img, &normalize_concept("purple hexagon").unwrap(), MaskDimPolicy::Error)
        .unwrap();
    assert_eq!(g, Grounding::Failure);
}

#[test]
fn error_replies_surface_as_backend_errors() {
    let url = serve(Backends::synthetic(world()));
    let resp = ureq::post(&format!("{url}/paint"))
        .config()
        .http_status_as_error(false)
        .build()
        .send("{}")
        .unwrap();
    assert_eq!(resp.status(), 422);
    let remote = Backends::from_config(&http_config(&url)).unwrap();
    assert!(remote.embed_text("net").is_ok());
    // A foreign image makes the synthetic classifier fail server-side.
    let odd = intervene_core::domain::ImageRecord::new(
        "odd",
        intervene_core::domain::RgbImage::filled(4, 4, [1, 2, 3]).unwrap(),
    )
    .unwrap();
    let err = remote.classify(&odd).unwrap_err();
    assert!(err.to_string().contains("backend"), "{err}");
}

#[test]
fn conformance_suite_passes_over_http() {
    let w = world();
    let url = serve(Backends::synthetic(w.clone()));
    let remote = Backends::from_config(&http_config(&url)).unwrap();
    let images: Vec<_> = (0..3).map(|i| w.generate_record(40 + i, &format!("c{i}")).unwrap().1).collect();
    let dir = tempfile::tempdir().unwrap();
    let checks = run_conformance(&remote, &images, dir.path());
    let failed: Vec<_> = checks.iter().filter(|c| !c.pass).collect();
    assert!(failed.is_empty(), "{failed:#?}");
    assert!(checks.iter().any(|c| c.name == "record-replay"));
    assert!(dir.path().join("c0").join("propose.json").exists());
}
