//! End-to-end behaviour of the `intervene` binary.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use intervene_core::adapters::TokenEmbedder;
use intervene_core::domain::{BinaryMask, DatasetManifest};
use intervene_core::engine::{ArtifactStore, RunResult};
use intervene_core::metrics::report::{compute_report, LocalizationInput};
use intervene_core::ontology::query::{top_k_concepts, Ranking};
use intervene_core::ontology::{build_graph, import_turtle};

const SEED: &str = "7";
const BIN: &str = env!("CARGO_BIN_EXE_intervene");

fn intervene(root: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("OCCAM_CACHE_DIR", root.join("cache"))
        .current_dir(root)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A synthetic dataset of `n` scenes at `<root>/data`.
fn synth(root: &Path, n: usize) -> PathBuf {
    let dir = root.join("data");
    let n = n.to_string();
    ok(&intervene(root, &["fixtures", "synth", "--dir", dir.to_str().unwrap(), "--n", &n, "--seed", SEED]));
    dir.join("manifest.json")
}

fn run(root: &Path, manifest: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--manifest", manifest.to_str().unwrap(), "--seed", SEED];
    if !extra.contains(&"--backends") {
        args.extend(["--backends", "synthetic"]);
    }
    args.extend_from_slice(extra);
    intervene(root, &args)
}

fn run_dir(root: &Path, id: &str) -> PathBuf {
    root.join("cache").join("runs").join(id)
}

#[test]
fn identical_invocations_write_identical_manifests() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ma, mb) = (synth(a.path(), 8), synth(b.path(), 8));
    ok(&run(a.path(), &ma, &["--workers", "1"]));
    ok(&run(b.path(), &mb, &["--workers", "3"]));
    let read = |root: &Path| std::fs::read(run_dir(root, "run").join("run.json")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert!(run_dir(a.path(), "run").join("resolved-config.run.json").exists());
}

#[test]
fn missing_backend_is_an_actionable_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 2);
    let out = intervene(dir.path(), &["run", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("no backend endpoint configured for operator 'propose'"), "{err}");
    assert!(err.contains("--backends"), "{err}");
}

#[test]
fn image_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 4);
    std::fs::remove_file(dir.path().join("data/images/scene-0002.png")).unwrap();
    let out = run(dir.path(), &manifest, &[]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let run = RunResult::load(&run_dir(dir.path(), "run").join("run.json")).unwrap();
    assert_eq!(run.n_failed_images, 1);
}

#[test]
fn metrics_match_a_library_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 10);
    ok(&run(dir.path(), &manifest, &[]));
    let rd = run_dir(dir.path(), "run");
    ok(&intervene(dir.path(), &["metrics", "--run", rd.to_str().unwrap()]));

    let run = RunResult::load(&rd.join("run.json")).unwrap();
    let m = DatasetManifest::load(&manifest).unwrap();
    let mut gt = std::collections::BTreeMap::new();
    for e in &m.images {
        let masks = e
            .gt_masks
            .iter()
            .map(|g| {
                let bytes = std::fs::read(m.resolve(&g.mask_path)).unwrap();
                (g.label.clone(), BinaryMask::decode_png(&bytes).unwrap())
            })
            .collect();
        gt.insert(e.image_id.clone(), masks);
    }
    let store = ArtifactStore::at(&rd);
    let load = |r: &intervene_core::domain::EvidenceRecord| store.read_mask(&r.mask_ref).map_err(|e| e.to_string());
    let embedder = TokenEmbedder::default();
    let expected = compute_report(
        &run,
        Some(LocalizationInput {
            gt_masks: &gt,
            load_mask: &load,
            embedder: &embedder,
            min_similarity: None,
        }),
    )
    .unwrap();
    assert_eq!(std::fs::read_to_string(rd.join("metrics.json")).unwrap(), expected.to_json());
    assert!(expected.localization.is_some());
    for f in ["metrics_causal.csv", "metrics_records.csv", "metrics_localization.csv"] {
        assert!(rd.join(f).exists(), "{f}");
    }
}

#[test]
fn metrics_without_gt_masks_omit_localization() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 4);
    let mut m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    for e in m["images"].as_array_mut().unwrap() {
        e["gt_masks"] = serde_json::json!([]);
    }
    let bare = dir.path().join("data/bare.json");
    std::fs::write(&bare, m.to_string()).unwrap();
    ok(&run(dir.path(), &bare, &[]));
    let rd = run_dir(dir.path(), "run");
    ok(&intervene(dir.path(), &["metrics", "--run", rd.to_str().unwrap()]));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(rd.join("metrics.json")).unwrap()).unwrap();
    assert!(json.get("localization").is_none());
    assert!(json["causal"]["images"].as_array().is_some_and(|c| !c.is_empty()));
    assert!(!rd.join("metrics_localization.csv").exists());
}

#[test]
fn metrics_on_an_empty_run_fail() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 2);
    std::fs::remove_dir_all(dir.path().join("data/images")).unwrap();
    assert_eq!(run(dir.path(), &manifest, &[]).status.code(), Some(2));
    let rd = run_dir(dir.path(), "run");
    let out = intervene(dir.path(), &["metrics", "--run", rd.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

/// Synthetic run plus its graph; returns the graph path.
fn graph(root: &Path, n: usize) -> (PathBuf, PathBuf) {
    let manifest = synth(root, n);
    ok(&run(root, &manifest, &[]));
    let rd = run_dir(root, "run");
    let out = ok(&intervene(root, &["ontology", "build", "--run", rd.to_str().unwrap()]));
    assert!(out.contains("violations=0"), "{out}");
    (manifest, rd.join("graph.ttl"))
}

#[test]
fn built_graphs_validate_and_merge() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, g) = graph(dir.path(), 6);
    ok(&intervene(dir.path(), &["ontology", "validate", g.to_str().unwrap()]));

    ok(&run(dir.path(), &manifest, &["--run-id", "second"]));
    let rd2 = run_dir(dir.path(), "second");
    ok(&intervene(dir.path(), &["ontology", "build", "--run", rd2.to_str().unwrap()]));
    let merged = dir.path().join("merged.ttl");
    ok(&intervene(
        dir.path(),
        &["ontology", "merge", g.to_str().unwrap(), rd2.join("graph.ttl").to_str().unwrap(), "--output", merged.to_str().unwrap()],
    ));
    ok(&intervene(dir.path(), &["ontology", "validate", merged.to_str().unwrap()]));

    let bad = dir.path().join("bad.ttl");
    let text = std::fs::read_to_string(&g).unwrap();
    // An evidence node pointing at an image through the concept edge.
    let broken = text.replacen("ov:evidenceOfImage <", "ov:evidenceOfConcept <", 1);
    assert_ne!(broken, text);
    std::fs::write(&bad, broken).unwrap();
    assert_eq!(intervene(dir.path(), &["ontology", "validate", bad.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn top_k_query_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (_, g) = graph(dir.path(), 12);
    let graph = import_turtle(BufReader::new(std::fs::File::open(&g).unwrap())).unwrap();
    let class = intervene_core::ontology::query::classes(&graph)[0].clone();
    let out = ok(&intervene(
        dir.path(),
        &["query", "top-k", "--graph", g.to_str().unwrap(), "--class", &class, "--k", "2", "--json"],
    ));
    let expected = top_k_concepts(&graph, &class, 2, Ranking::MeanCdp).unwrap();
    let got: Vec<intervene_core::ontology::RankedConcept> = serde_json::from_str(&out).unwrap();
    assert_eq!(got, expected);

    let table = ok(&intervene(dir.path(), &["query", "classes", "--graph", g.to_str().unwrap()]));
    assert_eq!(table.lines().next(), Some("class"));
}

#[test]
fn unknown_query_lists_the_available_ones() {
    let dir = tempfile::tempdir().unwrap();
    let (_, g) = graph(dir.path(), 3);
    let out = intervene(dir.path(), &["query", "most-red", "--graph", g.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("available queries") && err.contains("top-k") && err.contains("cooccurrence"), "{err}");
}

#[test]
fn report_writes_three_settings() {
    let dir = tempfile::tempdir().unwrap();
    let (_, g) = graph(dir.path(), 12);
    let graph = import_turtle(BufReader::new(std::fs::File::open(&g).unwrap())).unwrap();
    let class = intervene_core::ontology::query::classes(&graph)[0].clone();
    let out_dir = dir.path().join("payloads");
    let out = ok(&intervene(
        dir.path(),
        &["report", "--graph", g.to_str().unwrap(), "--class", &class, "--out-dir", out_dir.to_str().unwrap()],
    ));
    assert_eq!(out.lines().count(), 3);
    for f in ["unstructured.txt", "flat-json.json", "ontology.json"] {
        assert!(out_dir.join(&class).join(f).exists(), "{f}");
    }
}

#[test]
fn ablate_at_k_zero_reports_baseline_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, g) = graph(dir.path(), 12);
    let out = ok(&intervene(
        dir.path(),
        &[
            "ablate", "--manifest", manifest.to_str().unwrap(), "--graph", g.to_str().unwrap(), "--class", "*",
            "--k", "0", "--backends", "synthetic", "--seed", SEED,
        ],
    ));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "classifier,class,k,n_images,accuracy");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("synthetic:world,*,0,12,"), "{}", lines[1]);

    // Baseline equals plain accuracy of the recorded predictions.
    let run = RunResult::load(&run_dir(dir.path(), "run").join("run.json")).unwrap();
    let correct = run
        .images
        .iter()
        .filter(|o| o.predicted_class.as_ref().map(|p| &p.name) == o.gt_class.as_ref())
        .count();
    let acc: f64 = lines[1].rsplit(',').next().unwrap().parse().unwrap();
    assert!((acc - correct as f64 / 12.0).abs() < 1e-9);
}

#[test]
fn ablate_without_gt_class_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, g) = graph(dir.path(), 4);
    let mut m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    m["images"][1].as_object_mut().unwrap().remove("gt_class");
    let stripped = dir.path().join("data/no_class.json");
    std::fs::write(&stripped, m.to_string()).unwrap();
    let out = intervene(
        dir.path(),
        &["ablate", "--manifest", stripped.to_str().unwrap(), "--graph", g.to_str().unwrap(), "--class", "*", "--backends", "synthetic", "--seed", SEED],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("gt_class"), "{}", stderr(&out));
}

#[test]
fn recorded_fixtures_replay_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 5);
    let fx = dir.path().join("fx");
    ok(&intervene(
        dir.path(),
        &["fixtures", "record", "--manifest", manifest.to_str().unwrap(), "--dir", fx.to_str().unwrap(), "--backends", "synthetic", "--seed", SEED],
    ));
    ok(&run(dir.path(), &manifest, &["--run-id", "live"]));
    let backend = format!("fixture:{}", fx.display());
    let args = ["run", "--manifest", manifest.to_str().unwrap(), "--backends", &backend, "--seed", SEED, "--run-id", "live"];
    let other = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(other.path()).unwrap();
    ok(&intervene(other.path(), &args));
    let read = |root: &Path| {
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(run_dir(root, "live").join("run.json")).unwrap()).unwrap();
        v["config"]["endpoints"] = serde_json::Value::Null;
        v
    };
    assert_eq!(read(dir.path()), read(other.path()));
}

#[test]
fn replaying_a_snapshot_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 4);
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, r#"{"area_exclusion_pct": 90, "run_id": "cfg"}"#).unwrap();
    ok(&run(dir.path(), &manifest, &["--config", cfg.to_str().unwrap(), "--set", "epsilon=1e-7"]));
    let rd = run_dir(dir.path(), "cfg");
    let first = std::fs::read(rd.join("run.json")).unwrap();
    let snap = rd.join("resolved-config.run.json");
    let snapshot: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&snap).unwrap()).unwrap();
    assert_eq!(snapshot["config"]["area_exclusion_pct"], 90.0);
    assert_eq!(snapshot["config"]["epsilon"], 1e-7);
    assert_eq!(snapshot["config"]["rng_seed"], 7);

    std::fs::remove_file(rd.join("run.json")).unwrap();
    std::fs::remove_file(&cfg).unwrap();
    ok(&intervene(dir.path(), &["replay", snap.to_str().unwrap()]));
    assert_eq!(std::fs::read(rd.join("run.json")).unwrap(), first);
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(intervene(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(intervene(dir.path(), &["run"]).status.code(), Some(1));
    assert_eq!(intervene(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn conformance_passes_over_the_subprocess_transport() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 3);
    let backend = format!("subprocess:{BIN} serve --stdio --backends synthetic --seed {SEED}");
    let out = ok(&intervene(
        dir.path(),
        &["conformance", "--manifest", manifest.to_str().unwrap(), "--backends", &backend, "--seed", SEED],
    ));
    assert!(!out.contains("FAIL"), "{out}");
    assert!(out.contains("PASS\trecord-replay"), "{out}");
    assert!(out.contains("PASS\tground-absent"), "{out}");
}

#[test]
fn pipeline_over_the_http_server_matches_in_process() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 4);
    let mut server = Command::new(BIN)
        .args(["serve", "--http", "127.0.0.1:0", "--backends", "synthetic", "--seed", SEED])
        .env("OCCAM_CACHE_DIR", dir.path().join("server-cache"))
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").expect("address line").to_string();

    let conf = intervene(dir.path(), &["conformance", "--manifest", manifest.to_str().unwrap(), "--backends", &url, "--seed", SEED]);
    let http_run = run(dir.path(), &manifest, &["--backends", &url, "--run-id", "remote"]);
    server.kill().unwrap();
    let _ = server.wait();
    ok(&conf);
    ok(&http_run);
    // Evidence ids hash the run id, so the local run reuses it elsewhere.
    let local_root = dir.path().join("local");
    ok(&run(dir.path(), &manifest, &["--run-id", "remote", "--out", local_root.to_str().unwrap()]));

    let remote = RunResult::load(&run_dir(dir.path(), "remote").join("run.json")).unwrap();
    let local = RunResult::load(&local_root.join("runs/remote/run.json")).unwrap();
    assert_eq!(remote.images, local.images);
    assert_eq!(build_graph(&remote).unwrap().count(intervene_core::ontology::NodeKind::Evidence), remote.records().count());
}
