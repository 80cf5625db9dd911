use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context as _, Result};
use intervene_core::adapters::conformance::run_conformance;
use intervene_core::adapters::{Backends, FixtureStore, Recorder, TextEmbedder, TokenEmbedder};
use intervene_core::domain::{BinaryMask, DatasetManifest, ImageRecord};
use intervene_core::engine::{run_dataset, ArtifactStore, EngineOptions, RunResult, RunStatus, RUN_MANIFEST};
use intervene_core::metrics::report::{compute_report, write_reports, LocalizationInput};
use intervene_core::ontology::query::{self, Ranking, ALL_CLASSES};
use intervene_core::ontology::{build_graph, check_consistency, export_turtle, import_turtle, EvidenceGraph};
use intervene_core::reporting::{
    ablation_csv, build_payloads, post_payload, run_ablation, write_payloads, Setting, MAX_ABLATION_K,
};
use intervene_core::synthetic::{write_dataset, SyntheticWorld};
use serde::Serialize;
use serde_json::Value;

use crate::config::{Context, Snapshot, SNAPSHOT_SCHEMA_VERSION};
use crate::{Command, FixturesCommand, OntologyCommand, Outcome};

pub const GRAPH_FILE: &str = "graph.ttl";
pub const VIOLATIONS_FILE: &str = "violations.json";
pub const QUERIES: [&str; 6] = [
    "classes",
    "class-image-count",
    "class-concept-stats",
    "global-concept-stats",
    "cooccurrence",
    "top-k",
];

fn name_of(command: &Command) -> &'static str {
    match command {
        Command::Run { .. } => "run",
        Command::Metrics { .. } => "metrics",
        Command::Ontology(OntologyCommand::Build { .. }) => "ontology-build",
        Command::Ontology(OntologyCommand::Validate { .. }) => "ontology-validate",
        Command::Ontology(OntologyCommand::Merge { .. }) => "ontology-merge",
        Command::Query { .. } => "query",
        Command::Report { .. } => "report",
        Command::Ablate { .. } => "ablate",
        Command::Fixtures(FixturesCommand::Synth { .. }) => "fixtures-synth",
        Command::Fixtures(FixturesCommand::Record { .. }) => "fixtures-record",
        Command::Serve { .. } => "serve",
        Command::Conformance { .. } => "conformance",
        Command::Replay { .. } => "replay",
    }
}

/// Directory that receives the command's snapshot and, for most commands,
/// its outputs.
fn output_dir(ctx: &Context, command: &Command) -> PathBuf {
    let root = &ctx.output_root;
    match command {
        Command::Run { .. } => ArtifactStore::new(root, &ctx.config.run_id).run_dir().to_path_buf(),
        Command::Metrics { run_dir, out_dir, .. } => out_dir.clone().unwrap_or_else(|| run_dir.clone()),
        Command::Ontology(OntologyCommand::Build { run_dir, .. }) => run_dir.clone(),
        Command::Report { out_dir, .. } => out_dir.clone().unwrap_or_else(|| root.join("reports")),
        Command::Ablate { out_dir, class, .. } => out_dir.clone().unwrap_or_else(|| root.join("ablation").join(slug(class))),
        Command::Fixtures(FixturesCommand::Synth { dir, .. } | FixturesCommand::Record { dir, .. }) => dir.clone(),
        _ => root.join("snapshots"),
    }
}

fn slug(class: &str) -> String {
    if class == ALL_CLASSES {
        return "all".into();
    }
    class.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

pub fn execute(ctx: &Context, command: &Command) -> Result<Outcome> {
    if let Command::Replay { .. } = command {
        bail!("a snapshot cannot contain another replay");
    }
    let dir = output_dir(ctx, command);
    let snapshot = Snapshot {
        schema_version: SNAPSHOT_SCHEMA_VERSION,
        context: ctx.clone(),
        command: command.clone(),
    };
    let path = snapshot.write(&dir, name_of(command))?;
    log::info!("resolved config written to {}", path.display());

    match command {
        Command::Run { manifest } => cmd_run(ctx, manifest, &dir),
        Command::Metrics { run_dir, manifest, min_similarity, .. } => {
            cmd_metrics(ctx, run_dir, manifest.as_deref(), *min_similarity, &dir)
        }
        Command::Ontology(sub) => cmd_ontology(sub),
        Command::Query { name, graph, class, k, ranking, json } => {
            cmd_query(name, graph, class.as_deref(), *k, ranking, *json)
        }
        Command::Report { graph, class, settings, post, .. } => cmd_report(graph, class, settings, post.as_deref(), &dir),
        Command::Ablate { manifest, graph, class, ks, scope, classifier, .. } => {
            let label = classifier.clone().unwrap_or_else(|| {
                ctx.config.endpoints.classify.as_ref().map_or("unknown".into(), ToString::to_string)
            });
            cmd_ablate(ctx, manifest, graph, class, ks, *scope, &label, &dir)
        }
        Command::Fixtures(FixturesCommand::Synth { dir, n, first_scene }) => {
            let world = SyntheticWorld::new(ctx.config.rng_seed, ctx.config.synthetic.clone())?;
            let ds = write_dataset(&world, dir, *n, *first_scene)?;
            println!("{}", dir.join("manifest.json").display());
            log::info!("wrote {} scenes", ds.scenes.len());
            Ok(Outcome::Success)
        }
        Command::Fixtures(FixturesCommand::Record { manifest, dir }) => {
            let backends = Recorder::wrap(Backends::from_config(&ctx.config)?, FixtureStore::create(dir)?);
            let manifest = DatasetManifest::load(manifest)?;
            let opts = EngineOptions { workers: ctx.workers, artifacts: None };
            let run = run_dataset(&manifest, &ctx.config, &backends, &opts)?;
            println!("recorded {} images into {}", run.n_images, dir.display());
            Ok(run_outcome(&run))
        }
        Command::Serve { http, .. } => {
            let backends = Backends::from_config(&ctx.config)?;
            match http {
                Some(addr) => crate::serve::http(&backends, addr)?,
                None => crate::serve::stdio(&backends)?,
            }
            Ok(Outcome::Success)
        }
        Command::Conformance { manifest, limit, fixtures_dir } => {
            let fixtures = fixtures_dir.clone().unwrap_or_else(|| ctx.output_root.join("conformance"));
            cmd_conformance(ctx, manifest, *limit, &fixtures)
        }
        Command::Replay { .. } => unreachable!(),
    }
}

fn run_outcome(run: &RunResult) -> Outcome {
    match run.status {
        RunStatus::Complete => Outcome::Success,
        RunStatus::Partial | RunStatus::Degraded => Outcome::Degraded,
    }
}

fn cmd_run(ctx: &Context, manifest: &Path, run_dir: &Path) -> Result<Outcome> {
    let backends = Backends::from_config(&ctx.config)?;
    let manifest = DatasetManifest::load(manifest)?;
    let opts = EngineOptions {
        workers: ctx.workers,
        artifacts: Some(ArtifactStore::at(run_dir)),
    };
    let run = run_dataset(&manifest, &ctx.config, &backends, &opts)?;
    let c = &run.counters;
    println!(
        "{}\tstatus={}\timages={}\tfailed={}\trecords={}\tproposed={}",
        run_dir.join(RUN_MANIFEST).display(),
        serde_json::to_value(run.status)?.as_str().unwrap_or(""),
        run.n_images,
        run.n_failed_images,
        run.records().count(),
        c.proposed,
    );
    Ok(run_outcome(&run))
}

/// The manifest recorded in the run's own snapshot.
fn manifest_of_run(run_dir: &Path) -> Option<PathBuf> {
    let snap = Snapshot::load(&run_dir.join("resolved-config.run.json")).ok()?;
    match snap.command {
        Command::Run { manifest } => Some(manifest),
        _ => None,
    }
}

fn gt_masks(manifest: &DatasetManifest) -> Result<BTreeMap<String, BTreeMap<String, BinaryMask>>> {
    let mut out = BTreeMap::new();
    for entry in manifest.images.iter().filter(|e| !e.gt_masks.is_empty()) {
        let mut masks = BTreeMap::new();
        for gm in &entry.gt_masks {
            let path = manifest.resolve(&gm.mask_path);
            let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            masks.insert(gm.label.clone(), BinaryMask::decode_png(&bytes)?);
        }
        out.insert(entry.image_id.clone(), masks);
    }
    Ok(out)
}

fn cmd_metrics(
    ctx: &Context,
    run_dir: &Path,
    manifest: Option<&Path>,
    min_similarity: Option<f64>,
    out_dir: &Path,
) -> Result<Outcome> {
    let run = RunResult::load(&run_dir.join(RUN_MANIFEST))?;
    let manifest_path = manifest.map(Path::to_path_buf).or_else(|| manifest_of_run(run_dir));
    let gt = match &manifest_path {
        Some(p) => gt_masks(&DatasetManifest::load(p)?)?,
        None => BTreeMap::new(),
    };
    let embedder: Arc<dyn TextEmbedder> = match &ctx.config.endpoints.embed {
        Some(ep) => Backends::embedder_from(&ctx.config, ep)?,
        None => Arc::new(TokenEmbedder::default()),
    };
    let store = ArtifactStore::at(run_dir);
    let load_mask = |r: &intervene_core::domain::EvidenceRecord| store.read_mask(&r.mask_ref).map_err(|e| e.to_string());
    let localization = (!gt.is_empty()).then(|| LocalizationInput {
        gt_masks: &gt,
        load_mask: &load_mask,
        embedder: embedder.as_ref(),
        min_similarity,
    });
    let report = compute_report(&run, localization)?;
    for f in write_reports(&report, out_dir)? {
        println!("{}", f.display());
    }
    println!(
        "ADP={:.4}\tMDP={:.4}\tMAD={:.4}",
        report.mean_adp, report.mean_mdp, report.mean_mad
    );
    if let Some(l) = &report.localization {
        let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        println!("EPG={}\tNRA={}\tHitRate={}", fmt(l.mean_epg), fmt(l.mean_nra), fmt(l.hit_rate));
    }
    Ok(Outcome::Success)
}

fn load_graph(path: &Path) -> Result<EvidenceGraph> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    import_turtle(std::io::BufReader::new(file)).with_context(|| format!("importing {}", path.display()))
}

fn save_graph(g: &EvidenceGraph, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    export_turtle(g, &mut out)?;
    std::io::Write::flush(&mut out)?;
    Ok(())
}

fn print_violations(g: &EvidenceGraph) -> usize {
    let violations = check_consistency(g);
    for v in &violations {
        eprintln!("violation\t{}\t{}\t{}", serde_json::to_value(v.kind).unwrap_or_default(), v.subject, v.detail);
    }
    violations.len()
}

fn cmd_ontology(sub: &OntologyCommand) -> Result<Outcome> {
    match sub {
        OntologyCommand::Build { run_dir, output } => {
            let run = RunResult::load(&run_dir.join(RUN_MANIFEST))?;
            let g = build_graph(&run)?;
            let path = output.clone().unwrap_or_else(|| run_dir.join(GRAPH_FILE));
            save_graph(&g, &path)?;
            let violations = check_consistency(&g);
            let report = serde_json::to_string_pretty(&violations)? + "\n";
            std::fs::write(path.with_file_name(VIOLATIONS_FILE), report)?;
            println!("{}\tviolations={}", path.display(), violations.len());
            if !violations.is_empty() {
                print_violations(&g);
                bail!("built graph has {} consistency violations", violations.len());
            }
        }
        OntologyCommand::Validate { graph } => {
            let g = load_graph(graph)?;
            let n = print_violations(&g);
            println!("{}\tviolations={n}", graph.display());
            if n > 0 {
                bail!("{} has {n} consistency violations", graph.display());
            }
        }
        OntologyCommand::Merge { graphs, output } => {
            let mut merged = load_graph(&graphs[0])?;
            for p in &graphs[1..] {
                merged = merged.merge(&load_graph(p)?)?;
            }
            save_graph(&merged, output)?;
            println!("{}", output.display());
        }
    }
    Ok(Outcome::Success)
}

fn rows<T: Serialize>(items: &[T]) -> Vec<Value> {
    items.iter().map(|i| serde_json::to_value(i).expect("row serializes")).collect()
}

fn print_table(rows: &[Value]) {
    let Some(Value::Object(first)) = rows.first() else {
        return;
    };
    let keys: Vec<&String> = first.keys().collect();
    println!("{}", keys.iter().map(|k| k.as_str()).collect::<Vec<_>>().join("\t"));
    for row in rows {
        let cells: Vec<String> = keys
            .iter()
            .map(|k| match &row[k.as_str()] {
                Value::String(s) => s.clone(),
                v => v.to_string(),
            })
            .collect();
        println!("{}", cells.join("\t"));
    }
}

/// Runs a named query; the rows are what `query` prints.
pub fn query_rows(g: &EvidenceGraph, name: &str, class: Option<&str>, k: usize, ranking: &str) -> Result<Vec<Value>> {
    let need_class = || class.with_context(|| format!("query {name:?} needs --class"));
    Ok(match name {
        "classes" => query::classes(g).into_iter().map(|c| serde_json::json!({ "class": c })).collect(),
        "class-image-count" => {
            let c = need_class()?;
            vec![serde_json::json!({ "class": c, "n_images": query::class_image_count(g, c)? })]
        }
        "class-concept-stats" => rows(&query::class_concept_stats(g, need_class()?)?),
        "global-concept-stats" => rows(&query::global_concept_stats(g)),
        "cooccurrence" => rows(&query::concept_cooccurrence(g, need_class()?)?),
        "top-k" => {
            let ranking: Ranking = ranking.parse().map_err(anyhow::Error::msg)?;
            let c = need_class()?;
            if c == ALL_CLASSES {
                rows(&query::rank(&query::global_concept_stats(g), k, ranking)?)
            } else {
                rows(&query::top_k_concepts(g, c, k, ranking)?)
            }
        }
        other => bail!("unknown query {other:?}; available queries: {}", QUERIES.join(", ")),
    })
}

fn cmd_query(name: &str, graph: &Path, class: Option<&str>, k: usize, ranking: &str, json: bool) -> Result<Outcome> {
    if !QUERIES.contains(&name) {
        bail!("unknown query {name:?}; available queries: {}", QUERIES.join(", "));
    }
    let rows = query_rows(&load_graph(graph)?, name, class, k, ranking)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        print_table(&rows);
    }
    Ok(Outcome::Success)
}

fn cmd_report(graph: &Path, class: &str, settings: &[Setting], post: Option<&str>, dir: &Path) -> Result<Outcome> {
    let settings = if settings.is_empty() { &Setting::ALL[..] } else { settings };
    let payloads = build_payloads(&load_graph(graph)?, class, settings)?;
    for p in write_payloads(dir, &payloads)? {
        println!("{}", p.display());
    }
    if let Some(url) = post {
        for p in &payloads {
            post_payload(url, p)?;
        }
    }
    Ok(Outcome::Success)
}

#[allow(clippy::too_many_arguments)]
fn cmd_ablate(
    ctx: &Context,
    manifest: &Path,
    graph: &Path,
    class: &str,
    ks: &[usize],
    scope: intervene_core::reporting::RankingScope,
    classifier: &str,
    dir: &Path,
) -> Result<Outcome> {
    let manifest = DatasetManifest::load(manifest)?;
    let images = manifest
        .images
        .iter()
        .map(|e| manifest.load_image(e))
        .collect::<Result<Vec<ImageRecord>, _>>()?;
    let graph = load_graph(graph)?;
    let backends = Backends::from_config(&ctx.config)?;
    let ks: Vec<usize> = if ks.is_empty() { (0..=MAX_ABLATION_K).collect() } else { ks.to_vec() };
    let curve = run_ablation(
        &images,
        &backends,
        classifier,
        &graph,
        class,
        scope,
        &ks,
        ctx.config.mask_dim_mismatch_policy,
        ctx.workers,
    )?;
    std::fs::create_dir_all(dir)?;
    let csv = ablation_csv(&curve.points);
    std::fs::write(dir.join("ablation.csv"), &csv)?;
    std::fs::write(dir.join("ablation.json"), serde_json::to_string_pretty(&curve)? + "\n")?;
    print!("{}", String::from_utf8_lossy(&csv));
    let failed = curve.points.iter().any(|p| p.n_failed_images > 0);
    Ok(if failed { Outcome::Degraded } else { Outcome::Success })
}

fn cmd_conformance(ctx: &Context, manifest: &Path, limit: usize, fixtures: &Path) -> Result<Outcome> {
    let backends = Backends::from_config(&ctx.config)?;
    let manifest = DatasetManifest::load(manifest)?;
    let images = manifest
        .images
        .iter()
        .take(limit)
        .map(|e| manifest.load_image(e))
        .collect::<Result<Vec<ImageRecord>, _>>()?;
    let checks = run_conformance(&backends, &images, fixtures);
    for c in &checks {
        println!("{}\t{}\t{}\t{}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.image_id, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        bail!("{failed} of {} conformance checks failed", checks.len());
    }
    Ok(Outcome::Success)
}
