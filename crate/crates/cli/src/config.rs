//! Configuration resolution and resolved-config snapshots.
//!
//! Precedence, lowest first: built-in defaults, the `--config` JSON file,
//! `--set key=value` overrides in order, then the dedicated flags
//! (`--seed`, `--run-id`, `--backends`).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use intervene_core::domain::{EndpointKind, Endpoints, OperatorEndpoint, RunConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::Command;

pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;
pub const CACHE_ENV: &str = "OCCAM_CACHE_DIR";
const DEFAULT_CACHE_DIR: &str = "occam-cache";

/// Everything a subcommand reads besides its own arguments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub output_root: PathBuf,
    pub workers: usize,
    pub config: RunConfig,
}

/// A subcommand plus its context; enough to re-execute it alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub schema_version: u32,
    #[serde(flatten)]
    pub context: Context,
    pub command: Command,
}

impl Snapshot {
    pub fn load(path: &Path) -> Result<Snapshot> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let snap: Snapshot =
            serde_json::from_str(&text).with_context(|| format!("{} is not a resolved-config snapshot", path.display()))?;
        if snap.schema_version != SNAPSHOT_SCHEMA_VERSION {
            bail!("{}: unsupported snapshot schema_version {}", path.display(), snap.schema_version);
        }
        Ok(snap)
    }

    /// Writes `<dir>/resolved-config.<name>.json`.
    pub fn write(&self, dir: &Path, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(format!("resolved-config.{name}.json"));
        let mut text = serde_json::to_string_pretty(self).expect("snapshot serializes");
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn abs_path(s: &str) -> Result<PathBuf, String> {
    std::path::absolute(s).map_err(|e| format!("{s}: {e}"))
}

pub fn default_output_root() -> Result<PathBuf> {
    let raw = std::env::var_os(CACHE_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR));
    Ok(std::path::absolute(&raw)?)
}

/// Recursive object merge; non-object values replace.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

/// Applies one `a.b.c=value` override. The value is read as JSON when it
/// parses, as a string otherwise; `endpoints.<op>` also takes the backend
/// shorthand (`synthetic`, `fixture:<dir>`, ...).
fn apply_set(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .with_context(|| format!("--set expects key=value, got {assignment:?}"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("--set: malformed key {key:?}");
    }
    let mut value = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    if path.len() == 2 && path[0] == "endpoints" {
        if let Value::String(s) = &value {
            let ep: OperatorEndpoint = s.parse()?;
            value = serde_json::to_value(ep)?;
        }
    }
    let mut cursor = root;
    for (i, part) in path.iter().enumerate() {
        let Value::Object(map) = cursor else {
            bail!("--set {key}: {:?} is not an object", path[..i].join("."));
        };
        cursor = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    *cursor = value;
    Ok(())
}

/// Rejects keys RunConfig does not know, which serde would otherwise drop.
fn check_keys(value: &Value, reference: &Value, prefix: &str) -> Result<()> {
    let (Value::Object(v), Value::Object(r)) = (value, reference) else {
        return Ok(());
    };
    for (k, child) in v {
        let name = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match r.get(k) {
            Some(rc) => check_keys(child, rc, &name)?,
            // Endpoint slots are absent from the defaults.
            None if prefix == "endpoints" && intervene_core::adapters::protocol::OPERATIONS.contains(&k.as_str()) => {}
            None => bail!("unknown configuration key {name:?}"),
        }
    }
    Ok(())
}

#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub file: Option<PathBuf>,
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub run_id: Option<String>,
    pub backends: Option<String>,
}

pub fn resolve(o: &Overrides) -> Result<RunConfig> {
    let defaults = serde_json::to_value(RunConfig::default()).expect("config serializes");
    let mut value = defaults.clone();
    if let Some(path) = &o.file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let file: Value =
            serde_json::from_str(&text).with_context(|| format!("config {} is not JSON", path.display()))?;
        check_keys(&file, &defaults, "").with_context(|| format!("config {}", path.display()))?;
        merge(&mut value, file);
    }
    for s in &o.sets {
        apply_set(&mut value, s)?;
    }
    check_keys(&value, &defaults, "")?;
    let mut config: RunConfig = serde_json::from_value(value).context("invalid configuration")?;
    if let Some(seed) = o.seed {
        config.rng_seed = seed;
    }
    if let Some(id) = &o.run_id {
        config.run_id = id.clone();
    }
    if let Some(spec) = &o.backends {
        config.endpoints = Endpoints::all(spec.parse()?);
    }
    absolutize_fixtures(&mut config.endpoints)?;
    config.validate()?;
    Ok(config)
}

/// Fixture locators become absolute so snapshots replay from any directory.
fn absolutize_fixtures(eps: &mut Endpoints) -> Result<()> {
    for ep in [&mut eps.propose, &mut eps.ground, &mut eps.edit, &mut eps.classify, &mut eps.embed]
        .into_iter()
        .flatten()
    {
        if ep.kind == EndpointKind::Fixture {
            ep.locator = std::path::absolute(&ep.locator)?.display().to_string();
        }
    }
    Ok(())
}
