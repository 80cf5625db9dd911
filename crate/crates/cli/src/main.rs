//! `intervene`: interventional concept attribution from the command line.
//!
//! Exit codes: 0 on full success, 2 when some images failed (partial or
//! degraded runs, ablation failures), 1 on errors.

mod commands;
mod config;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use intervene_core::reporting::{RankingScope, Setting};
use serde::{Deserialize, Serialize};

use config::{abs_path, Context, Overrides};

#[derive(Debug, Parser)]
#[command(name = "intervene", version, about = "Interventional concept attribution", disable_help_subcommand = true)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// JSON configuration file.
    #[arg(long, global = true, value_parser = abs_path)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `area_exclusion_pct=95` or `endpoints.ground=fixture:fx`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output root; defaults to $OCCAM_CACHE_DIR, then ./occam-cache.
    #[arg(long, global = true, value_parser = abs_path)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    run_id: Option<String>,
    /// One backend for every operator: synthetic, fixture:<dir>,
    /// subprocess:<command> or http://<host:port>.
    #[arg(long, global = true)]
    backends: Option<String>,
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Run the pipeline over a dataset manifest.
    Run {
        #[arg(long, value_parser = abs_path)]
        manifest: PathBuf,
    },
    /// Causal and localization metrics for a run directory.
    Metrics {
        #[arg(long = "run", value_parser = abs_path)]
        run_dir: PathBuf,
        /// Manifest with ground-truth masks; defaults to the one the run used.
        #[arg(long, value_parser = abs_path)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        min_similarity: Option<f64>,
        /// Defaults to the run directory.
        #[arg(long, value_parser = abs_path)]
        out_dir: Option<PathBuf>,
    },
    /// Build, validate or merge evidence graphs.
    #[command(subcommand)]
    Ontology(OntologyCommand),
    /// Run a named graph query and print a table.
    Query {
        name: String,
        #[arg(long, value_parser = abs_path)]
        graph: PathBuf,
        #[arg(long)]
        class: Option<String>,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value = "mean-cdp")]
        ranking: String,
        /// Print JSON instead of a tab-separated table.
        #[arg(long)]
        json: bool,
    },
    /// Knowledge payloads for one class.
    Report {
        #[arg(long, value_parser = abs_path)]
        graph: PathBuf,
        #[arg(long)]
        class: String,
        /// Repeatable; all three settings when omitted.
        #[arg(long = "setting")]
        settings: Vec<Setting>,
        /// Also POST every payload to this URL.
        #[arg(long)]
        post: Option<String>,
        #[arg(long, value_parser = abs_path)]
        out_dir: Option<PathBuf>,
    },
    /// Accuracy after removing the k least influential top concepts.
    Ablate {
        #[arg(long, value_parser = abs_path)]
        manifest: PathBuf,
        #[arg(long, value_parser = abs_path)]
        graph: PathBuf,
        /// Class to ablate, or `*` for the classifier-wide ranking over all images.
        #[arg(long)]
        class: String,
        /// Repeatable; 0 through 3 when omitted.
        #[arg(long = "k")]
        ks: Vec<usize>,
        #[arg(long, default_value = "per-class")]
        scope: RankingScope,
        /// Label for the classifier column; defaults to the classify endpoint.
        #[arg(long)]
        classifier: Option<String>,
        #[arg(long, value_parser = abs_path)]
        out_dir: Option<PathBuf>,
    },
    /// Synthetic datasets and fixture recording.
    #[command(subcommand)]
    Fixtures(FixturesCommand),
    /// Serve the configured backends over the wire protocol.
    Serve {
        /// JSON lines on stdin/stdout.
        #[arg(long, conflicts_with = "http", required_unless_present = "http")]
        stdio: bool,
        /// Listen address, e.g. 127.0.0.1:8080 (port 0 picks a free one).
        #[arg(long)]
        http: Option<String>,
    },
    /// Protocol conformance checks against the configured backends.
    Conformance {
        #[arg(long, value_parser = abs_path)]
        manifest: PathBuf,
        /// Number of manifest images to check.
        #[arg(long, default_value_t = 3)]
        limit: usize,
        /// Where the record/replay check writes fixtures.
        #[arg(long, value_parser = abs_path)]
        fixtures_dir: Option<PathBuf>,
    },
    /// Re-execute a command from its resolved-config snapshot.
    Replay {
        #[arg(value_parser = abs_path)]
        snapshot: PathBuf,
    },
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OntologyCommand {
    /// Turtle graph plus consistency report for a run directory.
    Build {
        #[arg(long = "run", value_parser = abs_path)]
        run_dir: PathBuf,
        /// Defaults to <run>/graph.ttl.
        #[arg(long, value_parser = abs_path)]
        output: Option<PathBuf>,
    },
    /// Check a Turtle graph; exits 1 when it has violations.
    Validate {
        #[arg(value_parser = abs_path)]
        graph: PathBuf,
    },
    /// Union of several graphs.
    Merge {
        #[arg(required = true, num_args = 2.., value_parser = abs_path)]
        graphs: Vec<PathBuf>,
        #[arg(long, value_parser = abs_path)]
        output: PathBuf,
    },
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixturesCommand {
    /// Write a synthetic dataset (images, ground-truth masks, manifest).
    Synth {
        #[arg(long, value_parser = abs_path)]
        dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        n: usize,
        /// First scene seed; scenes use consecutive seeds.
        #[arg(long, default_value_t = 0)]
        first_scene: u64,
    },
    /// Run the pipeline while recording every backend reply as fixtures,
    /// replayable with `--backends fixture:<dir>`.
    Record {
        #[arg(long, value_parser = abs_path)]
        manifest: PathBuf,
        #[arg(long, value_parser = abs_path)]
        dir: PathBuf,
    },
}

/// Successful command completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Finished, but some images failed.
    Degraded,
}

fn context(g: &Global) -> anyhow::Result<Context> {
    let overrides = Overrides {
        file: g.config.clone(),
        sets: g.sets.clone(),
        seed: g.seed,
        run_id: g.run_id.clone(),
        backends: g.backends.clone(),
    };
    Ok(Context {
        output_root: match &g.out {
            Some(p) => p.clone(),
            None => config::default_output_root()?,
        },
        workers: g.workers.filter(|&w| w > 0).unwrap_or_else(intervene_core::exec::default_workers),
        config: config::resolve(&overrides)?,
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Replay { snapshot } => config::Snapshot::load(&snapshot).and_then(|s| commands::execute(&s.context, &s.command)),
        command => context(&cli.global).and_then(|ctx| commands::execute(&ctx, &command)),
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Degraded) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
