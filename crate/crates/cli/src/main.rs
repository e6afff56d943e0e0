//! `slidewatch`: run the detection pipeline and evaluate classifiers.
//!
//! Exit status is 0 on success, 1 on runtime failure and 2 on usage or
//! validation errors.

mod error;
mod evaluate;
mod pipeline;
mod report;
mod table;
mod toolkit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use slidewatch_eval::StdKind;

#[derive(Debug, Parser)]
#[command(name = "slidewatch", version, about = "Landslide image detection pipeline and evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the detection pipeline from a config file.
    Run {
        config: PathBuf,
        /// Process the feed to completion and exit instead of running until
        /// interrupted.
        #[arg(long)]
        drain: bool,
        /// Override the feed (file://PATH or tcp://HOST:PORT).
        #[arg(long)]
        feed: Option<String>,
        /// Override the duplicate threshold in bits.
        #[arg(long, value_name = "N")]
        threshold_bits: Option<u32>,
    },
    /// Compare predicted labels with ground truth.
    Evaluate {
        /// CSV with `id` and `label` columns.
        predictions: PathBuf,
        /// CSV with `id` and `label` columns.
        ground_truth: PathBuf,
    },
    /// Leaderboard, architecture ranking, effect tables and win counts for a
    /// sweep CSV.
    SweepReport {
        sweep: PathBuf,
        #[arg(long, value_name = "N", default_value_t = 10)]
        top_k: usize,
        #[arg(long, value_name = "KIND", default_value_t = StdKind::Population)]
        std: StdKind,
        /// Directory for the CSV outputs; defaults to the input's directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Require learning rates and weight decays from the reference grid.
        #[arg(long)]
        strict_grid: bool,
    },
    /// Fleiss' kappa of an items x categories count matrix.
    Kappa { matrix: PathBuf },
    /// Oversample the minority class of one split.
    BalanceManifest {
        manifest: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long, value_name = "N", default_value_t = 0)]
        seed: u64,
        /// Write here instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Per-split source and label counts of a manifest.
    ManifestStats { manifest: PathBuf },
    /// Export stored detections as GeoJSON.
    ExportGeojson {
        store: PathBuf,
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        since: Option<String>,
        #[arg(long)]
        until: Option<String>,
        /// minLon,minLat,maxLon,maxLat
        #[arg(long, allow_hyphen_values = true)]
        bbox: Option<String>,
        #[arg(long)]
        min_prob: Option<String>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

fn dispatch(cmd: Command) -> error::CliResult {
    match cmd {
        Command::Run { config, drain, feed, threshold_bits } => pipeline::run(&config, drain, feed, threshold_bits),
        Command::Evaluate { predictions, ground_truth } => evaluate::run(&predictions, &ground_truth),
        Command::SweepReport { sweep, top_k, std, out_dir, strict_grid } => {
            report::run(&sweep, top_k, std, out_dir.as_deref(), strict_grid)
        }
        Command::Kappa { matrix } => toolkit::kappa(&matrix),
        Command::BalanceManifest { manifest, split, seed, output } => {
            toolkit::balance(&manifest, &split, seed, output.as_deref())
        }
        Command::ManifestStats { manifest } => toolkit::manifest_stats(&manifest),
        Command::ExportGeojson { store, label, since, until, bbox, min_prob, output } => {
            let params = slidewatch_core::store::QueryParams { label, since, until, bbox, min_prob };
            toolkit::export_geojson(&store, &params, output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
