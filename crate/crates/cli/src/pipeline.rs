use std::path::Path;

use slidewatch_core::config::PipelineConfig;
use slidewatch_core::ingest::FeedDescriptor;
use slidewatch_core::pipeline::{run_pipeline, RunMode};
use tokio_util::sync::CancellationToken;

use crate::error::{CliError, CliResult};

pub fn run(config: &Path, drain: bool, feed: Option<String>, threshold_bits: Option<u32>) -> CliResult {
    let mut cfg = PipelineConfig::load(config).map_err(CliError::usage)?;
    if let Some(f) = feed {
        cfg.feed = f.parse::<FeedDescriptor>().map_err(CliError::usage)?;
    }
    if let Some(bits) = threshold_bits {
        cfg.dedup_threshold_bits = bits;
    }
    cfg.validate().map_err(CliError::usage)?;

    let rt = tokio::runtime::Runtime::new().map_err(CliError::runtime)?;
    let mode = if drain { RunMode::Drain } else { RunMode::Live };
    let result = rt.block_on(async {
        let cancel = CancellationToken::new();
        let on_signal = cancel.clone();
        tokio::spawn(async move {
            if tokio::signal::ctrl_c().await.is_ok() {
                eprintln!("interrupt received, shutting down");
                on_signal.cancel();
            }
        });
        run_pipeline(&cfg, mode, cancel).await
    });
    match result {
        Ok(stats) => {
            print!("{stats}");
            Ok(())
        }
        Err(e) => {
            if let Some(stats) = e.partial_stats() {
                print!("{stats}");
            }
            Err(CliError { code: e.exit_code(), message: e.to_string() })
        }
    }
}
