use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use slidewatch_core::store::{export_geojson as to_geojson, MemoryStore, QueryFilter, QueryParams};
use slidewatch_eval::{balanced_manifest, fleiss_kappa, manifest_stats as stats_of, AnnotationMatrix, Label, LabeledManifest, Split};

use crate::error::{CliError, CliResult};

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn load_manifest(path: &Path) -> CliResult<LabeledManifest> {
    LabeledManifest::from_csv(open(path)?).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

/// Opens `path` for writing, or stdout when absent.
fn sink(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::runtime(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

pub fn kappa(path: &Path) -> CliResult {
    let m = AnnotationMatrix::from_csv(open(path)?).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    println!("items       {}", m.items());
    println!("raters      {}", m.raters());
    println!("categories  {}", m.categories());
    println!("kappa       {:.4}", fleiss_kappa(&m));
    Ok(())
}

pub fn balance(path: &Path, split: &str, seed: u64, output: Option<&Path>) -> CliResult {
    let split: Split = split.parse().map_err(CliError::usage)?;
    let m = load_manifest(path)?;
    let b = balanced_manifest(&m, split, seed).map_err(CliError::usage)?;
    let mut out = sink(output)?;
    b.write_csv(&mut out).map_err(CliError::runtime)?;
    out.flush().map_err(CliError::runtime)?;
    eprintln!(
        "{}: {} landslide, {} not_landslide, {} entries (seed {seed})",
        split.as_str(),
        b.count(Label::Landslide),
        b.count(Label::NotLandslide),
        b.entries.len()
    );
    Ok(())
}

pub fn manifest_stats(path: &Path) -> CliResult {
    print!("{}", stats_of(&load_manifest(path)?));
    Ok(())
}

pub fn export_geojson(store: &Path, params: &QueryParams, output: Option<&Path>) -> CliResult {
    let filter = QueryFilter::parse(params).map_err(CliError::usage)?;
    let store = MemoryStore::load_log(store).map_err(|e| CliError::usage(format!("{}: {e}", store.display())))?;
    let fc = to_geojson(&store, &filter);
    let mut out = sink(output)?;
    serde_json::to_writer_pretty(&mut out, &fc).map_err(CliError::runtime)?;
    writeln!(out).and_then(|_| out.flush()).map_err(CliError::runtime)?;
    eprintln!(
        "{} features, {} excluded without location",
        fc["features"].as_array().map_or(0, Vec::len),
        fc["excluded_count"]
    );
    Ok(())
}
