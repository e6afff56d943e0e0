#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use axum::extract::Path as UrlPath;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Media, weights, gazetteer and feed template shared with the core tests.
pub fn pipeline_fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

pub fn slidewatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slidewatch")).args(args).output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

async fn media(UrlPath(name): UrlPath<String>) -> Response {
    match std::fs::read(pipeline_fixtures().join("media").join(&name)) {
        Ok(b) if !name.contains("..") => b.into_response(),
        _ => StatusCode::NOT_FOUND.into_response(),
    }
}

/// Serves the fixture media on a background runtime for as long as the
/// value lives.
pub struct MediaServer {
    pub base: String,
    _rt: tokio::runtime::Runtime,
}

pub fn media_server() -> MediaServer {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    rt.spawn(async move { axum::serve(listener, Router::new().route("/media/{name}", get(media))).await });
    MediaServer { base, _rt: rt }
}

/// Writes the drain feed and a config using the embedded backend into
/// `dir`, returning the config path. The store is `dir/det.jsonl`.
pub fn drain_config(dir: &Path, base: &str) -> PathBuf {
    let fx = pipeline_fixtures();
    let tmpl = std::fs::read_to_string(fx.join("drain_feed.jsonl.tmpl")).unwrap();
    std::fs::write(dir.join("feed.jsonl"), tmpl.replace("{base}", base)).unwrap();
    let cfg = format!(
        "[feed]\nsource = \"file://feed.jsonl\"\n\n[backend]\nkind = \"embedded_reference\"\nweights = \"{}\"\n\n\
         [geo]\ngazetteer = \"{}\"\n\n[store]\npath = \"det.jsonl\"\n",
        fx.join("weights.json").display(),
        fx.join("gazetteer.tsv").display()
    );
    let path = dir.join("pipeline.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

/// Parses the `name  value` lines printed by `run`.
pub fn parse_stats(text: &str) -> std::collections::BTreeMap<String, u64> {
    text.lines()
        .filter_map(|l| {
            let mut it = l.split_whitespace();
            Some((it.next()?.to_string(), it.next()?.parse().ok()?))
        })
        .collect()
}

/// Writes an `id,label` CSV.
pub fn write_labels(path: &Path, rows: &[(String, &str)]) {
    let mut text = String::from("id,label\n");
    for (id, label) in rows {
        text += &format!("{id},{label}\n");
    }
    std::fs::write(path, text).unwrap();
}

pub type LabelRows = Vec<(String, &'static str)>;

/// Prediction and truth rows realizing the given confusion counts.
pub fn confusion_rows(tp: usize, fp: usize, fn_: usize, tn: usize) -> (LabelRows, LabelRows) {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    let mut push = |n: usize, p: &'static str, t: &'static str| {
        for _ in 0..n {
            let id = format!("img{:05}", pred.len());
            pred.push((id.clone(), p));
            truth.push((id, t));
        }
    };
    push(tp, "landslide", "landslide");
    push(fp, "landslide", "not_landslide");
    push(fn_, "not_landslide", "landslide");
    push(tn, "not_landslide", "not_landslide");
    (pred, truth)
}
