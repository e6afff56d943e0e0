use std::collections::BTreeMap;
use std::path::Path;

use slidewatch_eval::{metrics_from_confusion, ConfusionMatrix, Label};

use crate::error::{CliError, CliResult};
use crate::table;

/// Reads `id,label` pairs by header name; other columns are ignored.
pub fn read_labels(path: &Path) -> CliResult<BTreeMap<String, Label>> {
    let ctx = |e: &dyn std::fmt::Display| CliError::usage(format!("{}: {e}", path.display()));
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| ctx(&e))?;
    let headers = rdr.headers().map_err(|e| ctx(&e))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| ctx(&format_args!("missing '{name}' column")))
    };
    let (id_col, label_col) = (col("id")?, col("label")?);
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| ctx(&e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec.get(id_col).unwrap_or("").to_string();
        let label: Label = rec
            .get(label_col)
            .unwrap_or("")
            .parse()
            .map_err(|e: String| ctx(&format_args!("line {line}: {e}")))?;
        if id.is_empty() {
            return Err(ctx(&format_args!("line {line}: empty id")));
        }
        if out.insert(id.clone(), label).is_some() {
            return Err(ctx(&format_args!("line {line}: duplicate id '{id}'")));
        }
    }
    Ok(out)
}

fn sample(ids: &[&String]) -> String {
    let shown: Vec<&str> = ids.iter().take(5).map(|s| s.as_str()).collect();
    let more = if ids.len() > 5 { format!(", ... ({} more)", ids.len() - 5) } else { String::new() };
    format!("{}{more}", shown.join(", "))
}

pub fn confusion(pred: &BTreeMap<String, Label>, truth: &BTreeMap<String, Label>) -> CliResult<ConfusionMatrix> {
    let only_pred: Vec<&String> = pred.keys().filter(|k| !truth.contains_key(*k)).collect();
    let only_truth: Vec<&String> = truth.keys().filter(|k| !pred.contains_key(*k)).collect();
    if !only_pred.is_empty() || !only_truth.is_empty() {
        let mut msg = String::from("prediction and ground-truth ids differ");
        if !only_pred.is_empty() {
            msg += &format!("\n  {} only in predictions: {}", only_pred.len(), sample(&only_pred));
        }
        if !only_truth.is_empty() {
            msg += &format!("\n  {} only in ground truth: {}", only_truth.len(), sample(&only_truth));
        }
        return Err(CliError::usage(msg));
    }
    Ok(ConfusionMatrix::from_pairs(pred.iter().map(|(id, p)| (p.is_positive(), truth[id].is_positive()))))
}

pub fn run(predictions: &Path, ground_truth: &Path) -> CliResult {
    let pred = read_labels(predictions)?;
    let truth = read_labels(ground_truth)?;
    let cm = confusion(&pred, &truth)?;
    let m = metrics_from_confusion(&cm).map_err(CliError::usage)?.rounded(3);
    print!(
        "{}",
        table::render(
            &["", "actual landslide", "actual not_landslide"],
            &[
                vec!["predicted landslide".into(), cm.tp.to_string(), cm.fp.to_string()],
                vec!["predicted not_landslide".into(), cm.fn_.to_string(), cm.tn.to_string()],
            ],
        )
    );
    println!();
    print!(
        "{}",
        table::render(
            &["metric", "value"],
            &[
                vec!["accuracy".into(), format!("{:.3}", m.accuracy)],
                vec!["precision".into(), format!("{:.3}", m.precision)],
                vec!["recall".into(), format!("{:.3}", m.recall)],
                vec!["f1".into(), format!("{:.3}", m.f1)],
            ],
        )
    );
    Ok(())
}
