//! Hyperparameter sweep records and their CSV form.
//!
//! ```text
//! optimizer,architecture,class_balancing,learning_rate,weight_decay,accuracy,precision,recall,f1
//! adam,ResNet50,no,1e-4,1e-3,0.913,0.834,0.779,0.805
//! ```

use std::cmp::Ordering;
use std::fmt;
use std::io::{Read, Write};

use serde::Serialize;

use crate::{EvalError, Result};

pub const SWEEP_HEADER: [&str; 9] = [
    "optimizer",
    "architecture",
    "class_balancing",
    "learning_rate",
    "weight_decay",
    "accuracy",
    "precision",
    "recall",
    "f1",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

impl Optimizer {
    pub fn as_str(&self) -> &'static str {
        match self {
            Optimizer::Adam => "adam",
            Optimizer::Sgd => "sgd",
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(Optimizer::Adam),
            "sgd" => Ok(Optimizer::Sgd),
            other => Err(format!("unknown optimizer '{other}'")),
        }
    }
}

/// One trained configuration and its validation metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub optimizer: Optimizer,
    pub architecture: String,
    pub class_balancing: bool,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// The learning-rate and weight-decay values of the reference sweep.
pub struct SweepGrid;

impl SweepGrid {
    pub const LEARNING_RATES: [f64; 5] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
    pub const WEIGHT_DECAYS: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];

    fn on_grid(value: f64, grid: &[f64]) -> bool {
        grid.iter().any(|g| ((value - g) / g).abs() < 1e-9)
    }
}

impl RunRecord {
    /// Checks metric ranges and, with `strict_grid`, that the rates sit on
    /// the reference sweep grid.
    pub fn validate(&self, strict_grid: bool) -> std::result::Result<(), String> {
        if self.architecture.trim().is_empty() {
            return Err("empty architecture".into());
        }
        for (name, v) in [
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(format!("learning_rate = {} must be positive", self.learning_rate));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(format!("weight_decay = {} must be non-negative", self.weight_decay));
        }
        if strict_grid {
            if !SweepGrid::on_grid(self.learning_rate, &SweepGrid::LEARNING_RATES) {
                return Err(format!("learning_rate {:e} not on the sweep grid", self.learning_rate));
            }
            if !SweepGrid::on_grid(self.weight_decay, &SweepGrid::WEIGHT_DECAYS) {
                return Err(format!("weight_decay {:e} not on the sweep grid", self.weight_decay));
            }
        }
        Ok(())
    }

    /// Harmonic mean of precision and recall. Reported F1 values are
    /// usually rounded; this recovers ordering information lost there.
    pub fn pr_harmonic_mean(&self) -> f64 {
        let s = self.precision + self.recall;
        if s == 0.0 {
            0.0
        } else {
            2.0 * self.precision * self.recall / s
        }
    }

    /// Key shared by runs that differ only in architecture.
    pub(crate) fn hyper_key(&self) -> HyperKey {
        HyperKey {
            optimizer: self.optimizer,
            learning_rate: self.learning_rate.to_bits(),
            weight_decay: self.weight_decay.to_bits(),
            class_balancing: self.class_balancing,
        }
    }

    pub(crate) fn cmp_config(&self, other: &Self) -> Ordering {
        self.architecture
            .cmp(&other.architecture)
            .then(self.optimizer.cmp(&other.optimizer))
            .then(self.class_balancing.cmp(&other.class_balancing))
            .then(self.learning_rate.total_cmp(&other.learning_rate))
            .then(self.weight_decay.total_cmp(&other.weight_decay))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) struct HyperKey {
    pub optimizer: Optimizer,
    pub learning_rate: u64,
    pub weight_decay: u64,
    pub class_balancing: bool,
}

impl fmt::Display for HyperKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/lr={:e}/wd={:e}/balancing={}",
            self.optimizer,
            f64::from_bits(self.learning_rate),
            f64::from_bits(self.weight_decay),
            yes_no(self.class_balancing)
        )
    }
}

pub fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "yes" => Ok(true),
        "no" => Ok(false),
        other => Err(format!("class_balancing must be yes/no, got '{other}'")),
    }
}

fn parse_f64(name: &str, s: &str) -> std::result::Result<f64, String> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("{name}: cannot parse '{s}' as a number"))
}

/// Formats a rate in scientific notation, e.g. `1e-4`.
pub fn format_rate(v: f64) -> String {
    format!("{v:e}")
}

/// Parses a sweep CSV. Row numbers in errors are file line numbers.
pub fn read_runs<R: Read>(reader: R, strict_grid: bool) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != SWEEP_HEADER {
        return Err(EvalError::InvalidRun {
            row: 1,
            reason: format!("header must be '{}'", SWEEP_HEADER.join(",")),
        });
    }
    let mut runs = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |reason: String| EvalError::InvalidRun { row, reason };
        let field = |i: usize| rec.get(i).unwrap_or("");
        let run = RunRecord {
            optimizer: field(0).parse().map_err(bad)?,
            architecture: field(1).to_string(),
            class_balancing: parse_bool(field(2)).map_err(bad)?,
            learning_rate: parse_f64("learning_rate", field(3)).map_err(bad)?,
            weight_decay: parse_f64("weight_decay", field(4)).map_err(bad)?,
            accuracy: parse_f64("accuracy", field(5)).map_err(bad)?,
            precision: parse_f64("precision", field(6)).map_err(bad)?,
            recall: parse_f64("recall", field(7)).map_err(bad)?,
            f1: parse_f64("f1", field(8)).map_err(bad)?,
        };
        run.validate(strict_grid).map_err(bad)?;
        runs.push(run);
    }
    if runs.is_empty() {
        return Err(EvalError::NoRuns);
    }
    Ok(runs)
}

pub fn write_runs<W: Write>(runs: &[RunRecord], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(SWEEP_HEADER)?;
    for r in runs {
        wtr.write_record([
            r.optimizer.as_str().to_string(),
            r.architecture.clone(),
            yes_no(r.class_balancing).to_string(),
            format_rate(r.learning_rate),
            format_rate(r.weight_decay),
            r.accuracy.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.f1.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
