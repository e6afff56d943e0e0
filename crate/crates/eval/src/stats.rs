use std::fmt;
use std::str::FromStr;

/// Which standard deviation estimator a report uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StdKind {
    /// Divide by `n`.
    #[default]
    Population,
    /// Divide by `n - 1` (Bessel's correction).
    Sample,
}

impl FromStr for StdKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "population" => Ok(Self::Population),
            "sample" => Ok(Self::Sample),
            other => Err(format!("unknown std kind '{other}' (expected population|sample)")),
        }
    }
}

impl fmt::Display for StdKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Population => "population",
            Self::Sample => "sample",
        })
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Standard deviation of `values`. A sample estimate over fewer than two
/// values is reported as 0.
pub fn std_dev(values: &[f64], kind: StdKind) -> f64 {
    let n = values.len();
    let denom = match kind {
        StdKind::Population if n >= 1 => n as f64,
        StdKind::Sample if n >= 2 => (n - 1) as f64,
        _ => return 0.0,
    };
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / denom).sqrt()
}

/// Rounds to `decimals` places with ties going up (away from zero for
/// positive values).
///
/// Binary floating point cannot represent most decimal ties exactly, so a
/// scaled value within a few ULPs of `.5` counts as a tie.
pub fn round_half_up(value: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let scaled = value * scale;
    let floor = scaled.floor();
    let frac = scaled - floor;
    let tol = scaled.abs().max(1.0) * 4.0 * f64::EPSILON;
    let rounded = if frac + tol >= 0.5 { floor + 1.0 } else { floor };
    rounded / scale
}
