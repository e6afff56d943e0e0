//! Fleiss' kappa for a fixed number of raters per item.

use std::io::Read;

use crate::{EvalError, Result};

/// Items × categories count table: `counts[i][j]` raters put item `i` in
/// category `j`. Every row sums to the same rater count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationMatrix {
    counts: Vec<Vec<u64>>,
    raters: u64,
}

impl AnnotationMatrix {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let first = counts
            .first()
            .ok_or_else(|| EvalError::InvalidAnnotations("no items".into()))?;
        let k = first.len();
        if k < 2 {
            return Err(EvalError::InvalidAnnotations(format!(
                "need at least 2 categories, got {k}"
            )));
        }
        let raters: u64 = first.iter().sum();
        if raters < 2 {
            return Err(EvalError::InvalidAnnotations(format!(
                "need at least 2 raters per item, got {raters}"
            )));
        }
        for (i, row) in counts.iter().enumerate() {
            if row.len() != k {
                return Err(EvalError::InvalidAnnotations(format!(
                    "item {i} has {} categories, expected {k}",
                    row.len()
                )));
            }
            let sum: u64 = row.iter().sum();
            if sum != raters {
                return Err(EvalError::InvalidAnnotations(format!(
                    "item {i} row sums to {sum}, expected {raters}"
                )));
            }
        }
        Ok(Self { counts, raters })
    }

    /// Reads a headerless CSV of non-negative integer counts, one item per
    /// row. A leading non-numeric row is treated as a header and skipped.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut counts = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parsed: std::result::Result<Vec<u64>, _> =
                rec.iter().map(|f| f.parse::<u64>()).collect();
            match parsed {
                Ok(row) => counts.push(row),
                Err(_) if i == 0 => continue,
                Err(e) => {
                    return Err(EvalError::InvalidAnnotations(format!(
                        "row {}: {e}",
                        i + 1
                    )))
                }
            }
        }
        Self::new(counts)
    }

    pub fn items(&self) -> usize {
        self.counts.len()
    }

    pub fn categories(&self) -> usize {
        self.counts[0].len()
    }

    pub fn raters(&self) -> u64 {
        self.raters
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }
}

/// Fleiss' kappa, `(P̄ − P̄e) / (1 − P̄e)`.
///
/// When every assignment falls in a single category, chance agreement is 1
/// and the ratio is undefined; that case returns exactly 1.0.
pub fn fleiss_kappa(m: &AnnotationMatrix) -> f64 {
    let n = m.raters as f64;
    let items = m.items() as f64;
    let k = m.categories();

    let mut category_totals = vec![0u64; k];
    let mut agreement_sum = 0.0;
    for row in &m.counts {
        let sq: u64 = row.iter().map(|&c| c * c).sum();
        agreement_sum += (sq - m.raters) as f64 / (n * (n - 1.0));
        for (t, &c) in category_totals.iter_mut().zip(row) {
            *t += c;
        }
    }

    let assignments = m.raters * m.items() as u64;
    if category_totals.contains(&assignments) {
        return 1.0;
    }

    let p_bar = agreement_sum / items;
    let pe_bar: f64 = category_totals
        .iter()
        .map(|&t| {
            let p = t as f64 / assignments as f64;
            p * p
        })
        .sum();
    (p_bar - pe_bar) / (1.0 - pe_bar)
}
