//! Binary confusion matrix with the landslide class as the positive class.

use serde::{Deserialize, Serialize};

use crate::stats::round_half_up;
use crate::{EvalError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Tallies one (predicted, actual) observation.
    pub fn record(&mut self, predicted_positive: bool, actual_positive: bool) {
        match (predicted_positive, actual_positive) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn from_pairs<I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (bool, bool)>,
    {
        let mut cm = Self::default();
        for (p, a) in pairs {
            cm.record(p, a);
        }
        cm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    /// Metrics rounded half-up to `decimals` places, for reporting.
    pub fn rounded(&self, decimals: u32) -> Self {
        Self {
            accuracy: round_half_up(self.accuracy, decimals),
            precision: round_half_up(self.precision, decimals),
            recall: round_half_up(self.recall, decimals),
            f1: round_half_up(self.f1, decimals),
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, precision, recall and F1 from a confusion matrix.
///
/// Precision, recall and F1 are 0 when their denominator is 0. F1 uses the
/// count form `2tp / (2tp + fp + fn)`, which equals the harmonic mean of
/// precision and recall whenever both are nonzero.
pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyConfusion);
    }
    Ok(Metrics {
        accuracy: ratio(cm.tp + cm.tn, total),
        precision: ratio(cm.tp, cm.tp + cm.fp),
        recall: ratio(cm.tp, cm.tp + cm.fn_),
        f1: ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn_),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rounded(tp: u64, fp: u64, fn_: u64, tn: u64) -> Metrics {
        metrics_from_confusion(&ConfusionMatrix::new(tp, fp, fn_, tn))
            .unwrap()
            .rounded(3)
    }

    #[test]
    fn validation_matrix() {
        let m = rounded(211, 42, 60, 860);
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (0.913, 0.834, 0.779, 0.805));
    }

    #[test]
    fn test_matrix() {
        let m = rounded(358, 128, 178, 1685);
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (0.870, 0.737, 0.668, 0.701));
    }

    #[test]
    fn all_negative_set_uses_zero_convention() {
        let m = metrics_from_confusion(&ConfusionMatrix::new(0, 0, 0, 5)).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn empty_matrix_is_an_error() {
        assert!(matches!(
            metrics_from_confusion(&ConfusionMatrix::default()),
            Err(EvalError::EmptyConfusion)
        ));
    }

    #[test]
    fn from_pairs_tallies() {
        let cm = ConfusionMatrix::from_pairs([(true, true), (true, false), (false, true), (false, false), (true, true)]);
        assert_eq!(cm, ConfusionMatrix::new(2, 1, 1, 1));
    }

    proptest! {
        #[test]
        fn perfect_positive_predictions(tp in 1u64..10_000, tn in 0u64..10_000) {
            let m = metrics_from_confusion(&ConfusionMatrix::new(tp, 0, 0, tn)).unwrap();
            prop_assert_eq!(m.precision, 1.0);
            prop_assert_eq!(m.recall, 1.0);
            prop_assert_eq!(m.f1, 1.0);
        }

        #[test]
        fn f1_is_harmonic_mean(tp in 1u64..100_000, fp in 0u64..100_000, fn_ in 0u64..100_000, tn in 0u64..100_000) {
            let m = metrics_from_confusion(&ConfusionMatrix::new(tp, fp, fn_, tn)).unwrap();
            let hm = 2.0 * m.precision * m.recall / (m.precision + m.recall);
            prop_assert!((m.f1 - hm).abs() <= 1e-12 * hm.abs());
        }
    }
}
