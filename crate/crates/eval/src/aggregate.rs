//! Sweep aggregation: leaderboards, per-architecture ranking, factor effect
//! tables and paired win counts.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::stats::{mean, std_dev, StdKind};
use crate::sweep::{HyperKey, Optimizer, RunRecord};
use crate::{EvalError, Result};

/// Total leaderboard order: F1 descending, then the precision/recall
/// harmonic mean descending (resolves ties between rounded F1 values),
/// then accuracy descending, then configuration ascending by architecture,
/// optimizer, balancing, learning rate and weight decay.
pub fn leaderboard_order(a: &RunRecord, b: &RunRecord) -> Ordering {
    b.f1.total_cmp(&a.f1)
        .then_with(|| b.pr_harmonic_mean().total_cmp(&a.pr_harmonic_mean()))
        .then_with(|| b.accuracy.total_cmp(&a.accuracy))
        .then_with(|| a.cmp_config(b))
}

/// The `top_k` best runs. The order is total, so the result does not depend
/// on input order.
pub fn leaderboard(runs: &[RunRecord], top_k: usize) -> Vec<RunRecord> {
    let mut sorted = runs.to_vec();
    sorted.sort_by(leaderboard_order);
    sorted.truncate(top_k);
    sorted
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArchitectureSummary {
    pub architecture: String,
    pub runs: usize,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub average_rank: f64,
}

/// Assigns 1-based ranks by descending score; tied scores share the mean of
/// the ranks they span.
pub fn fractional_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    let mut ranks = vec![0.0; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let shared = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = shared;
        }
        start = end;
    }
    ranks
}

/// Per-architecture F1 mean, standard deviation and average rank.
///
/// Ranks are computed among architectures within each shared
/// (optimizer, learning rate, weight decay, balancing) combination and then
/// averaged per architecture. Every architecture must cover exactly the
/// same set of combinations. Output is sorted by average rank, best first.
pub fn architecture_summary(runs: &[RunRecord], std_kind: StdKind) -> Result<Vec<ArchitectureSummary>> {
    if runs.is_empty() {
        return Err(EvalError::NoRuns);
    }
    let mut by_arch: BTreeMap<&str, BTreeMap<HyperKey, f64>> = BTreeMap::new();
    for r in runs {
        let slot = by_arch.entry(r.architecture.as_str()).or_default();
        if slot.insert(r.hyper_key(), r.f1).is_some() {
            return Err(EvalError::DuplicateRun(format!("{} {}", r.architecture, r.hyper_key())));
        }
    }

    let all_keys: BTreeSet<HyperKey> = by_arch.values().flat_map(|m| m.keys().copied()).collect();
    let mut missing = Vec::new();
    for (arch, cells) in &by_arch {
        for key in &all_keys {
            if !cells.contains_key(key) {
                missing.push(format!("{arch} {key}"));
            }
        }
    }
    if !missing.is_empty() {
        return Err(EvalError::UnbalancedDesign(format!("missing combinations: {}", missing.join(", "))));
    }

    let archs: Vec<&str> = by_arch.keys().copied().collect();
    let mut rank_sums = vec![0.0; archs.len()];
    for key in &all_keys {
        let scores: Vec<f64> = archs.iter().map(|a| by_arch[a][key]).collect();
        for (sum, rank) in rank_sums.iter_mut().zip(fractional_ranks(&scores)) {
            *sum += rank;
        }
    }

    let mut out: Vec<ArchitectureSummary> = archs
        .iter()
        .zip(rank_sums)
        .map(|(arch, rank_sum)| {
            let f1s: Vec<f64> = by_arch[arch].values().copied().collect();
            ArchitectureSummary {
                architecture: arch.to_string(),
                runs: f1s.len(),
                mean_f1: mean(&f1s),
                std_f1: std_dev(&f1s, std_kind),
                average_rank: rank_sum / all_keys.len() as f64,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        a.average_rank
            .total_cmp(&b.average_rank)
            .then_with(|| b.mean_f1.total_cmp(&a.mean_f1))
            .then_with(|| a.architecture.cmp(&b.architecture))
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectFactor {
    LearningRate,
    WeightDecay,
}

impl EffectFactor {
    pub fn name(&self) -> &'static str {
        match self {
            EffectFactor::LearningRate => "learning_rate",
            EffectFactor::WeightDecay => "weight_decay",
        }
    }

    fn value(&self, r: &RunRecord) -> f64 {
        match self {
            EffectFactor::LearningRate => r.learning_rate,
            EffectFactor::WeightDecay => r.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectRow {
    pub optimizer: Optimizer,
    pub value: f64,
    pub runs: usize,
    pub mean_f1: f64,
    pub std_f1: f64,
}

/// Mean and standard deviation of F1 for each (optimizer, factor value)
/// cell, sorted by optimizer then ascending factor value.
pub fn factor_effect_table(runs: &[RunRecord], factor: EffectFactor, std_kind: StdKind) -> Vec<EffectRow> {
    let mut cells: BTreeMap<(Optimizer, u64), Vec<f64>> = BTreeMap::new();
    for r in runs {
        cells
            .entry((r.optimizer, factor.value(r).to_bits()))
            .or_default()
            .push(r.f1);
    }
    let mut rows: Vec<EffectRow> = cells
        .into_iter()
        .map(|((optimizer, bits), f1s)| EffectRow {
            optimizer,
            value: f64::from_bits(bits),
            runs: f1s.len(),
            mean_f1: mean(&f1s),
            std_f1: std_dev(&f1s, std_kind),
        })
        .collect();
    rows.sort_by(|a, b| a.optimizer.cmp(&b.optimizer).then(a.value.total_cmp(&b.value)));
    rows
}

/// Factor compared by [`paired_win_count`]. Level A is Adam for the
/// optimizer factor and "with balancing" for the balancing factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairFactor {
    Optimizer,
    ClassBalancing,
}

impl PairFactor {
    pub fn level_names(&self) -> (&'static str, &'static str) {
        match self {
            PairFactor::Optimizer => ("adam", "sgd"),
            PairFactor::ClassBalancing => ("balanced", "unbalanced"),
        }
    }

    fn is_level_a(&self, r: &RunRecord) -> bool {
        match self {
            PairFactor::Optimizer => r.optimizer == Optimizer::Adam,
            PairFactor::ClassBalancing => r.class_balancing,
        }
    }

    fn rest_key(&self, r: &RunRecord) -> (String, Option<Optimizer>, Option<bool>, u64, u64) {
        let (opt, bal) = match self {
            PairFactor::Optimizer => (None, Some(r.class_balancing)),
            PairFactor::ClassBalancing => (Some(r.optimizer), None),
        };
        (r.architecture.clone(), opt, bal, r.learning_rate.to_bits(), r.weight_decay.to_bits())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct WinCount {
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    pub pairs: usize,
}

/// Counts, over every pair of runs that differ only in `factor`, how often
/// each level has strictly higher F1 and how often the F1 values are equal.
/// Configurations with only one level present are not pairs.
pub fn paired_win_count(runs: &[RunRecord], factor: PairFactor) -> Result<WinCount> {
    type Slot = (Option<f64>, Option<f64>);
    let mut cells: HashMap<_, Slot> = HashMap::new();
    for r in runs {
        let slot = cells.entry(factor.rest_key(r)).or_insert((None, None));
        let target = if factor.is_level_a(r) { &mut slot.0 } else { &mut slot.1 };
        if target.replace(r.f1).is_some() {
            return Err(EvalError::DuplicateRun(format!(
                "{} {} balancing={} lr={:e} wd={:e}",
                r.optimizer,
                r.architecture,
                crate::sweep::yes_no(r.class_balancing),
                r.learning_rate,
                r.weight_decay
            )));
        }
    }
    let mut wc = WinCount::default();
    for (a, b) in cells.into_values() {
        let (Some(a), Some(b)) = (a, b) else { continue };
        wc.pairs += 1;
        match a.total_cmp(&b) {
            Ordering::Greater => wc.wins_a += 1,
            Ordering::Less => wc.wins_b += 1,
            Ordering::Equal => wc.ties += 1,
        }
    }
    Ok(wc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(opt: Optimizer, arch: &str, bal: bool, lr: f64, wd: f64, f1: f64) -> RunRecord {
        RunRecord {
            optimizer: opt,
            architecture: arch.into(),
            class_balancing: bal,
            learning_rate: lr,
            weight_decay: wd,
            accuracy: 0.9,
            precision: 0.8,
            recall: 0.8,
            f1,
        }
    }

    #[test]
    fn leaderboard_single_run() {
        let r = run(Optimizer::Sgd, "VGG16", true, 1e-3, 1e-4, 0.5);
        assert_eq!(leaderboard(std::slice::from_ref(&r), 10), vec![r]);
    }

    #[test]
    fn leaderboard_breaks_f1_ties_by_accuracy() {
        let mut a = run(Optimizer::Sgd, "VGG16", true, 1e-3, 1e-4, 0.79);
        let mut b = run(Optimizer::Adam, "VGG16", true, 1e-3, 1e-4, 0.79);
        a.accuracy = 0.90;
        b.accuracy = 0.91;
        let top = leaderboard(&[a, b.clone()], 2);
        assert_eq!(top[0], b);
    }

    #[test]
    fn ranks_share_ties() {
        assert_eq!(fractional_ranks(&[0.5, 0.9, 0.5, 0.1]), vec![2.5, 1.0, 2.5, 4.0]);
        assert_eq!(fractional_ranks(&[0.3]), vec![1.0]);
    }

    #[test]
    fn symmetric_two_architecture_design() {
        let runs = vec![
            run(Optimizer::Adam, "A", false, 1e-3, 1e-4, 0.6),
            run(Optimizer::Adam, "A", true, 1e-3, 1e-4, 0.8),
            run(Optimizer::Adam, "B", false, 1e-3, 1e-4, 0.5),
            run(Optimizer::Adam, "B", true, 1e-3, 1e-4, 0.9),
        ];
        let s = architecture_summary(&runs, StdKind::Population).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|a| a.average_rank == 1.5));
        let a = s.iter().find(|a| a.architecture == "A").unwrap();
        assert!((a.mean_f1 - 0.7).abs() < 1e-12);
        assert!((a.std_f1 - 0.1).abs() < 1e-12);
    }

    #[test]
    fn single_architecture_ranks_first() {
        let runs = vec![
            run(Optimizer::Adam, "A", false, 1e-3, 1e-4, 0.6),
            run(Optimizer::Sgd, "A", false, 1e-3, 1e-4, 0.2),
        ];
        let s = architecture_summary(&runs, StdKind::Population).unwrap();
        assert_eq!(s[0].average_rank, 1.0);
    }

    #[test]
    fn unbalanced_design_lists_missing_cells() {
        let runs = vec![
            run(Optimizer::Adam, "A", false, 1e-3, 1e-4, 0.6),
            run(Optimizer::Adam, "A", true, 1e-3, 1e-4, 0.8),
            run(Optimizer::Adam, "B", false, 1e-3, 1e-4, 0.5),
        ];
        match architecture_summary(&runs, StdKind::Population) {
            Err(EvalError::UnbalancedDesign(msg)) => assert!(msg.contains("B adam/lr=1e-3/wd=1e-4/balancing=yes"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn effect_table_two_point() {
        let runs = vec![
            run(Optimizer::Adam, "A", false, 1e-4, 1e-4, 0.7),
            run(Optimizer::Adam, "B", false, 1e-4, 1e-4, 0.8),
            run(Optimizer::Adam, "A", false, 1e-3, 1e-4, 0.4),
            run(Optimizer::Adam, "B", false, 1e-3, 1e-4, 0.4),
        ];
        let t = factor_effect_table(&runs, EffectFactor::LearningRate, StdKind::Population);
        assert_eq!(t.len(), 2);
        assert!(t.iter().all(|r| r.optimizer == Optimizer::Adam));
        let cell = t.iter().find(|r| r.value == 1e-4).unwrap();
        assert!((cell.mean_f1 - 0.75).abs() < 1e-12);
        assert!((cell.std_f1 - 0.05).abs() < 1e-12);
        assert_eq!(t[0].value, 1e-4);
    }

    #[test]
    fn win_counts() {
        let a = run(Optimizer::Adam, "A", false, 1e-4, 1e-4, 0.7);
        let b = run(Optimizer::Sgd, "A", false, 1e-4, 1e-4, 0.6);
        let wc = paired_win_count(&[a.clone(), b.clone()], PairFactor::Optimizer).unwrap();
        assert_eq!((wc.wins_a, wc.wins_b, wc.ties), (1, 0, 0));

        let mut b_tie = b.clone();
        b_tie.f1 = 0.7;
        let wc = paired_win_count(&[a.clone(), b_tie], PairFactor::Optimizer).unwrap();
        assert_eq!((wc.wins_a, wc.wins_b, wc.ties), (0, 0, 1));

        // no balancing counterpart, so no pairs
        let wc = paired_win_count(&[a.clone(), b], PairFactor::ClassBalancing).unwrap();
        assert_eq!(wc.pairs, 0);

        assert!(paired_win_count(&[a.clone(), a], PairFactor::Optimizer).is_err());
    }
}
