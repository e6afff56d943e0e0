use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use slidewatch_eval::sweep::{format_rate, read_runs, write_runs, yes_no};
use slidewatch_eval::{
    architecture_summary, factor_effect_table, leaderboard, paired_win_count, ArchitectureSummary, EffectFactor,
    EffectRow, EvalError, PairFactor, RunRecord, StdKind, WinCount,
};

use crate::error::{CliError, CliResult};
use crate::table;

pub struct Report {
    pub leaderboard: Vec<RunRecord>,
    /// `Err` holds why the ranking cannot be computed for this input.
    pub architectures: Result<Vec<ArchitectureSummary>, String>,
    pub effects: Vec<(EffectFactor, Vec<EffectRow>)>,
    pub wins: Vec<(PairFactor, WinCount)>,
}

pub fn build(runs: &[RunRecord], top_k: usize, std: StdKind) -> Result<Report, EvalError> {
    let architectures = match architecture_summary(runs, std) {
        Ok(a) => Ok(a),
        Err(EvalError::UnbalancedDesign(msg)) => Err(msg),
        Err(e) => return Err(e),
    };
    let mut wins = Vec::new();
    for f in [PairFactor::Optimizer, PairFactor::ClassBalancing] {
        wins.push((f, paired_win_count(runs, f)?));
    }
    Ok(Report {
        leaderboard: leaderboard(runs, top_k),
        architectures,
        effects: [EffectFactor::LearningRate, EffectFactor::WeightDecay]
            .into_iter()
            .map(|f| (f, factor_effect_table(runs, f, std)))
            .collect(),
        wins,
    })
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{} ...", &s[..i]),
        None => s.to_string(),
    }
}

pub fn render(r: &Report, std: StdKind) -> String {
    let mut out = format!("== Leaderboard (top {} by F1) ==\n", r.leaderboard.len());
    let rows: Vec<Vec<String>> = r
        .leaderboard
        .iter()
        .enumerate()
        .map(|(i, run)| {
            vec![
                (i + 1).to_string(),
                run.optimizer.to_string(),
                run.architecture.clone(),
                yes_no(run.class_balancing).into(),
                format_rate(run.learning_rate),
                format_rate(run.weight_decay),
                format!("{:.3}", run.accuracy),
                format!("{:.3}", run.precision),
                format!("{:.3}", run.recall),
                format!("{:.3}", run.f1),
            ]
        })
        .collect();
    out += &table::render(
        &["rank", "optimizer", "architecture", "balancing", "lr", "wd", "accuracy", "precision", "recall", "f1"],
        &rows,
    );

    out += &format!("\n== Architecture summary (std: {std}) ==\n");
    match &r.architectures {
        Ok(archs) => {
            let rows: Vec<Vec<String>> = archs
                .iter()
                .map(|a| {
                    vec![
                        a.architecture.clone(),
                        a.runs.to_string(),
                        format!("{:.4}", a.mean_f1),
                        format!("{:.4}", a.std_f1),
                        format!("{:.3}", a.average_rank),
                    ]
                })
                .collect();
            out += &table::render(&["architecture", "runs", "mean_f1", "std_f1", "average_rank"], &rows);
        }
        Err(why) => out += &format!("not available: {}\n", truncate(why, 240)),
    }

    for (factor, rows) in &r.effects {
        out += &format!("\n== Effect of {} (std: {std}) ==\n", factor.name().replace('_', " "));
        let rows: Vec<Vec<String>> = rows
            .iter()
            .map(|e| {
                vec![
                    e.optimizer.to_string(),
                    format_rate(e.value),
                    e.runs.to_string(),
                    format!("{:.4}", e.mean_f1),
                    format!("{:.4}", e.std_f1),
                ]
            })
            .collect();
        out += &table::render(&["optimizer", factor.name(), "runs", "mean_f1", "std_f1"], &rows);
    }

    out += "\n== Paired win counts ==\n";
    let rows: Vec<Vec<String>> = r
        .wins
        .iter()
        .map(|(f, w)| {
            let (a, b) = f.level_names();
            vec![
                factor_name(*f).into(),
                a.into(),
                b.into(),
                w.wins_a.to_string(),
                w.wins_b.to_string(),
                w.ties.to_string(),
                w.pairs.to_string(),
            ]
        })
        .collect();
    out += &table::render(&["factor", "level_a", "level_b", "wins_a", "wins_b", "ties", "pairs"], &rows);
    out
}

fn factor_name(f: PairFactor) -> &'static str {
    match f {
        PairFactor::Optimizer => "optimizer",
        PairFactor::ClassBalancing => "class_balancing",
    }
}

fn csv_err(e: impl std::fmt::Display) -> CliError {
    CliError::runtime(e)
}

/// Writes the four sections as `<stem>.{leaderboard,architectures,effects,wins}.csv`.
pub fn write_csvs(r: &Report, dir: &Path, stem: &str) -> CliResult<Vec<PathBuf>> {
    let path = |kind: &str| dir.join(format!("{stem}.{kind}.csv"));
    let create = |p: &Path| File::create(p).map(BufWriter::new).map_err(|e| CliError::runtime(format!("{}: {e}", p.display())));
    let mut written = Vec::new();

    let p = path("leaderboard");
    write_runs(&r.leaderboard, create(&p)?).map_err(csv_err)?;
    written.push(p);

    if let Ok(archs) = &r.architectures {
        let p = path("architectures");
        let mut w = csv::Writer::from_writer(create(&p)?);
        w.write_record(["architecture", "runs", "mean_f1", "std_f1", "average_rank"]).map_err(csv_err)?;
        for a in archs {
            w.write_record([
                a.architecture.clone(),
                a.runs.to_string(),
                a.mean_f1.to_string(),
                a.std_f1.to_string(),
                a.average_rank.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(csv_err)?;
        written.push(p);
    }

    let p = path("effects");
    let mut w = csv::Writer::from_writer(create(&p)?);
    w.write_record(["factor", "optimizer", "value", "runs", "mean_f1", "std_f1"]).map_err(csv_err)?;
    for (factor, rows) in &r.effects {
        for e in rows {
            w.write_record([
                factor.name().to_string(),
                e.optimizer.to_string(),
                format_rate(e.value),
                e.runs.to_string(),
                e.mean_f1.to_string(),
                e.std_f1.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(csv_err)?;
    written.push(p);

    let p = path("wins");
    let mut w = csv::Writer::from_writer(create(&p)?);
    w.write_record(["factor", "level_a", "level_b", "wins_a", "wins_b", "ties", "pairs"]).map_err(csv_err)?;
    for (f, c) in &r.wins {
        let (a, b) = f.level_names();
        w.write_record([
            factor_name(*f).to_string(),
            a.into(),
            b.into(),
            c.wins_a.to_string(),
            c.wins_b.to_string(),
            c.ties.to_string(),
            c.pairs.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)?;
    written.push(p);
    Ok(written)
}

pub fn run(sweep: &Path, top_k: usize, std: StdKind, out_dir: Option<&Path>, strict_grid: bool) -> CliResult {
    let ctx = |e: &dyn std::fmt::Display| CliError::usage(format!("{}: {e}", sweep.display()));
    let file = File::open(sweep).map_err(|e| ctx(&e))?;
    let runs = read_runs(file, strict_grid).map_err(|e| ctx(&e))?;
    let report = build(&runs, top_k, std).map_err(|e| ctx(&e))?;
    print!("{}", render(&report, std));

    let dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| sweep.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf());
    let stem = sweep.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    let written = write_csvs(&report, &dir, stem)?;
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}
