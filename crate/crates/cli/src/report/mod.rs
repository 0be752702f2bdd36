//! Run reports: a CSV table per run, one SVG chart per curve, and overlay
//! charts plus a summary table when several runs are given. Output depends
//! only on the metrics files, so identical inputs give identical bytes.

mod svg;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::Args;

use syngrpo_trainer::metrics::{epoch_mean, read_records, MetricsRecord};
use syngrpo_trainer::run::{CONFIG_SNAPSHOT, METRICS_FILE};

use crate::CliError;
use svg::{line_chart, Series};

#[derive(Args)]
pub struct ReportArgs {
    /// Run directories (each with a metrics.jsonl).
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

pub const CSV_HEADER: [&str; 19] = [
    "step",
    "epoch",
    "entropy",
    "raw_diversity",
    "diversity",
    "smoothed_diversity",
    "global_diversity",
    "reward_accuracy",
    "reward_format",
    "reward_diversity",
    "reward_total",
    "loss",
    "kl",
    "replacements",
    "batch_difficulty",
    "pool_difficulty",
    "eval_accuracy",
    "eval_reward",
    "hard_eval_accuracy",
];

type Getter = fn(&MetricsRecord) -> Option<f64>;

/// Charted curves: file stem, axis label, accessor.
pub const CURVES: [(&str, &str, Getter); 11] = [
    ("entropy", "answer entropy (nats)", |r| Some(r.entropy)),
    ("raw_diversity", "raw diversity", |r| Some(r.raw_diversity)),
    ("diversity", "normalized diversity", |r| Some(r.diversity)),
    ("smoothed_diversity", "smoothed diversity", |r| Some(r.smoothed_diversity)),
    ("reward_accuracy", "accuracy reward", |r| Some(r.reward_accuracy)),
    ("reward_diversity", "diversity reward", |r| Some(r.reward_diversity)),
    ("reward_total", "total reward", |r| Some(r.reward_total)),
    ("eval_accuracy", "eval accuracy", |r| r.eval_accuracy),
    ("hard_eval_accuracy", "hard eval accuracy", |r| r.hard_eval_accuracy),
    ("pool_difficulty", "pool difficulty", |r| Some(r.pool_difficulty)),
    ("batch_difficulty", "batch difficulty", |r| Some(r.batch_difficulty)),
];

pub struct Run {
    pub name: String,
    pub mode: Option<String>,
    pub records: Vec<MetricsRecord>,
    pub skipped: usize,
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub fn load_run(dir: &Path, name: String) -> Result<Run, CliError> {
    let path = dir.join(METRICS_FILE);
    let file = File::open(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let (records, skipped) = read_records(BufReader::new(file)).map_err(runtime)?;
    let mode = std::fs::read_to_string(dir.join(CONFIG_SNAPSHOT))
        .ok()
        .and_then(|t| t.parse::<toml::Table>().ok())
        .and_then(|t| t.get("mode").and_then(|m| m.as_str().map(String::from)));
    Ok(Run { name, mode, records, skipped })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_csv(records: &[MetricsRecord], w: impl std::io::Write) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER).map_err(runtime)?;
    for r in records {
        let row = [
            r.step.to_string(),
            r.epoch.to_string(),
            r.entropy.to_string(),
            r.raw_diversity.to_string(),
            r.diversity.to_string(),
            r.smoothed_diversity.to_string(),
            r.global_diversity.to_string(),
            r.reward_accuracy.to_string(),
            r.reward_format.to_string(),
            r.reward_diversity.to_string(),
            r.reward_total.to_string(),
            r.loss.to_string(),
            r.kl.to_string(),
            r.replacements.to_string(),
            r.batch_difficulty.to_string(),
            r.pool_difficulty.to_string(),
            cell(r.eval_accuracy),
            cell(r.eval_reward),
            cell(r.hard_eval_accuracy),
        ];
        out.write_record(&row).map_err(runtime)?;
    }
    out.flush().map_err(runtime)?;
    Ok(())
}

fn points(records: &[MetricsRecord], get: Getter) -> Vec<(f64, Option<f64>)> {
    records.iter().map(|r| (r.step as f64, get(r))).collect()
}

/// Per-epoch means of the headline curves, one row per run and epoch.
pub fn write_summary(runs: &[Run], w: impl std::io::Write) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "run",
        "mode",
        "epoch",
        "entropy",
        "diversity",
        "reward_accuracy",
        "pool_difficulty",
        "last_eval_accuracy",
        "last_hard_eval_accuracy",
    ])
    .map_err(runtime)?;
    for run in runs {
        let epochs: BTreeSet<usize> = run.records.iter().map(|r| r.epoch).collect();
        for e in epochs {
            let m = |f: fn(&MetricsRecord) -> f64| cell(epoch_mean(&run.records, e, f));
            let last = |f: Getter| cell(run.records.iter().filter(|r| r.epoch == e).filter_map(f).next_back());
            out.write_record([
                run.name.clone(),
                run.mode.clone().unwrap_or_default(),
                e.to_string(),
                m(|r| r.entropy),
                m(|r| r.diversity),
                m(|r| r.reward_accuracy),
                m(|r| r.pool_difficulty),
                last(|r| r.eval_accuracy),
                last(|r| r.hard_eval_accuracy),
            ])
            .map_err(runtime)?;
        }
    }
    out.flush().map_err(runtime)?;
    Ok(())
}

fn unique_names(dirs: &[PathBuf]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    dirs.iter()
        .enumerate()
        .map(|(i, d)| {
            let base = d
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .filter(|n| !n.is_empty() && n != "." && n != "..")
                .unwrap_or_else(|| format!("run{i}"));
            let mut name = base.clone();
            let mut k = 1;
            while !seen.insert(name.clone()) {
                k += 1;
                name = format!("{base}-{k}");
            }
            name
        })
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

pub fn run(a: ReportArgs) -> Result<(), CliError> {
    let names = unique_names(&a.runs);
    let mut runs = Vec::new();
    for (dir, name) in a.runs.iter().zip(names) {
        let run = load_run(dir, name)?;
        if run.skipped > 0 {
            log::warn!("{}: skipped {} corrupt metrics line(s)", dir.display(), run.skipped);
        }
        runs.push(run);
    }
    for run in &runs {
        let dir = a.out.join(&run.name);
        std::fs::create_dir_all(&dir).map_err(runtime)?;
        let mut buf = Vec::new();
        write_csv(&run.records, &mut buf)?;
        write_file(&dir.join("metrics.csv"), &buf)?;
        for (stem, label, get) in CURVES {
            let s = Series { name: run.name.clone(), points: points(&run.records, get) };
            write_file(&dir.join(format!("{stem}.svg")), line_chart(label, &[s]).as_bytes())?;
        }
    }
    if runs.len() > 1 {
        let dir = a.out.join("compare");
        std::fs::create_dir_all(&dir).map_err(runtime)?;
        let mut buf = Vec::new();
        write_summary(&runs, &mut buf)?;
        write_file(&dir.join("summary.csv"), &buf)?;
        for (stem, label, get) in CURVES {
            let series: Vec<Series> = runs
                .iter()
                .map(|r| Series {
                    name: match &r.mode {
                        Some(m) => format!("{} ({m})", r.name),
                        None => r.name.clone(),
                    },
                    points: points(&r.records, get),
                })
                .collect();
            write_file(&dir.join(format!("{stem}.svg")), line_chart(label, &series).as_bytes())?;
        }
    }
    let skipped: usize = runs.iter().map(|r| r.skipped).sum();
    println!("{}", serde_json::json!({ "runs": runs.len(), "out": a.out, "skipped_lines": skipped }));
    Ok(())
}
