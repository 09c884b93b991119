//! Per-task JSON lines, aggregate CSV, and sweep CSV writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BenchmarkRun, HarnessError, SweepTable};
use crate::embedding_store::EmbeddingSet;

pub const PER_TASK_FILE: &str = "per_task.jsonl";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const SWEEP_FILE: &str = "sweep.csv";

/// One line of the per-task output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLine {
    pub task_id: u64,
    pub target: String,
    pub level: Option<usize>,
    pub method: String,
    pub f1_macro: f64,
    pub f1_pos: f64,
    pub f1_neg: f64,
    pub accuracy: f64,
    pub auc: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub threshold_mean: f64,
}

pub fn per_task_jsonl(run: &BenchmarkRun) -> String {
    let mut out = String::new();
    for o in &run.outcomes {
        let m = &o.metrics;
        let line = TaskLine {
            task_id: o.task.task_id,
            target: o.task.target_label.clone(),
            level: o.task.level,
            method: run.method.to_string(),
            f1_macro: m.f1_macro,
            f1_pos: m.f1_pos,
            f1_neg: m.f1_neg,
            accuracy: m.accuracy,
            auc: m.auc,
            fpr: m.fpr,
            fnr: m.fnr,
            threshold_mean: o.threshold_mean,
        };
        out.push_str(&serde_json::to_string(&line).expect("plain struct serializes"));
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn level_field(level: Option<usize>) -> String {
    level.map(|l| l.to_string()).unwrap_or_default()
}

/// Columns `dataset,method,level,metric,mean,ci95`, one row per metric.
pub fn aggregate_csv(dataset: &str, runs: &[&BenchmarkRun], with_header: bool) -> String {
    let mut out = String::new();
    if with_header {
        out.push_str("dataset,method,level,metric,mean,ci95\n");
    }
    for run in runs {
        for (metric, a) in &run.report.aggregate {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                csv_field(dataset),
                run.method,
                level_field(run.level),
                metric,
                a.mean,
                a.ci95
            );
        }
    }
    out
}

/// Columns `dataset,method,level,axis,value,metric,mean,ci95,relative`;
/// `relative` is only filled for threshold-grid sweeps on `f1_macro`.
pub fn sweep_csv(dataset: &str, table: &SweepTable) -> String {
    let mut out = String::from("dataset,method,level,axis,value,metric,mean,ci95,relative\n");
    for row in &table.rows {
        for (metric, a) in &row.run.report.aggregate {
            let relative = match row.relative_f1_macro {
                Some(r) if metric == "f1_macro" => r.to_string(),
                _ => String::new(),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                csv_field(dataset),
                row.run.method,
                level_field(row.run.level),
                table.axis,
                row.value,
                metric,
                a.mean,
                a.ci95,
                relative
            );
        }
    }
    out
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Writes per-task lines, the aggregate CSV and the sampled episodes.
pub fn write_run_outputs(
    dir: &Path,
    dataset: &str,
    run: &BenchmarkRun,
    images: &EmbeddingSet,
) -> Result<(), HarnessError> {
    ensure_dir(dir)?;
    write(&dir.join(PER_TASK_FILE), &per_task_jsonl(run))?;
    write(&dir.join(AGGREGATE_FILE), &aggregate_csv(dataset, &[run], true))?;
    let mut episodes = String::new();
    for o in &run.outcomes {
        episodes.push_str(&serde_json::to_string(&o.task.record(images))?);
        episodes.push('\n');
    }
    write(&dir.join(EPISODES_FILE), &episodes)
}

pub fn write_sweep_outputs(dir: &Path, dataset: &str, table: &SweepTable) -> Result<(), HarnessError> {
    ensure_dir(dir)?;
    write(&dir.join(SWEEP_FILE), &sweep_csv(dataset, table))
}
