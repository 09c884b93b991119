//! Transferred fixed threshold `λ̄`.
//!
//! Uniform one-class tasks are sampled from a labeled calibration set, every
//! query is scored once against its task's target prototype, and each grid
//! candidate is evaluated as a global threshold. `λ̄` is the candidate with the
//! highest mean macro F1 over all tasks; ties go to the smaller threshold.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding_store::EmbeddingSet;
use crate::fsutil::write_atomic;
use crate::metrics::{macro_f1, Confusion};
use crate::similarity::{cosine, SimilarityError};
use crate::task_sampler::{sample_tasks, SamplerError, Task, UniformSampler, DEFAULT_POSITIVE_RATE, DEFAULT_QUERIES};

pub const DEFAULT_GRID_SIZE: usize = 500;
pub const DEFAULT_CALIBRATION_TASKS: usize = 1000;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("no scores to build a grid from")]
    EmptyScores,
    #[error("grid needs at least 2 candidates, got {0}")]
    GridTooSmall(usize),
    #[error("calibration set has {0} distinct classes, need at least 2")]
    InsufficientClasses(usize),
    #[error("not enough images per class: {0}")]
    InsufficientImages(SamplerError),
    #[error("no prototype for class {0:?}")]
    MissingPrototype(String),
    #[error("need at least one task")]
    NoTasks,
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error("calibration file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io failure on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMode {
    /// One global threshold maximizing mean macro F1 across tasks.
    #[default]
    GlobalArgmax,
    /// Mean of the per-task optimal grid thresholds. The result is generally
    /// not a grid point.
    MeanOfTaskOptima,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub n_tasks: usize,
    pub queries_per_task: usize,
    pub r: f64,
    pub grid_size: usize,
    pub seed: u64,
    pub mode: CalibrationMode,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            n_tasks: DEFAULT_CALIBRATION_TASKS,
            queries_per_task: DEFAULT_QUERIES,
            r: DEFAULT_POSITIVE_RATE,
            grid_size: DEFAULT_GRID_SIZE,
            seed: 0,
            mode: CalibrationMode::GlobalArgmax,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub lambda_bar: f64,
    pub grid: Vec<f64>,
    pub per_candidate_f1: Vec<f64>,
    pub n_tasks: usize,
    pub seed: u64,
}

impl CalibrationResult {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CalibrationError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| CalibrationError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CalibrationError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        write_atomic(path, text.as_bytes()).map_err(|source| CalibrationError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Index of the best candidate on the stored curve (first on ties).
    pub fn argmax(&self) -> Option<usize> {
        argmax_first(&self.per_candidate_f1)
    }
}

/// Target-prototype scores of one task's actual positives and negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskScores {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

impl TaskScores {
    pub fn new(mut positive: Vec<f64>, mut negative: Vec<f64>) -> Self {
        positive.sort_by(f64::total_cmp);
        negative.sort_by(f64::total_cmp);
        Self { positive, negative }
    }

    /// Confusion when accepting every score `>= threshold`.
    pub fn confusion_at(&self, threshold: f64) -> Confusion {
        let pos_rejected = self.positive.partition_point(|&s| s < threshold) as u64;
        let neg_rejected = self.negative.partition_point(|&s| s < threshold) as u64;
        Confusion {
            tp: self.positive.len() as u64 - pos_rejected,
            fn_: pos_rejected,
            fp: self.negative.len() as u64 - neg_rejected,
            tn: neg_rejected,
        }
    }
}

/// `n` evenly spaced candidates from the minimum to the maximum score,
/// both inclusive.
pub fn build_grid(scores: impl IntoIterator<Item = f64>, n: usize) -> Result<Vec<f64>, CalibrationError> {
    if n < 2 {
        return Err(CalibrationError::GridTooSmall(n));
    }
    let (lo, hi) = scores
        .into_iter()
        .fold(None, |acc: Option<(f64, f64)>, s| match acc {
            None => Some((s, s)),
            Some((lo, hi)) => Some((lo.min(s), hi.max(s))),
        })
        .ok_or(CalibrationError::EmptyScores)?;
    if lo == hi {
        log::warn!("all calibration scores equal {lo}; grid is degenerate");
        return Ok(vec![lo; n]);
    }
    let last = (n - 1) as f64;
    let mut grid: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * (i as f64 / last)).collect();
    grid[n - 1] = hi;
    Ok(grid)
}

/// Mean macro F1 (percent) over tasks with `threshold` as a global cutoff.
pub fn mean_macro_f1_at(tasks: &[TaskScores], threshold: f64) -> f64 {
    tasks.iter().map(|t| macro_f1(&t.confusion_at(threshold))).sum::<f64>() / tasks.len() as f64
}

/// Mean-F1 values closer than this (percent points) count as tied. Equal
/// rationals can round differently depending on summation order.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// First index within [`TIE_TOLERANCE`] of the maximum.
fn argmax_first(values: &[f64]) -> Option<usize> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values.iter().position(|&v| v >= max - TIE_TOLERANCE)
}

/// Grid search over pre-computed task scores.
pub fn calibrate_from_scores(
    tasks: &[TaskScores],
    grid_size: usize,
    mode: CalibrationMode,
) -> Result<(f64, Vec<f64>, Vec<f64>), CalibrationError> {
    if tasks.is_empty() {
        return Err(CalibrationError::NoTasks);
    }
    let grid = build_grid(
        tasks.iter().flat_map(|t| t.positive.iter().chain(&t.negative).copied()),
        grid_size,
    )?;
    let curve: Vec<f64> = grid.par_iter().map(|&g| mean_macro_f1_at(tasks, g)).collect();
    let lambda_bar = match mode {
        CalibrationMode::GlobalArgmax => grid[argmax_first(&curve).expect("non-empty grid")],
        CalibrationMode::MeanOfTaskOptima => {
            let optima: Vec<f64> = tasks
                .par_iter()
                .map(|t| {
                    let f1s: Vec<f64> = grid.iter().map(|&g| macro_f1(&t.confusion_at(g))).collect();
                    grid[argmax_first(&f1s).expect("non-empty grid")]
                })
                .collect();
            optima.iter().sum::<f64>() / optima.len() as f64
        }
    };
    Ok((lambda_bar, grid, curve))
}

/// Scores each task's queries against the prototype of its target label.
pub fn task_scores(
    images: &EmbeddingSet,
    prototypes: &EmbeddingSet,
    tasks: &[Task],
) -> Result<Vec<TaskScores>, CalibrationError> {
    tasks
        .par_iter()
        .map(|task| {
            let row = prototypes
                .find_label(&task.target_label)
                .ok_or_else(|| CalibrationError::MissingPrototype(task.target_label.clone()))?;
            let proto = prototypes.row(row);
            let score = |idx: &[usize]| -> Result<Vec<f64>, SimilarityError> {
                idx.iter().map(|&i| cosine(images.row(i), proto)).collect()
            };
            Ok(TaskScores::new(
                score(&task.positive_indices)?,
                score(&task.negative_indices)?,
            ))
        })
        .collect()
}

pub fn calibrate_fixed_threshold(
    images: &EmbeddingSet,
    prototypes: &EmbeddingSet,
    config: &CalibrationConfig,
) -> Result<CalibrationResult, CalibrationError> {
    if config.n_tasks == 0 {
        return Err(CalibrationError::NoTasks);
    }
    let classes = images.distinct_labels().len();
    if classes < 2 {
        return Err(CalibrationError::InsufficientClasses(classes));
    }
    let sampler = UniformSampler::new(images, config.r, config.queries_per_task)?;
    let tasks = sample_tasks(&sampler, config.n_tasks, config.seed).map_err(|e| match e {
        e @ SamplerError::InsufficientData(_) => CalibrationError::InsufficientImages(e),
        e => e.into(),
    })?;
    let scores = task_scores(images, prototypes, &tasks)?;
    let (lambda_bar, grid, per_candidate_f1) = calibrate_from_scores(&scores, config.grid_size, config.mode)?;
    Ok(CalibrationResult {
        lambda_bar,
        grid,
        per_candidate_f1,
        n_tasks: config.n_tasks,
        seed: config.seed,
    })
}
