//! Per-task and aggregate evaluation metrics. Everything is reported on a
//! percent scale.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("AUC needs at least one positive and one negative score")]
    EmptyClass,
    #[error("{0} is undefined: the task has no actual {1}")]
    UndefinedRate(&'static str, &'static str),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    /// Tallies `(actual, predicted)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Self::default();
        for (actual, predicted) in pairs {
            match (actual, predicted) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// The same confusion with the negative class treated as positive.
    pub fn swapped(&self) -> Self {
        Self {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }
}

fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// F1 of the positive class, in percent. Zero denominators give 0.
pub fn f1_positive(c: &Confusion) -> f64 {
    f1(c.tp, c.fp, c.fn_) * 100.0
}

/// F1 of the negative class, in percent.
pub fn f1_negative(c: &Confusion) -> f64 {
    f1(c.tn, c.fn_, c.fp) * 100.0
}

pub fn macro_f1(c: &Confusion) -> f64 {
    (f1(c.tp, c.fp, c.fn_) + f1(c.tn, c.fn_, c.fp)) / 2.0 * 100.0
}

pub fn accuracy(c: &Confusion) -> f64 {
    match c.total() {
        0 => 0.0,
        n => (c.tp + c.tn) as f64 / n as f64 * 100.0,
    }
}

/// `(FPR, FNR)` in percent.
pub fn fpr_fnr(c: &Confusion) -> Result<(f64, f64), MetricsError> {
    let negatives = c.fp + c.tn;
    let positives = c.fn_ + c.tp;
    if negatives == 0 {
        return Err(MetricsError::UndefinedRate("FPR", "negatives"));
    }
    if positives == 0 {
        return Err(MetricsError::UndefinedRate("FNR", "positives"));
    }
    Ok((
        c.fp as f64 / negatives as f64 * 100.0,
        c.fn_ as f64 / positives as f64 * 100.0,
    ))
}

/// Mann–Whitney AUC in percent: the fraction of (positive, negative) pairs
/// ranked correctly, ties counting one half.
pub fn auc<T: Scalar>(positive: &[T], negative: &[T]) -> Result<f64, MetricsError> {
    if positive.is_empty() || negative.is_empty() {
        return Err(MetricsError::EmptyClass);
    }
    let mut neg: Vec<f64> = negative.iter().map(|x| x.widen()).collect();
    neg.sort_by(f64::total_cmp);
    // Counts are integers or halves, exact in f64 for any realistic size.
    let mut wins = 0.0f64;
    for p in positive {
        let p = p.widen();
        let below = neg.partition_point(|&n| n < p);
        let tied = neg[below..].partition_point(|&n| n <= p);
        wins += below as f64 + 0.5 * tied as f64;
    }
    Ok(wins / (positive.len() as f64 * negative.len() as f64) * 100.0)
}

/// Mean and 95% normal-approximation CI half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub ci95: f64,
}

pub fn aggregate(values: &[f64]) -> Aggregate {
    if values.is_empty() {
        return Aggregate {
            mean: f64::NAN,
            ci95: f64::NAN,
        };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        log::warn!("single-sample aggregate: standard deviation taken as 0");
        return Aggregate { mean, ci95: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Aggregate {
        mean,
        ci95: 1.96 * var.sqrt() / n.sqrt(),
    }
}

/// Metrics of one evaluated task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task_id: u64,
    pub f1_macro: f64,
    pub f1_pos: f64,
    pub f1_neg: f64,
    pub accuracy: f64,
    pub auc: f64,
    pub fpr: f64,
    pub fnr: f64,
}

impl TaskMetrics {
    /// `positive_margins`/`negative_margins` are `score − threshold` of the
    /// actual positives and negatives; acceptance means a non-negative margin.
    pub fn evaluate(task_id: u64, positive_margins: &[f64], negative_margins: &[f64]) -> Result<Self, MetricsError> {
        let c = Confusion::from_pairs(
            positive_margins
                .iter()
                .map(|&m| (true, m >= 0.0))
                .chain(negative_margins.iter().map(|&m| (false, m >= 0.0))),
        );
        let (fpr, fnr) = fpr_fnr(&c)?;
        Ok(Self {
            task_id,
            f1_macro: macro_f1(&c),
            f1_pos: f1_positive(&c),
            f1_neg: f1_negative(&c),
            accuracy: accuracy(&c),
            auc: auc(positive_margins, negative_margins)?,
            fpr,
            fnr,
        })
    }
}

pub const METRIC_NAMES: [&str; 7] = ["f1_macro", "f1_pos", "f1_neg", "accuracy", "auc", "fpr", "fnr"];

/// Per-task metrics plus their aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_task: Vec<TaskMetrics>,
    /// One entry per name in [`METRIC_NAMES`], same order.
    pub aggregate: Vec<(String, Aggregate)>,
    pub n_runs: usize,
}

impl EvalReport {
    pub fn from_tasks(per_task: Vec<TaskMetrics>) -> Self {
        let column = |f: fn(&TaskMetrics) -> f64| per_task.iter().map(f).collect::<Vec<_>>();
        let columns: [Vec<f64>; 7] = [
            column(|t| t.f1_macro),
            column(|t| t.f1_pos),
            column(|t| t.f1_neg),
            column(|t| t.accuracy),
            column(|t| t.auc),
            column(|t| t.fpr),
            column(|t| t.fnr),
        ];
        let aggregate = METRIC_NAMES
            .iter()
            .zip(columns.iter())
            .map(|(name, col)| (name.to_string(), aggregate(col)))
            .collect();
        Self {
            n_runs: per_task.len(),
            per_task,
            aggregate,
        }
    }

    pub fn metric(&self, name: &str) -> Option<Aggregate> {
        self.aggregate.iter().find(|(n, _)| n == name).map(|(_, a)| *a)
    }
}
