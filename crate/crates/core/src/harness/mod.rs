//! End-to-end experiment orchestration: load inputs, sample tasks, classify,
//! score, and write plot-ready outputs.

mod config;
mod output;

use std::path::PathBuf;

use rayon::prelude::*;
use thiserror::Error;

use crate::calibration::{CalibrationError, CalibrationResult};
use crate::embedding_store::{read_embedding_set, EmbeddingSet, StoreError, Taxonomy, TaxonomyError};
use crate::metrics::{EvalReport, MetricsError, TaskMetrics};
use crate::negatives::{
    extend_corpus_with_llm, groundtruth_neighbors, load_corpus, load_transcripts, save_corpus, save_transcripts,
    CompletionBackend, HttpChatClient, NegativeCorpus, NegativesError, NeighborScope,
};
use crate::task_sampler::{
    sample_tasks, sampling_entropy, HierarchicalSampler, SamplerError, Task, TaskSampler, UniformSampler,
};
use crate::thresholding::{drop_self_negatives, Classifier, ClassifierSpec, Decision, Method, ThresholdError};

pub use config::{ExperimentConfig, NegativesSourceKind, SamplerKind, DEFAULT_TASKS};
pub use output::{
    aggregate_csv, per_task_jsonl, sweep_csv, write_run_outputs, write_sweep_outputs, TaskLine, AGGREGATE_FILE,
    EPISODES_FILE, PER_TASK_FILE, SWEEP_FILE,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("no negatives for target {0:?} in the corpus")]
    MissingNegatives(String),
    #[error("no text prototype for negative {label:?} of target {target:?}")]
    MissingNegativePrototype { target: String, label: String },
    #[error("no text prototype for target {0:?}")]
    MissingPrototype(String),
    #[error("task {task_id}: {source}")]
    Task {
        task_id: u64,
        #[source]
        source: Box<HarnessError>,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Negatives(#[from] NegativesError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Stable machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::ConfigInvalid(_) => "config-invalid",
            HarnessError::MissingNegatives(_) => "missing-negatives-for-target",
            HarnessError::MissingNegativePrototype { .. } => "missing-negative-prototype",
            HarnessError::MissingPrototype(_) => "missing-prototype",
            HarnessError::Task { source, .. } => source.kind(),
            HarnessError::Store(_) => "embedding-store",
            HarnessError::Taxonomy(_) => "taxonomy",
            HarnessError::Negatives(_) => "negatives",
            HarnessError::Sampler(_) => "sampler",
            HarnessError::Threshold(_) => "thresholding",
            HarnessError::Calibration(_) => "calibration",
            HarnessError::Metrics(_) => "metrics",
            HarnessError::Json(_) => "json",
            HarnessError::Io { .. } => "io",
        }
    }
}

/// Result of one task: the task, its decisions (positives first, then
/// negatives, in index order) and metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub task: Task,
    pub decisions: Vec<Decision>,
    pub metrics: TaskMetrics,
    pub threshold_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRun {
    pub method: Method,
    pub level: Option<usize>,
    pub spec: ClassifierSpec,
    pub outcomes: Vec<TaskOutcome>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Alpha,
    K,
    PosRate,
    Level,
    ThresholdGrid,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('_', "-").as_str() {
            "alpha" => Ok(SweepAxis::Alpha),
            "k" => Ok(SweepAxis::K),
            "pos-rate" => Ok(SweepAxis::PosRate),
            "level" => Ok(SweepAxis::Level),
            "threshold-grid" => Ok(SweepAxis::ThresholdGrid),
            other => Err(format!(
                "unknown sweep axis {other:?} (expected alpha, k, pos-rate, level, threshold-grid)"
            )),
        }
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::Alpha => "alpha",
            SweepAxis::K => "k",
            SweepAxis::PosRate => "pos-rate",
            SweepAxis::Level => "level",
            SweepAxis::ThresholdGrid => "threshold-grid",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub run: BenchmarkRun,
    /// Threshold-grid sweeps only: mean macro F1 minus the `λ̄` baseline's.
    pub relative_f1_macro: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

/// Loaded inputs of an experiment.
pub struct Benchmark {
    config: ExperimentConfig,
    images: EmbeddingSet,
    prototypes: EmbeddingSet,
    negative_prototypes: Option<EmbeddingSet>,
    taxonomy: Option<Taxonomy>,
    corpus: NegativeCorpus,
    lambda_bar: Option<f64>,
    pool: rayon::ThreadPool,
}

impl Benchmark {
    pub fn load(config: ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let images = read_embedding_set(&config.images)?;
        let prototypes = read_embedding_set(&config.prototypes)?;
        let negative_prototypes = config
            .negative_prototypes
            .as_ref()
            .map(read_embedding_set)
            .transpose()?;
        let taxonomy = config.taxonomy.as_ref().map(Taxonomy::load).transpose()?;
        let corpus = match (&config.corpus, config.negatives) {
            (Some(p), NegativesSourceKind::Corpus) => load_corpus(p)?,
            (Some(p), NegativesSourceKind::Llm) if p.is_file() => load_corpus(p)?,
            _ => NegativeCorpus::new(),
        };
        let lambda_bar = match (config.lambda_bar, &config.calibration) {
            (Some(l), _) => Some(l),
            (None, Some(p)) => Some(CalibrationResult::load(p)?.lambda_bar),
            (None, None) => None,
        };
        Self::from_parts(
            config,
            images,
            prototypes,
            negative_prototypes,
            taxonomy,
            corpus,
            lambda_bar,
        )
    }

    /// Builds a benchmark from in-memory inputs; file paths in `config` are
    /// ignored.
    pub fn from_parts(
        config: ExperimentConfig,
        images: EmbeddingSet,
        prototypes: EmbeddingSet,
        negative_prototypes: Option<EmbeddingSet>,
        taxonomy: Option<Taxonomy>,
        corpus: NegativeCorpus,
        lambda_bar: Option<f64>,
    ) -> Result<Self, HarnessError> {
        if images.dim() != prototypes.dim() || negative_prototypes.as_ref().is_some_and(|n| n.dim() != images.dim()) {
            return Err(HarnessError::ConfigInvalid(
                "embedding dimensions differ across inputs".into(),
            ));
        }
        if config.sampler == SamplerKind::Hierarchical && taxonomy.is_none() {
            return Err(HarnessError::ConfigInvalid(
                "hierarchical sampling needs a taxonomy".into(),
            ));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers.unwrap_or(0))
            .build()
            .map_err(|e| HarnessError::ConfigInvalid(format!("worker pool: {e}")))?;
        Ok(Self {
            config,
            images,
            prototypes,
            negative_prototypes,
            taxonomy,
            corpus,
            lambda_bar,
            pool,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn images(&self) -> &EmbeddingSet {
        &self.images
    }

    pub fn lambda_bar(&self) -> Option<f64> {
        self.lambda_bar
    }

    pub fn corpus(&self) -> &NegativeCorpus {
        &self.corpus
    }

    /// Samples `n_tasks` episodes at positive rate `r` (and `level` for the
    /// hierarchical sampler).
    pub fn sample(&self, r: f64, level: usize) -> Result<Vec<Task>, HarnessError> {
        let c = &self.config;
        let tasks = self.pool.install(|| match c.sampler {
            SamplerKind::Uniform => {
                let s = UniformSampler::new(&self.images, r, c.n_queries)?;
                sample_tasks(&s, c.n_tasks, c.seed)
            }
            SamplerKind::Hierarchical => {
                let tax = self.taxonomy.as_ref().expect("checked at construction");
                let s = HierarchicalSampler::new(&self.images, tax, level, r, c.n_queries)?;
                sample_tasks(&s as &dyn TaskSampler, c.n_tasks, c.seed)
            }
        })?;
        Ok(tasks)
    }

    /// Distinct targets of `tasks` in first-appearance order.
    pub fn targets(tasks: &[Task]) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        tasks
            .iter()
            .filter(|t| seen.insert(t.target_label.as_str()))
            .map(|t| t.target_label.clone())
            .collect()
    }

    /// Queries the LLM for every target missing from the corpus, then persists
    /// the corpus and transcripts.
    pub fn fill_corpus_from_llm<B: CompletionBackend + ?Sized>(
        &mut self,
        tasks: &[Task],
        k: usize,
        backend: &B,
    ) -> Result<usize, HarnessError> {
        let mut transcripts = match &self.config.transcripts {
            Some(p) => load_transcripts(p)?,
            None => Vec::new(),
        };
        let added = extend_corpus_with_llm(&mut self.corpus, &mut transcripts, &Self::targets(tasks), k, backend)?;
        if added > 0 {
            if let Some(p) = &self.config.corpus {
                save_corpus(&self.corpus, p)?;
            }
            if let Some(p) = &self.config.transcripts {
                save_transcripts(&transcripts, p)?;
            }
        }
        Ok(added)
    }

    fn negative_labels(&self, task: &Task, k: usize) -> Result<Vec<String>, HarnessError> {
        match self.config.negatives {
            NegativesSourceKind::Corpus | NegativesSourceKind::Llm => self
                .corpus
                .get(&task.target_label, k)
                .map(|s| s.negatives().to_vec())
                .ok_or_else(|| HarnessError::MissingNegatives(task.target_label.clone())),
            NegativesSourceKind::Groundtruth => {
                let scope = match (&self.taxonomy, &task.target_node_path) {
                    (Some(taxonomy), Some(path)) => Some(NeighborScope {
                        taxonomy,
                        target_path: path,
                    }),
                    _ => None,
                };
                Ok(groundtruth_neighbors(&task.target_label, k, &self.prototypes, scope)?
                    .negatives()
                    .to_vec())
            }
        }
    }

    fn negative_rows(&self, task: &Task, k: usize) -> Result<Vec<&[f32]>, HarnessError> {
        let labels = self.negative_labels(task, k)?;
        let keep = drop_self_negatives(&task.target_label, &labels);
        let set = self.negative_prototypes.as_ref().unwrap_or(&self.prototypes);
        keep.into_iter()
            .map(|i| {
                let label = &labels[i];
                let row = set.find_label(label).or_else(|| {
                    let folded = label.to_lowercase();
                    set.labels().iter().position(|l| l.to_lowercase() == folded)
                });
                row.map(|r| set.row(r))
                    .ok_or_else(|| HarnessError::MissingNegativePrototype {
                        target: task.target_label.clone(),
                        label: label.clone(),
                    })
            })
            .collect()
    }

    fn evaluate_task(&self, task: &Task, spec: &ClassifierSpec) -> Result<TaskOutcome, HarnessError> {
        let target = self
            .prototypes
            .find_label(&task.target_label)
            .ok_or_else(|| HarnessError::MissingPrototype(task.target_label.clone()))?;
        let negatives = if spec.method.uses_negatives() {
            self.negative_rows(task, spec.k)?
        } else {
            Vec::new()
        };
        let classifier = Classifier::new(*spec, self.prototypes.row(target), &negatives)?;
        let decisions = task
            .positive_indices
            .iter()
            .chain(&task.negative_indices)
            .map(|&i| classifier.decide(self.images.row(i)))
            .collect::<Result<Vec<_>, _>>()?;
        let (pos, neg) = decisions.split_at(task.positive_indices.len());
        let margins = |d: &[Decision]| d.iter().map(Decision::margin).collect::<Vec<_>>();
        let metrics = TaskMetrics::evaluate(task.task_id, &margins(pos), &margins(neg))?;
        let threshold_mean = decisions.iter().map(|d| d.threshold).sum::<f64>() / decisions.len() as f64;
        Ok(TaskOutcome {
            task: task.clone(),
            decisions,
            metrics,
            threshold_mean,
        })
    }

    /// Classifies every task with `spec`. Output order follows `tasks`.
    pub fn evaluate(&self, tasks: &[Task], spec: &ClassifierSpec) -> Result<BenchmarkRun, HarnessError> {
        spec.validate()?;
        let outcomes = self.pool.install(|| {
            tasks
                .par_iter()
                .map(|t| {
                    self.evaluate_task(t, spec).map_err(|e| HarnessError::Task {
                        task_id: t.task_id,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<_>, _>>()
        })?;
        let report = EvalReport::from_tasks(outcomes.iter().map(|o| o.metrics).collect());
        Ok(BenchmarkRun {
            method: spec.method,
            level: tasks.first().and_then(|t| t.level),
            spec: *spec,
            outcomes,
            report,
        })
    }

    /// The configured spec with the resolved `λ̄`.
    pub fn spec(&self) -> ClassifierSpec {
        self.config.classifier_spec(self.lambda_bar)
    }

    /// Samples the configured tasks and evaluates the configured method.
    pub fn run(&self) -> Result<BenchmarkRun, HarnessError> {
        let tasks = self.sample(self.config.r, self.config.level)?;
        self.evaluate(&tasks, &self.spec())
    }

    /// One run per axis value. Tasks are shared across values unless the axis
    /// changes how they are sampled.
    pub fn run_sweep(&self, axis: SweepAxis, values: &[f64]) -> Result<SweepTable, HarnessError> {
        let base = self.spec();
        let shared = match axis {
            SweepAxis::PosRate | SweepAxis::Level => None,
            _ => Some(self.sample(self.config.r, self.config.level)?),
        };
        let baseline = match axis {
            SweepAxis::ThresholdGrid => {
                let lambda = self.lambda_bar.ok_or_else(|| {
                    HarnessError::ConfigInvalid("threshold-grid sweep needs a baseline lambda_bar".into())
                })?;
                let mut spec = base;
                spec.lambda_bar = Some(lambda);
                let run = self.evaluate(shared.as_deref().expect("shared tasks"), &spec)?;
                Some(run.report.metric("f1_macro").expect("metric").mean)
            }
            _ => None,
        };
        let mut rows = Vec::with_capacity(values.len());
        for &value in values {
            let mut spec = base;
            let resampled;
            let tasks: &[Task] = match axis {
                SweepAxis::Alpha => {
                    spec.alpha = value;
                    shared.as_deref().expect("shared tasks")
                }
                SweepAxis::K => {
                    if value < 1.0 || value.fract() != 0.0 {
                        return Err(HarnessError::ConfigInvalid(format!(
                            "k must be a positive integer, got {value}"
                        )));
                    }
                    spec.k = value as usize;
                    shared.as_deref().expect("shared tasks")
                }
                SweepAxis::ThresholdGrid => {
                    spec.lambda_bar = Some(value);
                    shared.as_deref().expect("shared tasks")
                }
                SweepAxis::PosRate => {
                    resampled = self.sample(value, self.config.level)?;
                    &resampled
                }
                SweepAxis::Level => {
                    if value < 0.0 || value.fract() != 0.0 {
                        return Err(HarnessError::ConfigInvalid(format!(
                            "level must be a non-negative integer, got {value}"
                        )));
                    }
                    resampled = self.sample(self.config.r, value as usize)?;
                    &resampled
                }
            };
            let run = self.evaluate(tasks, &spec)?;
            let relative_f1_macro = baseline.map(|b| run.report.metric("f1_macro").expect("metric").mean - b);
            rows.push(SweepRow {
                value,
                run,
                relative_f1_macro,
            });
        }
        Ok(SweepTable { axis, rows })
    }
}

fn resolve_llm_negatives(
    bench: &mut Benchmark,
    tasks: &[Task],
    k: usize,
    backend: Option<&dyn CompletionBackend>,
) -> Result<(), HarnessError> {
    let c = bench.config();
    if c.negatives != NegativesSourceKind::Llm || !c.method.uses_negatives() {
        return Ok(());
    }
    let added = match backend {
        Some(b) => bench.fill_corpus_from_llm(tasks, k, b)?,
        None => {
            let client = HttpChatClient::new(c.llm.clone())?;
            bench.fill_corpus_from_llm(tasks, k, &client)?
        }
    };
    log::info!("queried negatives for {added} targets");
    Ok(())
}

/// Loads `config`, runs the benchmark, and writes outputs to `out_dir` when
/// set. With `negatives = "llm"`, targets missing from the corpus are queried
/// through `backend` (or the configured HTTP endpoint when `None`).
pub fn run_benchmark(
    config: &ExperimentConfig,
    backend: Option<&dyn CompletionBackend>,
) -> Result<BenchmarkRun, HarnessError> {
    let mut bench = Benchmark::load(config.clone())?;
    let tasks = bench.sample(config.r, config.level)?;
    resolve_llm_negatives(&mut bench, &tasks, config.k, backend)?;
    let run = bench.evaluate(&tasks, &bench.spec())?;
    if let Some(dir) = &config.out_dir {
        write_run_outputs(dir, &config.dataset_name(), &run, bench.images())?;
    }
    Ok(run)
}

/// Sweep counterpart of [`run_benchmark`]; writes `sweep.csv` to `out_dir`.
pub fn run_sweep(
    config: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    backend: Option<&dyn CompletionBackend>,
) -> Result<SweepTable, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::ConfigInvalid("sweep needs at least one value".into()));
    }
    let mut bench = Benchmark::load(config.clone())?;
    if bench.config().negatives == NegativesSourceKind::Llm {
        let k = match axis {
            SweepAxis::K => values.iter().fold(config.k as f64, |a, &b| a.max(b)) as usize,
            _ => config.k,
        };
        let mut tasks = bench.sample(config.r, config.level)?;
        match axis {
            SweepAxis::PosRate => {
                for &r in values {
                    tasks.extend(bench.sample(r, config.level)?);
                }
            }
            SweepAxis::Level => {
                for &l in values {
                    tasks.extend(bench.sample(config.r, l as usize)?);
                }
            }
            _ => {}
        }
        resolve_llm_negatives(&mut bench, &tasks, k, backend)?;
    }
    let table = bench.run_sweep(axis, values)?;
    if let Some(dir) = &config.out_dir {
        write_sweep_outputs(dir, &config.dataset_name(), &table)?;
    }
    Ok(table)
}

/// `(level, entropy in bits, number of candidate nodes)` for every level that
/// has at least one candidate.
pub fn entropy_table(taxonomy: &Taxonomy) -> Vec<(usize, f64, usize)> {
    let mut out = Vec::new();
    for level in 0.. {
        let Ok(h) = sampling_entropy(taxonomy, level) else {
            break;
        };
        let mut nodes: Vec<usize> = taxonomy
            .leaves()
            .iter()
            .filter_map(|&l| taxonomy.ancestor(l, level))
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        out.push((level, h, nodes.len()));
    }
    out
}
