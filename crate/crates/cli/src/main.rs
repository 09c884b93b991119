//! `oneclass`: zero-shot one-class classification benchmarks over embedding
//! files.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oneclass_core::calibration::{calibrate_fixed_threshold, CalibrationConfig, CalibrationMode};
use oneclass_core::embedding_store::{read_embedding_set, Taxonomy};
use oneclass_core::harness::{
    aggregate_csv, entropy_table, run_benchmark, run_sweep, sweep_csv, ExperimentConfig, NegativesSourceKind,
    SamplerKind, SweepAxis,
};
use oneclass_core::negatives::{
    extend_corpus_with_llm, groundtruth_neighbors, load_corpus, load_transcripts, save_corpus, save_transcripts,
    CompletionBackend, FixtureBackend, HttpChatClient, LlmConfig, NegativeCorpus, NeighborScope,
};
use oneclass_core::thresholding::Method;
use serde_json::json;

#[derive(Parser)]
#[command(name = "oneclass", version, about = "Zero-shot one-class classification benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the fixed threshold on a labeled calibration set.
    Calibrate(CalibrateArgs),
    /// Build or extend a negative-label corpus.
    Negatives(NegativesArgs),
    /// Run one benchmark configuration.
    Bench(BenchArgs),
    /// Run the benchmark once per value of one parameter.
    Sweep(SweepArgs),
    /// Per-level sampling entropy of a taxonomy.
    Entropy(EntropyArgs),
    /// Print the metadata of an embedding file.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    /// Labeled image embeddings of the calibration set.
    #[arg(long)]
    images: PathBuf,
    /// Text prototypes for the calibration labels.
    #[arg(long)]
    prototypes: PathBuf,
    /// Number of evenly spaced threshold candidates.
    #[arg(long, default_value_t = oneclass_core::calibration::DEFAULT_GRID_SIZE)]
    grid: usize,
    #[arg(long, default_value_t = oneclass_core::calibration::DEFAULT_CALIBRATION_TASKS)]
    tasks: usize,
    #[arg(long, default_value_t = oneclass_core::task_sampler::DEFAULT_QUERIES)]
    queries: usize,
    #[arg(long, default_value_t = oneclass_core::task_sampler::DEFAULT_POSITIVE_RATE)]
    pos_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::GlobalArgmax)]
    mode: ModeArg,
    /// Where to write the calibration JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    GlobalArgmax,
    MeanOfTaskOptima,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum NegSourceArg {
    Llm,
    Groundtruth,
}

#[derive(Args)]
struct NegativesArgs {
    #[arg(long, value_enum)]
    source: NegSourceArg,
    /// Corpus JSON to create or extend.
    #[arg(long)]
    corpus: PathBuf,
    /// Text prototypes; their labels are the default targets and, for
    /// groundtruth, the candidate pool.
    #[arg(long)]
    prototypes: Option<PathBuf>,
    /// Comma-separated targets (overrides the prototype labels).
    #[arg(long, value_delimiter = ',')]
    targets: Vec<String>,
    #[arg(long, default_value_t = oneclass_core::thresholding::DEFAULT_K)]
    k: usize,
    /// Restricts groundtruth neighbours to the target's taxonomy siblings.
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Raw LLM exchanges are appended here.
    #[arg(long)]
    transcripts: Option<PathBuf>,
    /// Replay recorded transcripts instead of calling the endpoint.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Args, Default)]
struct LlmArgs {
    #[arg(long)]
    llm_url: Option<String>,
    #[arg(long)]
    llm_model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    llm_key_env: Option<String>,
}

impl LlmArgs {
    fn apply(&self, cfg: &mut LlmConfig) {
        if let Some(v) = &self.llm_url {
            cfg.url = v.clone();
        }
        if let Some(v) = &self.llm_model {
            cfg.model = v.clone();
        }
        if let Some(v) = &self.llm_key_env {
            cfg.api_key_env = v.clone();
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SamplerArg {
    Uniform,
    Hierarchical,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum NegativesArg {
    Corpus,
    Llm,
    Groundtruth,
}

/// Experiment flags; each one overrides the config file.
#[derive(Args, Default)]
struct ExperimentArgs {
    /// TOML or JSON experiment manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    prototypes: Option<PathBuf>,
    #[arg(long)]
    negative_prototypes: Option<PathBuf>,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long, value_enum)]
    sampler: Option<SamplerArg>,
    #[arg(long)]
    level: Option<usize>,
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    pos_rate: Option<f64>,
    /// ft, mnp, anp, mnp+ft or anp+ft.
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// Average L2-normalized negative prototypes.
    #[arg(long)]
    normalize_before_average: bool,
    #[arg(long)]
    lambda_bar: Option<f64>,
    /// Calibration JSON written by `calibrate`.
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long, value_enum)]
    negatives: Option<NegativesArg>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    transcripts: Option<PathBuf>,
    /// Replay recorded LLM transcripts instead of calling the endpoint.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    llm: LlmArgs,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($field:ident, $flag:expr) => {
                if let Some(v) = $flag.clone() {
                    c.$field = v;
                }
            };
        }
        macro_rules! set_opt {
            ($field:ident, $flag:expr) => {
                if let Some(v) = $flag.clone() {
                    c.$field = Some(v);
                }
            };
        }
        set_opt!(dataset, self.dataset);
        set!(images, self.images);
        set!(prototypes, self.prototypes);
        set_opt!(negative_prototypes, self.negative_prototypes);
        set_opt!(taxonomy, self.taxonomy);
        if let Some(s) = self.sampler {
            c.sampler = match s {
                SamplerArg::Uniform => SamplerKind::Uniform,
                SamplerArg::Hierarchical => SamplerKind::Hierarchical,
            };
        }
        set!(level, self.level);
        set!(n_tasks, self.tasks);
        set!(n_queries, self.queries);
        set!(r, self.pos_rate);
        set!(method, self.method);
        set!(alpha, self.alpha);
        set!(k, self.k);
        if self.normalize_before_average {
            c.normalize_before_average = true;
        }
        if self.lambda_bar.is_some() {
            c.lambda_bar = self.lambda_bar;
        } else if self.calibration.is_some() {
            c.calibration = self.calibration.clone();
            c.lambda_bar = None;
        }
        if let Some(n) = self.negatives {
            c.negatives = match n {
                NegativesArg::Corpus => NegativesSourceKind::Corpus,
                NegativesArg::Llm => NegativesSourceKind::Llm,
                NegativesArg::Groundtruth => NegativesSourceKind::Groundtruth,
            };
        }
        set_opt!(corpus, self.corpus);
        set_opt!(transcripts, self.transcripts);
        set!(seed, self.seed);
        set_opt!(workers, self.workers);
        set_opt!(out_dir, self.out);
        self.llm.apply(&mut c.llm);
        Ok(c)
    }
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// alpha, k, pos-rate, level or threshold-grid.
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
}

#[derive(Args)]
struct EntropyArgs {
    #[arg(long)]
    taxonomy: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    /// EMB1 file.
    path: PathBuf,
    /// Also list ids and labels.
    #[arg(long)]
    full: bool,
}

/// Error printed as one JSON object on stderr.
#[derive(Debug)]
struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl Display) -> Self {
        Self {
            kind,
            message: message.to_string(),
        }
    }
}

macro_rules! cli_error_from {
    ($($ty:ty => $kind:expr),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::new($kind, e)
            }
        })*
    };
}

cli_error_from! {
    oneclass_core::embedding_store::StoreError => "embedding-store",
    oneclass_core::embedding_store::TaxonomyError => "taxonomy",
    oneclass_core::calibration::CalibrationError => "calibration",
    oneclass_core::negatives::NegativesError => "negatives",
    oneclass_core::task_sampler::SamplerError => "sampler",
}

impl From<oneclass_core::harness::HarnessError> for CliError {
    fn from(e: oneclass_core::harness::HarnessError) -> Self {
        CliError::new(e.kind(), e)
    }
}

fn fixture_backend(path: Option<&Path>) -> Result<Option<FixtureBackend>, CliError> {
    path.map(|p| Ok(FixtureBackend::from_transcripts(&load_transcripts(p)?)))
        .transpose()
}

fn calibrate(a: CalibrateArgs) -> Result<(), CliError> {
    let images = read_embedding_set(&a.images)?;
    let prototypes = read_embedding_set(&a.prototypes)?;
    let config = CalibrationConfig {
        n_tasks: a.tasks,
        queries_per_task: a.queries,
        r: a.pos_rate,
        grid_size: a.grid,
        seed: a.seed,
        mode: match a.mode {
            ModeArg::GlobalArgmax => CalibrationMode::GlobalArgmax,
            ModeArg::MeanOfTaskOptima => CalibrationMode::MeanOfTaskOptima,
        },
    };
    let result = calibrate_fixed_threshold(&images, &prototypes, &config)?;
    result.save(&a.out)?;
    let best = result.argmax().map(|i| result.per_candidate_f1[i]);
    println!(
        "{}",
        json!({"lambda_bar": result.lambda_bar, "grid_size": result.grid.len(), "best_f1_macro": best})
    );
    Ok(())
}

fn negatives(a: NegativesArgs) -> Result<(), CliError> {
    let mut corpus = if a.corpus.is_file() {
        load_corpus(&a.corpus)?
    } else {
        NegativeCorpus::new()
    };
    let prototypes = a.prototypes.as_ref().map(read_embedding_set).transpose()?;
    let targets: Vec<String> = if !a.targets.is_empty() {
        a.targets.clone()
    } else if let Some(p) = &prototypes {
        p.labels().to_vec()
    } else {
        return Err(CliError::new("config-invalid", "give --targets or --prototypes"));
    };
    let added = match a.source {
        NegSourceArg::Llm => {
            let mut transcripts = match &a.transcripts {
                Some(p) if p.is_file() => load_transcripts(p)?,
                _ => Vec::new(),
            };
            let fixtures = fixture_backend(a.fixtures.as_deref())?;
            let client;
            let backend: &dyn CompletionBackend = match &fixtures {
                Some(f) => f,
                None => {
                    let mut cfg = LlmConfig::default();
                    a.llm.apply(&mut cfg);
                    client = HttpChatClient::new(cfg)?;
                    &client
                }
            };
            let added = extend_corpus_with_llm(&mut corpus, &mut transcripts, &targets, a.k, backend)?;
            if let Some(p) = &a.transcripts {
                save_transcripts(&transcripts, p)?;
            }
            added
        }
        NegSourceArg::Groundtruth => {
            let prototypes = prototypes
                .as_ref()
                .ok_or_else(|| CliError::new("config-invalid", "groundtruth negatives need --prototypes"))?;
            let taxonomy = a.taxonomy.as_ref().map(Taxonomy::load).transpose()?;
            let mut added = 0;
            for target in &targets {
                let path = taxonomy.as_ref().map(|t| {
                    t.leaves()
                        .iter()
                        .find(|&&l| t.name(l) == target)
                        .map(|&l| t.path(l))
                        .ok_or_else(|| CliError::new("taxonomy", format!("no taxonomy leaf named {target:?}")))
                });
                let path = path.transpose()?;
                let scope = match (&taxonomy, &path) {
                    (Some(taxonomy), Some(path)) => Some(NeighborScope {
                        taxonomy,
                        target_path: path,
                    }),
                    _ => None,
                };
                corpus.insert(groundtruth_neighbors(target, a.k, prototypes, scope)?);
                added += 1;
            }
            added
        }
    };
    save_corpus(&corpus, &a.corpus)?;
    println!("{}", json!({"added": added, "targets": corpus.len()}));
    Ok(())
}

fn bench(a: BenchArgs) -> Result<(), CliError> {
    let config = a.exp.resolve()?;
    let fixtures = fixture_backend(a.exp.fixtures.as_deref())?;
    let run = run_benchmark(&config, fixtures.as_ref().map(|f| f as &dyn CompletionBackend))?;
    print!("{}", aggregate_csv(&config.dataset_name(), &[&run], true));
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<(), CliError> {
    let config = a.exp.resolve()?;
    let fixtures = fixture_backend(a.exp.fixtures.as_deref())?;
    let table = run_sweep(
        &config,
        a.axis,
        &a.values,
        fixtures.as_ref().map(|f| f as &dyn CompletionBackend),
    )?;
    print!("{}", sweep_csv(&config.dataset_name(), &table));
    Ok(())
}

fn entropy(a: EntropyArgs) -> Result<(), CliError> {
    let taxonomy = Taxonomy::load(&a.taxonomy)?;
    println!("level,entropy_bits,nodes");
    for (level, h, nodes) in entropy_table(&taxonomy) {
        println!("{level},{h},{nodes}");
    }
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<(), CliError> {
    let set = read_embedding_set(&a.path)?;
    let mut out = json!({
        "kind": set.kind(),
        "dim": set.dim(),
        "count": set.len(),
        "prenormalized": set.prenormalized(),
        "model": set.model_tag(),
        "template": set.template(),
        "distinct_labels": set.distinct_labels().len(),
        "has_taxonomy": set.taxonomy_paths().is_some(),
    });
    if a.full {
        out["ids"] = json!(set.ids());
        out["labels"] = json!(set.labels());
    }
    println!("{}", serde_json::to_string_pretty(&out).expect("json value"));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::Negatives(a) => negatives(a),
        Command::Bench(a) => bench(a),
        Command::Sweep(a) => sweep(a),
        Command::Entropy(a) => entropy(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind, "message": e.message}));
            ExitCode::FAILURE
        }
    }
}
