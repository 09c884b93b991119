use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::negatives::LlmConfig;
use crate::thresholding::{ClassifierSpec, Method, DEFAULT_ALPHA, DEFAULT_K};

pub const DEFAULT_TASKS: usize = 1000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    #[default]
    Uniform,
    Hierarchical,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativesSourceKind {
    #[default]
    Corpus,
    Llm,
    Groundtruth,
}

/// Everything one benchmark run needs. Loaded from TOML or JSON; every field
/// has a default so manifests only list what they change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Name written to the aggregate CSV; defaults to the image file stem.
    pub dataset: Option<String>,
    /// Image embeddings (EMB1, kind=image).
    pub images: PathBuf,
    /// Class-label text prototypes (EMB1, kind=text).
    pub prototypes: PathBuf,
    /// Text prototypes of negative labels; defaults to `prototypes`.
    pub negative_prototypes: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub sampler: SamplerKind,
    pub level: usize,
    pub n_tasks: usize,
    pub n_queries: usize,
    pub r: f64,
    pub method: Method,
    pub alpha: f64,
    pub k: usize,
    pub normalize_before_average: bool,
    /// Literal `λ̄`; takes precedence over `calibration`.
    pub lambda_bar: Option<f64>,
    /// Calibration result JSON supplying `λ̄`.
    pub calibration: Option<PathBuf>,
    pub negatives: NegativesSourceKind,
    pub corpus: Option<PathBuf>,
    /// Raw LLM exchanges (cache and replay fixtures).
    pub transcripts: Option<PathBuf>,
    pub llm: LlmConfig,
    pub seed: u64,
    /// Worker threads; `None` uses rayon's default.
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            images: PathBuf::new(),
            prototypes: PathBuf::new(),
            negative_prototypes: None,
            taxonomy: None,
            sampler: SamplerKind::Uniform,
            level: 0,
            n_tasks: DEFAULT_TASKS,
            n_queries: crate::task_sampler::DEFAULT_QUERIES,
            r: crate::task_sampler::DEFAULT_POSITIVE_RATE,
            method: Method::AnpFt,
            alpha: DEFAULT_ALPHA,
            k: DEFAULT_K,
            normalize_before_average: false,
            lambda_bar: None,
            calibration: None,
            negatives: NegativesSourceKind::Corpus,
            corpus: None,
            transcripts: None,
            llm: LlmConfig::default(),
            seed: 0,
            workers: None,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads a `.toml` or `.json` manifest (by extension; TOML otherwise).
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if path.extension().is_some_and(|e| e == "json") {
            Ok(serde_json::from_str(&text)?)
        } else {
            toml::from_str(&text).map_err(|e| HarnessError::ConfigInvalid(e.to_string()))
        }
    }

    pub fn dataset_name(&self) -> String {
        self.dataset.clone().unwrap_or_else(|| {
            self.images
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }

    pub fn classifier_spec(&self, lambda_bar: Option<f64>) -> ClassifierSpec {
        ClassifierSpec {
            method: self.method,
            alpha: self.alpha,
            lambda_bar,
            k: self.k,
            normalize_before_average: self.normalize_before_average,
        }
    }

    /// Checks values and that every referenced input file exists.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let invalid = |m: String| Err(HarnessError::ConfigInvalid(m));
        if self.n_tasks == 0 {
            return invalid("n_tasks must be at least 1".into());
        }
        if self.n_queries < 2 {
            return invalid("n_queries must be at least 2".into());
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            return invalid(format!("positive rate {} outside (0, 1)", self.r));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return invalid(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.k == 0 {
            return invalid("k must be at least 1".into());
        }
        if self.sampler == SamplerKind::Hierarchical && self.taxonomy.is_none() {
            return invalid("hierarchical sampling needs a taxonomy".into());
        }
        if self.method.uses_fixed_threshold() && self.lambda_bar.is_none() && self.calibration.is_none() {
            return invalid(format!("method {} needs lambda_bar or a calibration file", self.method));
        }
        if self.method.uses_negatives()
            && matches!(self.negatives, NegativesSourceKind::Corpus | NegativesSourceKind::Llm)
            && self.corpus.is_none()
        {
            return invalid(format!("method {} needs a negatives corpus path", self.method));
        }
        let mut required: Vec<&Path> = vec![&self.images, &self.prototypes];
        required.extend(self.negative_prototypes.as_deref());
        required.extend(self.taxonomy.as_deref());
        if self.lambda_bar.is_none() {
            required.extend(self.calibration.as_deref());
        }
        if self.method.uses_negatives() && self.negatives == NegativesSourceKind::Corpus {
            required.extend(self.corpus.as_deref());
        }
        for p in required {
            if !p.is_file() {
                return invalid(format!("input file {} does not exist", p.display()));
            }
        }
        Ok(())
    }
}
