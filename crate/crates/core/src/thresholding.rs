//! Decision rule and threshold variants.
//!
//! A query is accepted when its cosine score against the target prototype is
//! at least the threshold. The threshold comes from one of:
//!
//! * `FT`: a fixed global value `λ̄` transferred from a calibration set;
//! * `MNP`: the maximum cosine between the query and each negative prototype;
//! * `ANP`: the cosine between the query and the mean negative prototype;
//! * `MNP+FT` / `ANP+FT`: `α·adaptive + (1−α)·λ̄`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::similarity::{cosine, norm, SimilarityError};

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ThresholdError {
    #[error("no negative prototypes")]
    EmptyNegatives,
    #[error("negative prototypes average to a zero-norm vector")]
    ZeroNormMean,
    #[error("alpha {0} outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("temperature must be positive, got {0}")]
    NonpositiveTemperature(f64),
    #[error("method {0} needs a finite fixed threshold")]
    MissingFixedThreshold(Method),
    #[error("k must be at least 1 for method {0}")]
    ZeroK(Method),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ft")]
    Ft,
    #[serde(rename = "mnp")]
    Mnp,
    #[serde(rename = "anp")]
    Anp,
    #[serde(rename = "mnp+ft", alias = "mnp_ft")]
    MnpFt,
    #[serde(rename = "anp+ft", alias = "anp_ft")]
    AnpFt,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ft, Method::Mnp, Method::Anp, Method::MnpFt, Method::AnpFt];

    pub fn uses_negatives(self) -> bool {
        !matches!(self, Method::Ft)
    }

    pub fn uses_fixed_threshold(self) -> bool {
        matches!(self, Method::Ft | Method::MnpFt | Method::AnpFt)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ft => "FT",
            Method::Mnp => "MNP",
            Method::Anp => "ANP",
            Method::MnpFt => "MNP+FT",
            Method::AnpFt => "ANP+FT",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "+").as_str() {
            "ft" => Ok(Method::Ft),
            "mnp" => Ok(Method::Mnp),
            "anp" => Ok(Method::Anp),
            "mnp+ft" => Ok(Method::MnpFt),
            "anp+ft" => Ok(Method::AnpFt),
            other => Err(format!(
                "unknown method {other:?} (expected ft, mnp, anp, mnp+ft, anp+ft)"
            )),
        }
    }
}

/// Method and hyperparameters of a one-class classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub method: Method,
    pub alpha: f64,
    /// Fixed threshold `λ̄`; required by every method with an `FT` part.
    pub lambda_bar: Option<f64>,
    pub k: usize,
    /// Average L2-normalized negatives instead of the raw encoder outputs.
    #[serde(default)]
    pub normalize_before_average: bool,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self {
            method: Method::AnpFt,
            alpha: DEFAULT_ALPHA,
            lambda_bar: None,
            k: DEFAULT_K,
            normalize_before_average: false,
        }
    }
}

impl ClassifierSpec {
    pub fn new(method: Method, lambda_bar: Option<f64>) -> Self {
        Self {
            method,
            lambda_bar,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ThresholdError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ThresholdError::AlphaOutOfRange(self.alpha));
        }
        if self.method.uses_fixed_threshold() && !self.lambda_bar.is_some_and(f64::is_finite) {
            return Err(ThresholdError::MissingFixedThreshold(self.method));
        }
        if self.method.uses_negatives() && self.k == 0 {
            return Err(ThresholdError::ZeroK(self.method));
        }
        Ok(())
    }
}

/// Outcome of the decision rule for one query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub accepted: bool,
    pub score: f64,
    pub threshold: f64,
}

impl Decision {
    pub fn new(score: f64, threshold: f64) -> Self {
        Self {
            accepted: score >= threshold,
            score,
            threshold,
        }
    }

    pub fn label(&self) -> u8 {
        u8::from(self.accepted)
    }

    /// `score − threshold`; non-negative exactly when accepted.
    pub fn margin(&self) -> f64 {
        self.score - self.threshold
    }
}

/// Maximum cosine between the query and each negative prototype.
pub fn mnp_threshold<A, B, V>(query: &[A], negatives: &[V]) -> Result<f64, ThresholdError>
where
    A: Scalar,
    B: Scalar,
    V: AsRef<[B]>,
{
    if negatives.is_empty() {
        return Err(ThresholdError::EmptyNegatives);
    }
    let mut best = f64::NEG_INFINITY;
    for n in negatives {
        best = best.max(cosine(query, n.as_ref())?);
    }
    Ok(best)
}

/// Component-wise mean of the raw negative prototypes, in `f64`.
pub fn anp_prototype<B, V>(negatives: &[V]) -> Result<Vec<f64>, ThresholdError>
where
    B: Scalar,
    V: AsRef<[B]>,
{
    mean_of(negatives, |_| 1.0)
}

/// Mean of the L2-normalized negative prototypes.
pub fn anp_prototype_normalized<B, V>(negatives: &[V]) -> Result<Vec<f64>, ThresholdError>
where
    B: Scalar,
    V: AsRef<[B]>,
{
    for n in negatives {
        if norm(n.as_ref()) == 0.0 {
            return Err(SimilarityError::ZeroNorm.into());
        }
    }
    mean_of(negatives, |v| 1.0 / norm(v))
}

fn mean_of<B, V>(negatives: &[V], weight: impl Fn(&[B]) -> f64) -> Result<Vec<f64>, ThresholdError>
where
    B: Scalar,
    V: AsRef<[B]>,
{
    let first = negatives.first().ok_or(ThresholdError::EmptyNegatives)?.as_ref();
    let dim = first.len();
    let mut sum = vec![0.0f64; dim];
    for n in negatives {
        let n = n.as_ref();
        if n.len() != dim {
            return Err(SimilarityError::DimensionMismatch {
                left: dim,
                right: n.len(),
            }
            .into());
        }
        let w = weight(n);
        for (s, x) in sum.iter_mut().zip(n) {
            *s += x.widen() * w;
        }
    }
    let k = negatives.len() as f64;
    for s in &mut sum {
        *s /= k;
    }
    if norm(&sum) == 0.0 {
        return Err(ThresholdError::ZeroNormMean);
    }
    Ok(sum)
}

/// Cosine between the query and the mean negative prototype.
pub fn anp_threshold<A, B, V>(query: &[A], negatives: &[V]) -> Result<f64, ThresholdError>
where
    A: Scalar,
    B: Scalar,
    V: AsRef<[B]>,
{
    Ok(cosine(query, &anp_prototype(negatives)?)?)
}

/// `α·adaptive + (1−α)·λ̄`.
pub fn combined_threshold(adaptive: f64, lambda_bar: f64, alpha: f64) -> Result<f64, ThresholdError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ThresholdError::AlphaOutOfRange(alpha));
    }
    Ok(alpha * adaptive + (1.0 - alpha) * lambda_bar)
}

/// Sigmoid of the margin: `1 / (1 + exp(−(score − threshold)/temperature))`.
pub fn acceptance_probability(score: f64, threshold: f64, temperature: f64) -> Result<f64, ThresholdError> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(ThresholdError::NonpositiveTemperature(temperature));
    }
    Ok(1.0 / (1.0 + (-(score - threshold) / temperature).exp()))
}

/// Indices of `negatives` to keep after dropping case-insensitive copies of
/// the target label.
pub fn drop_self_negatives<S: AsRef<str>>(target: &str, negatives: &[S]) -> Vec<usize> {
    let target = target.to_lowercase();
    negatives
        .iter()
        .enumerate()
        .filter(|(_, n)| n.as_ref().to_lowercase() != target)
        .map(|(i, _)| i)
        .collect()
}

/// A classifier bound to one task: target prototype, negative prototypes and
/// a validated spec. Immutable once built.
#[derive(Debug, Clone)]
pub struct Classifier<T: Scalar> {
    spec: ClassifierSpec,
    target: Vec<T>,
    negatives: Vec<Vec<T>>,
    mean_negative: Option<Vec<f64>>,
}

impl<T: Scalar> Classifier<T> {
    pub fn new<V: AsRef<[T]>>(spec: ClassifierSpec, target: &[T], negatives: &[V]) -> Result<Self, ThresholdError> {
        spec.validate()?;
        if norm(target) == 0.0 {
            return Err(SimilarityError::ZeroNorm.into());
        }
        let negatives: Vec<Vec<T>> = if spec.method.uses_negatives() {
            negatives.iter().map(|n| n.as_ref().to_vec()).collect()
        } else {
            Vec::new()
        };
        if spec.method.uses_negatives() && negatives.is_empty() {
            return Err(ThresholdError::EmptyNegatives);
        }
        for n in &negatives {
            if n.len() != target.len() {
                return Err(SimilarityError::DimensionMismatch {
                    left: target.len(),
                    right: n.len(),
                }
                .into());
            }
        }
        let mean_negative = match spec.method {
            Method::Anp | Method::AnpFt if spec.normalize_before_average => Some(anp_prototype_normalized(&negatives)?),
            Method::Anp | Method::AnpFt => Some(anp_prototype(&negatives)?),
            _ => None,
        };
        Ok(Self {
            spec,
            target: target.to_vec(),
            negatives,
            mean_negative,
        })
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    /// The per-query threshold for this classifier's method.
    pub fn threshold(&self, query: &[T]) -> Result<f64, ThresholdError> {
        let fixed = || {
            self.spec
                .lambda_bar
                .ok_or(ThresholdError::MissingFixedThreshold(self.spec.method))
        };
        let adaptive = || -> Result<f64, ThresholdError> {
            match &self.mean_negative {
                Some(mean) => Ok(cosine(query, mean)?),
                None => mnp_threshold(query, &self.negatives),
            }
        };
        match self.spec.method {
            Method::Ft => fixed(),
            Method::Mnp | Method::Anp => adaptive(),
            Method::MnpFt | Method::AnpFt => combined_threshold(adaptive()?, fixed()?, self.spec.alpha),
        }
    }

    pub fn decide(&self, query: &[T]) -> Result<Decision, ThresholdError> {
        let score = cosine(query, &self.target)?;
        Ok(Decision::new(score, self.threshold(query)?))
    }
}

/// One-shot form of [`Classifier::decide`].
pub fn classify<T: Scalar, V: AsRef<[T]>>(
    query: &[T],
    target: &[T],
    negatives: &[V],
    spec: &ClassifierSpec,
) -> Result<Decision, ThresholdError> {
    Classifier::new(*spec, target, negatives)?.decide(query)
}
