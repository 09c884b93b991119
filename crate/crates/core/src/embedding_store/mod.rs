//! Embedding sets, the EMB1 container, and taxonomy trees.

mod emb1;
mod taxonomy;

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use emb1::{read_embedding_set, write_embedding_set, FLAG_PRENORMALIZED, MAGIC, VERSION};
pub use taxonomy::{NodeId, Taxonomy, TaxonomyError, TaxonomyNodeJson};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bad magic: expected \"EMB1\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    VersionUnsupported(u16),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },
    #[error("metadata mismatch: {0}")]
    MetadataMismatch(String),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("row {row} has a non-finite component")]
    NonFinite { row: usize },
    #[error("invalid metadata json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Image,
    Text,
}

impl fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbeddingKind::Image => f.write_str("image"),
            EmbeddingKind::Text => f.write_str("text"),
        }
    }
}

/// A `count × dim` matrix of embeddings with per-row metadata.
///
/// Rows are stored raw, exactly as the extractor wrote them. Construct through
/// [`EmbeddingSet::new`], which enforces the row invariants; the set is
/// immutable afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    kind: EmbeddingKind,
    dim: usize,
    vectors: Vec<f32>,
    ids: Vec<String>,
    labels: Vec<String>,
    taxonomy_paths: Option<Vec<Vec<String>>>,
    model_tag: String,
    template: String,
    prenormalized: bool,
}

/// Metadata needed to build an [`EmbeddingSet`] besides the vectors.
#[derive(Debug, Clone, Default)]
pub struct SetMetadata {
    pub ids: Vec<String>,
    pub labels: Vec<String>,
    pub taxonomy_paths: Option<Vec<Vec<String>>>,
    pub model_tag: String,
    pub template: String,
    pub prenormalized: bool,
}

impl EmbeddingSet {
    pub fn new(kind: EmbeddingKind, dim: usize, vectors: Vec<f32>, meta: SetMetadata) -> Result<Self, StoreError> {
        if dim == 0 {
            return Err(StoreError::MetadataMismatch("dim must be positive".into()));
        }
        let count = meta.ids.len();
        if meta.labels.len() != count {
            return Err(StoreError::MetadataMismatch(format!(
                "{} ids but {} labels",
                count,
                meta.labels.len()
            )));
        }
        if vectors.len() != count * dim {
            return Err(StoreError::MetadataMismatch(format!(
                "{} values do not form {count} rows of dim {dim}",
                vectors.len()
            )));
        }
        let mut seen = HashSet::with_capacity(count);
        for id in &meta.ids {
            if !seen.insert(id.as_str()) {
                return Err(StoreError::DuplicateId(id.clone()));
            }
        }
        for (row, chunk) in vectors.chunks_exact(dim).enumerate() {
            if chunk.iter().any(|x| !x.is_finite()) {
                return Err(StoreError::NonFinite { row });
            }
        }
        if let Some(paths) = &meta.taxonomy_paths {
            if paths.len() != count {
                return Err(StoreError::MetadataMismatch(format!(
                    "{} taxonomy paths for {count} rows",
                    paths.len()
                )));
            }
            for (row, (path, label)) in paths.iter().zip(&meta.labels).enumerate() {
                match path.last() {
                    Some(leaf) if leaf == label => {}
                    Some(leaf) => {
                        return Err(StoreError::MetadataMismatch(format!(
                            "row {row}: taxonomy leaf {leaf:?} differs from label {label:?}"
                        )))
                    }
                    None => return Err(StoreError::MetadataMismatch(format!("row {row}: empty taxonomy path"))),
                }
            }
        }
        Ok(Self {
            kind,
            dim,
            vectors,
            ids: meta.ids,
            labels: meta.labels,
            taxonomy_paths: meta.taxonomy_paths,
            model_tag: meta.model_tag,
            template: meta.template,
            prenormalized: meta.prenormalized,
        })
    }

    /// Convenience constructor for sets whose ids equal their labels, the usual
    /// shape of a text prototype set.
    pub fn from_labeled_rows(kind: EmbeddingKind, rows: &[(&str, &[f32])]) -> Result<Self, StoreError> {
        let dim = rows.first().map_or(1, |(_, v)| v.len());
        let mut vectors = Vec::with_capacity(rows.len() * dim);
        for (label, v) in rows {
            if v.len() != dim {
                return Err(StoreError::MetadataMismatch(format!(
                    "row {label:?} has dim {} instead of {dim}",
                    v.len()
                )));
            }
            vectors.extend_from_slice(v);
        }
        let labels: Vec<String> = rows.iter().map(|(l, _)| l.to_string()).collect();
        Self::new(
            kind,
            dim,
            vectors,
            SetMetadata {
                ids: labels.clone(),
                labels,
                ..SetMetadata::default()
            },
        )
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.vectors.chunks_exact(self.dim)
    }

    /// Row-major payload.
    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn taxonomy_paths(&self) -> Option<&[Vec<String>]> {
        self.taxonomy_paths.as_deref()
    }

    pub fn model_tag(&self) -> &str {
        &self.model_tag
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn prenormalized(&self) -> bool {
        self.prenormalized
    }

    /// Index of the first row carrying `label`.
    pub fn find_label(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Distinct labels in first-occurrence order.
    pub fn distinct_labels(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.labels
            .iter()
            .filter(|l| seen.insert(l.as_str()))
            .map(String::as_str)
            .collect()
    }

    /// Indices of the rows matching `predicate`, in file order.
    pub fn select(&self, predicate: &Predicate) -> Vec<usize> {
        match predicate {
            Predicate::Label(label) => (0..self.len()).filter(|&i| &self.labels[i] == label).collect(),
            // Rows without taxonomy paths never match a prefix.
            Predicate::PathPrefix(prefix) => match &self.taxonomy_paths {
                Some(paths) => paths
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.starts_with(prefix))
                    .map(|(i, _)| i)
                    .collect(),
                None => Vec::new(),
            },
        }
    }
}

/// Row filter for [`EmbeddingSet::select`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Predicate {
    Label(String),
    /// Matches rows whose root-to-leaf taxonomy path starts with this prefix.
    PathPrefix(Vec<String>),
}
