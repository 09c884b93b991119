//! One-class episode generation.
//!
//! Two samplers are provided. [`UniformSampler`] picks a target class uniformly
//! and draws negatives from every other class. [`HierarchicalSampler`] picks a
//! taxonomy leaf uniformly, takes its `ℓ`-th ancestor as the positive class and
//! the rest of the `(ℓ+1)`-th ancestor's subtree as the negative pool, which
//! pins the semantic distance between positives and negatives.
//!
//! Every task draws from its own ChaCha stream keyed by `(seed, task_id)`, so
//! a task's content does not depend on worker count or on how many other
//! tasks are sampled.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding_store::{EmbeddingSet, NodeId, Taxonomy, TaxonomyError};

pub const DEFAULT_QUERIES: usize = 100;
pub const DEFAULT_POSITIVE_RATE: f64 = 0.5;
pub const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("could not find a class with enough samples after {0} attempts")]
    InsufficientData(usize),
    #[error("level {0} is too deep: no leaf has an ancestor {1} levels up")]
    LevelTooDeep(usize, usize),
    #[error("positive rate {r} with {n} queries leaves one class empty")]
    InvalidRatio { r: f64, n: usize },
    #[error("hierarchical sampling needs taxonomy paths on every row")]
    MissingTaxonomyPaths,
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

/// One sampled one-class episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub task_id: u64,
    pub target_label: String,
    pub target_node_path: Option<Vec<String>>,
    pub level: Option<usize>,
    /// Row indices into the image set, ascending.
    pub positive_indices: Vec<usize>,
    pub negative_indices: Vec<usize>,
    pub r: f64,
    pub n_queries: usize,
}

/// Audit/replay form of a [`Task`], one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: u64,
    pub target_label: String,
    pub level: Option<usize>,
    pub positive_ids: Vec<String>,
    pub negative_ids: Vec<String>,
    pub r: f64,
}

impl Task {
    pub fn record(&self, set: &EmbeddingSet) -> TaskRecord {
        let ids = |idx: &[usize]| idx.iter().map(|&i| set.ids()[i].clone()).collect();
        TaskRecord {
            task_id: self.task_id,
            target_label: self.target_label.clone(),
            level: self.level,
            positive_ids: ids(&self.positive_indices),
            negative_ids: ids(&self.negative_indices),
            r: self.r,
        }
    }

    /// Checks the task invariants against the set it was drawn from.
    pub fn check(&self, set: &EmbeddingSet) -> Result<(), String> {
        let expected = positive_count(self.r, self.n_queries).map_err(|e| e.to_string())?;
        if self.positive_indices.len() != expected {
            return Err(format!(
                "{} positives, expected {expected}",
                self.positive_indices.len()
            ));
        }
        if self.positive_indices.len() + self.negative_indices.len() != self.n_queries {
            return Err("positives + negatives != n_queries".into());
        }
        let mut all: Vec<usize> = self
            .positive_indices
            .iter()
            .chain(&self.negative_indices)
            .copied()
            .collect();
        all.sort_unstable();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return Err("duplicate or overlapping query indices".into());
        }
        let matches = |i: usize| match &self.target_node_path {
            Some(prefix) => set.taxonomy_paths().is_some_and(|p| p[i].starts_with(prefix)),
            None => set.label(i) == self.target_label,
        };
        if let Some(&i) = self.positive_indices.iter().find(|&&i| !matches(i)) {
            return Err(format!("positive row {i} does not match the target"));
        }
        if let Some(&i) = self.negative_indices.iter().find(|&&i| matches(i)) {
            return Err(format!("negative row {i} matches the target"));
        }
        Ok(())
    }
}

/// `round(r·n)` with halves rounded up. Both classes must end up non-empty.
pub fn positive_count(r: f64, n_queries: usize) -> Result<usize, SamplerError> {
    let invalid = SamplerError::InvalidRatio { r, n: n_queries };
    if !(r > 0.0 && r < 1.0) {
        return Err(invalid);
    }
    let count = (r * n_queries as f64 + 0.5).floor() as usize;
    if count == 0 || count >= n_queries {
        return Err(invalid);
    }
    Ok(count)
}

/// The independent random stream of task `task_id` under `seed`.
pub fn task_rng(seed: u64, task_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task_id);
    rng
}

pub trait TaskSampler: Sync {
    fn sample(&self, task_id: u64, rng: &mut ChaCha8Rng) -> Result<Task, SamplerError>;
}

/// Samples tasks `0..n_tasks` in parallel; output is ordered by task id.
pub fn sample_tasks<S: TaskSampler + ?Sized>(
    sampler: &S,
    n_tasks: usize,
    seed: u64,
) -> Result<Vec<Task>, SamplerError> {
    (0..n_tasks as u64)
        .into_par_iter()
        .map(|id| sampler.sample(id, &mut task_rng(seed, id)))
        .collect()
}

fn draw<R: Rng>(rng: &mut R, pool_len: usize, amount: usize) -> Vec<usize> {
    index::sample(rng, pool_len, amount).into_vec()
}

#[derive(Debug, Clone)]
pub struct UniformSampler<'a> {
    set: &'a EmbeddingSet,
    classes: Vec<String>,
    /// Row indices per class, ascending.
    pools: Vec<Vec<usize>>,
    n_positive: usize,
    n_negative: usize,
    r: f64,
}

impl<'a> UniformSampler<'a> {
    pub fn new(set: &'a EmbeddingSet, r: f64, n_queries: usize) -> Result<Self, SamplerError> {
        let n_positive = positive_count(r, n_queries)?;
        let classes: Vec<String> = set.distinct_labels().into_iter().map(String::from).collect();
        let slot: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let mut pools = vec![Vec::new(); classes.len()];
        for (row, label) in set.labels().iter().enumerate() {
            pools[slot[label.as_str()]].push(row);
        }
        Ok(Self {
            set,
            classes,
            pools,
            n_positive,
            n_negative: n_queries - n_positive,
            r,
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }
}

/// Maps an index into the complement of `pool` (sorted) within `0..n` to the
/// corresponding row.
fn complement_at(pool: &[usize], j: usize) -> usize {
    let mut x = j;
    loop {
        let next = j + pool.partition_point(|&p| p <= x);
        if next == x {
            return x;
        }
        x = next;
    }
}

impl TaskSampler for UniformSampler<'_> {
    fn sample(&self, task_id: u64, rng: &mut ChaCha8Rng) -> Result<Task, SamplerError> {
        if self.classes.len() < 2 {
            return Err(SamplerError::InsufficientData(0));
        }
        for _ in 0..MAX_ATTEMPTS {
            let c = rng.gen_range(0..self.classes.len());
            let pool = &self.pools[c];
            let rest = self.set.len() - pool.len();
            if pool.len() < self.n_positive || rest < self.n_negative {
                continue;
            }
            let mut positive: Vec<usize> = draw(rng, pool.len(), self.n_positive)
                .into_iter()
                .map(|i| pool[i])
                .collect();
            let mut negative: Vec<usize> = draw(rng, rest, self.n_negative)
                .into_iter()
                .map(|j| complement_at(pool, j))
                .collect();
            positive.sort_unstable();
            negative.sort_unstable();
            return Ok(Task {
                task_id,
                target_label: self.classes[c].clone(),
                target_node_path: None,
                level: None,
                positive_indices: positive,
                negative_indices: negative,
                r: self.r,
                n_queries: self.n_positive + self.n_negative,
            });
        }
        Err(SamplerError::InsufficientData(MAX_ATTEMPTS))
    }
}

pub fn uniform_task(
    set: &EmbeddingSet,
    r: f64,
    n_queries: usize,
    task_id: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Task, SamplerError> {
    UniformSampler::new(set, r, n_queries)?.sample(task_id, rng)
}

#[derive(Debug, Clone)]
pub struct HierarchicalSampler<'a> {
    taxonomy: &'a Taxonomy,
    level: usize,
    /// Rows sorted by the pre-order id of their leaf.
    rows_by_leaf: Vec<usize>,
    /// Leaf id of each entry of `rows_by_leaf`.
    leaf_keys: Vec<NodeId>,
    n_positive: usize,
    n_negative: usize,
    r: f64,
}

impl<'a> HierarchicalSampler<'a> {
    pub fn new(
        set: &EmbeddingSet,
        taxonomy: &'a Taxonomy,
        level: usize,
        r: f64,
        n_queries: usize,
    ) -> Result<Self, SamplerError> {
        let n_positive = positive_count(r, n_queries)?;
        if set.taxonomy_paths().is_none() && !set.is_empty() {
            return Err(SamplerError::MissingTaxonomyPaths);
        }
        if !taxonomy
            .leaves()
            .iter()
            .any(|&l| taxonomy.ancestor(l, level + 1).is_some())
        {
            return Err(SamplerError::LevelTooDeep(level, level + 1));
        }
        let leaf_of = taxonomy.leaf_of_rows(set)?;
        let mut rows_by_leaf: Vec<usize> = (0..set.len()).collect();
        rows_by_leaf.sort_by_key(|&row| (leaf_of[row], row));
        let leaf_keys = rows_by_leaf.iter().map(|&row| leaf_of[row]).collect();
        Ok(Self {
            taxonomy,
            level,
            rows_by_leaf,
            leaf_keys,
            n_positive,
            n_negative: n_queries - n_positive,
            r,
        })
    }

    /// Range into `rows_by_leaf` of the rows under `node`.
    fn span(&self, node: NodeId) -> (usize, usize) {
        let end = self.taxonomy.subtree_end(node);
        (
            self.leaf_keys.partition_point(|&l| l < node),
            self.leaf_keys.partition_point(|&l| l < end),
        )
    }
}

impl TaskSampler for HierarchicalSampler<'_> {
    fn sample(&self, task_id: u64, rng: &mut ChaCha8Rng) -> Result<Task, SamplerError> {
        let leaves = self.taxonomy.leaves();
        for _ in 0..MAX_ATTEMPTS {
            let leaf = leaves[rng.gen_range(0..leaves.len())];
            let (Some(target), Some(parent)) = (
                self.taxonomy.ancestor(leaf, self.level),
                self.taxonomy.ancestor(leaf, self.level + 1),
            ) else {
                continue;
            };
            let (plo, phi) = self.span(target);
            let (qlo, qhi) = self.span(parent);
            let before = plo - qlo;
            let neg_len = (qhi - qlo) - (phi - plo);
            if phi - plo < self.n_positive || neg_len < self.n_negative {
                continue;
            }
            let mut positive: Vec<usize> = draw(rng, phi - plo, self.n_positive)
                .into_iter()
                .map(|i| self.rows_by_leaf[plo + i])
                .collect();
            let mut negative: Vec<usize> = draw(rng, neg_len, self.n_negative)
                .into_iter()
                .map(|j| {
                    let k = if j < before { qlo + j } else { phi + (j - before) };
                    self.rows_by_leaf[k]
                })
                .collect();
            positive.sort_unstable();
            negative.sort_unstable();
            return Ok(Task {
                task_id,
                target_label: self.taxonomy.name(target).to_string(),
                target_node_path: Some(self.taxonomy.path(target)),
                level: Some(self.level),
                positive_indices: positive,
                negative_indices: negative,
                r: self.r,
                n_queries: self.n_positive + self.n_negative,
            });
        }
        Err(SamplerError::InsufficientData(MAX_ATTEMPTS))
    }
}

pub fn hierarchical_task(
    set: &EmbeddingSet,
    taxonomy: &Taxonomy,
    level: usize,
    r: f64,
    n_queries: usize,
    task_id: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Task, SamplerError> {
    HierarchicalSampler::new(set, taxonomy, level, r, n_queries)?.sample(task_id, rng)
}

/// Shannon entropy, in bits, of the node drawn at `level` when a leaf is drawn
/// uniformly and replaced by its `level`-th ancestor. Leaves without such an
/// ancestor are left out of the distribution.
pub fn sampling_entropy(taxonomy: &Taxonomy, level: usize) -> Result<f64, SamplerError> {
    let mut counts: BTreeMap<NodeId, usize> = BTreeMap::new();
    for &leaf in taxonomy.leaves() {
        if let Some(a) = taxonomy.ancestor(leaf, level) {
            *counts.entry(a).or_default() += 1;
        }
    }
    let total: usize = counts.values().sum();
    if total == 0 {
        return Err(SamplerError::LevelTooDeep(level, level));
    }
    let total = total as f64;
    // Folding from +0.0 keeps a single-node distribution at 0 rather than -0.
    Ok(counts.values().fold(0.0, |h, &c| {
        let p = c as f64 / total;
        h - p * p.log2()
    }))
}
