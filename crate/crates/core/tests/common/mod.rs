#![allow(dead_code)]

use std::path::Path;

use oneclass_core::embedding_store::{write_embedding_set, EmbeddingKind, EmbeddingSet, SetMetadata, Taxonomy};
use oneclass_core::negatives::{save_corpus, NegativeCorpus, NegativeLabelSet, NegativeSource};
use oneclass_core::ExperimentConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two groups of three leaves each.
pub const PATHS: [[&str; 3]; 6] = [
    ["animal", "dog", "pug"],
    ["animal", "dog", "boxer"],
    ["animal", "dog", "beagle"],
    ["animal", "food", "churros"],
    ["animal", "food", "waffle"],
    ["animal", "food", "donut"],
];

pub fn classes() -> Vec<&'static str> {
    PATHS.iter().map(|p| p[2]).collect()
}

/// Class `i` has prototype `e_i`; its images are `e_i` plus uniform noise of
/// amplitude 0.1 in every coordinate, so every image scores above 0.9 with
/// its own prototype and below 0.3 with any other leaf. Against the group
/// prototypes, images score above 0.35 inside their group and below 0.2
/// outside it.
pub fn separable(per_class: usize, seed: u64) -> (EmbeddingSet, EmbeddingSet) {
    with_noise(per_class, 0.1, seed)
}

/// [`separable`] with noise amplitude `noise`; above roughly 0.4 classes
/// overlap and every method makes mistakes.
pub fn with_noise(per_class: usize, noise: f32, seed: u64) -> (EmbeddingSet, EmbeddingSet) {
    let dim = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors = Vec::new();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut paths = Vec::new();
    for (c, path) in PATHS.iter().enumerate() {
        for j in 0..per_class {
            for d in 0..dim {
                let base = if d == c { 1.0 } else { 0.0 };
                vectors.push(base + rng.gen_range(-noise..noise));
            }
            ids.push(format!("{}-{j}", path[2]));
            labels.push(path[2].to_string());
            paths.push(path.iter().map(|s| s.to_string()).collect());
        }
    }
    let images = EmbeddingSet::new(
        EmbeddingKind::Image,
        dim,
        vectors,
        SetMetadata {
            ids,
            labels,
            taxonomy_paths: Some(paths),
            model_tag: "synthetic".into(),
            template: String::new(),
            prenormalized: false,
        },
    )
    .unwrap();
    let mut rows: Vec<(&str, Vec<f32>)> = classes()
        .into_iter()
        .enumerate()
        .map(|(c, l)| (l, (0..dim).map(|d| if d == c { 1.0 } else { 0.0 }).collect()))
        .collect();
    // Group prototypes point at the mean of their three leaves.
    for (g, name) in ["dog", "food"].into_iter().enumerate() {
        rows.push((name, (0..dim).map(|d| if d / 3 == g { 1.0 } else { 0.0 }).collect()));
    }
    let refs: Vec<(&str, &[f32])> = rows.iter().map(|(l, v)| (*l, v.as_slice())).collect();
    let prototypes = EmbeddingSet::from_labeled_rows(EmbeddingKind::Text, &refs).unwrap();
    (images, prototypes)
}

pub fn taxonomy() -> Taxonomy {
    Taxonomy::from_paths(PATHS.iter().map(|p| p.to_vec())).unwrap()
}

/// Every class's negatives are all other classes.
pub fn corpus() -> NegativeCorpus {
    let mut corpus = NegativeCorpus::new();
    let all = classes();
    for t in &all {
        let negs: Vec<String> = all.iter().filter(|c| c != &t).map(|c| c.to_string()).collect();
        let k = negs.len();
        corpus.insert(NegativeLabelSet::new(*t, negs, k, NegativeSource::File).unwrap());
    }
    corpus
}

/// Writes the synthetic inputs into `dir` and returns a matching config.
pub fn write_inputs(dir: &Path, per_class: usize) -> ExperimentConfig {
    let (images, prototypes) = separable(per_class, 7);
    let cfg = ExperimentConfig {
        dataset: Some("synthetic".into()),
        images: dir.join("images.emb1"),
        prototypes: dir.join("prototypes.emb1"),
        taxonomy: Some(dir.join("taxonomy.json")),
        corpus: Some(dir.join("corpus.json")),
        n_tasks: 40,
        n_queries: 20,
        k: 5,
        lambda_bar: Some(0.5),
        seed: 42,
        ..ExperimentConfig::default()
    };
    write_embedding_set(&images, &cfg.images).unwrap();
    write_embedding_set(&prototypes, &cfg.prototypes).unwrap();
    taxonomy().save(cfg.taxonomy.as_ref().unwrap()).unwrap();
    save_corpus(&corpus(), cfg.corpus.as_ref().unwrap()).unwrap();
    cfg
}
