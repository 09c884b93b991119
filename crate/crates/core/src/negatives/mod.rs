//! Negative labels: "visually confusing" classes used to place the rejection
//! boundary of a target class.
//!
//! Three sources are supported: an LLM chat endpoint ([`llm`]), the nearest
//! groundtruth classes in prototype space ([`groundtruth`]), and a cached JSON
//! corpus mapping each target to its negatives.

pub mod groundtruth;
pub mod llm;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil::write_atomic;

pub use groundtruth::{groundtruth_neighbors, NeighborScope};
pub use llm::{
    extend_corpus_with_llm, load_transcripts, parse_chat_response, prompt_for, query_llm_negatives, save_transcripts,
    CompletionBackend, FixtureBackend, HttpChatClient, LlmConfig, Transcript,
};

#[derive(Debug, Error)]
pub enum NegativesError {
    #[error("endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("unparseable response after retry: {0}")]
    UnparseableResponse(String),
    #[error("no negatives left for {0:?} after sanitization")]
    EmptyAfterSanitization(String),
    #[error("no recorded fixture for prompt {0:?}")]
    NoFixture(String),
    #[error("target {0:?} has no prototype")]
    TargetNotFound(String),
    #[error("no candidate negatives for {0:?}")]
    NoCandidates(String),
    #[error("invalid negatives for {target:?}: {reason}")]
    InvariantViolation { target: String, reason: String },
    #[error("corpus parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("io failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeSource {
    Llm,
    Groundtruth,
    File,
}

/// Ordered negatives of one target class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeLabelSet {
    target: String,
    negatives: Vec<String>,
    k: usize,
    source: NegativeSource,
}

impl NegativeLabelSet {
    /// Validates without modifying: no case-insensitive duplicates, no copy of
    /// the target, and between 1 and `k` entries.
    pub fn new(
        target: impl Into<String>,
        negatives: Vec<String>,
        k: usize,
        source: NegativeSource,
    ) -> Result<Self, NegativesError> {
        let target = target.into();
        let violation = |reason: String| NegativesError::InvariantViolation {
            target: target.clone(),
            reason,
        };
        if negatives.is_empty() {
            return Err(violation("empty negative list".into()));
        }
        if negatives.len() > k {
            return Err(violation(format!("{} negatives exceed k = {k}", negatives.len())));
        }
        let folded_target = target.to_lowercase();
        let mut seen = HashSet::new();
        for n in &negatives {
            let folded = n.to_lowercase();
            if folded == folded_target {
                return Err(violation(format!("{n:?} is the target itself")));
            }
            if !seen.insert(folded) {
                return Err(violation(format!("duplicate negative {n:?}")));
            }
        }
        Ok(Self {
            target,
            negatives,
            k,
            source,
        })
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn negatives(&self) -> &[String] {
        &self.negatives
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn source(&self) -> NegativeSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.negatives.is_empty()
    }

    /// The first `k` negatives.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.max(1);
        Self {
            target: self.target.clone(),
            negatives: self.negatives.iter().take(k).cloned().collect(),
            k,
            source: self.source,
        }
    }
}

/// Strips list decoration from one item: enumeration markers such as `1.`,
/// `2)`, `-`, surrounding whitespace and quotes. Repeats until stable.
fn clean_item(item: &str) -> &str {
    const QUOTES: &[char] = &['"', '\'', '`', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}'];
    let mut s = item;
    loop {
        let before = s;
        s = s.trim().trim_matches(QUOTES);
        let marker_len = s
            .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | ')' | '-' | '*')))
            .unwrap_or(s.len());
        let (marker, rest) = s.split_at(marker_len);
        // A bare digit run glued to text ("3D printer") is part of the name.
        let is_marker = !marker.is_empty()
            && (rest.is_empty()
                || rest.starts_with(char::is_whitespace)
                || marker.contains(|c: char| !c.is_ascii_digit()));
        if is_marker {
            s = rest;
        }
        if s == before {
            return s;
        }
    }
}

/// Parses a raw LLM answer into at most `k` distinct negatives.
///
/// Splits on commas and newlines, cleans each item, drops empties and
/// case-insensitive copies of the target, and keeps the first occurrence of
/// case-insensitive duplicates.
pub fn sanitize(raw: &str, target: &str, k: usize) -> Vec<String> {
    let target = target.trim().to_lowercase();
    let mut seen = HashSet::new();
    raw.split([',', '\n', '\r'])
        .map(clean_item)
        .filter(|s| !s.is_empty())
        .filter(|s| s.to_lowercase() != target)
        .filter(|s| seen.insert(s.to_lowercase()))
        .take(k)
        .map(String::from)
        .collect()
}

/// Target label → negatives. Serialized as a JSON object of string lists.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NegativeCorpus {
    entries: BTreeMap<String, NegativeLabelSet>,
}

impl NegativeCorpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, set: NegativeLabelSet) {
        self.entries.insert(set.target.clone(), set);
    }

    pub fn iter(&self) -> impl Iterator<Item = &NegativeLabelSet> {
        self.entries.values()
    }

    pub fn entry(&self, target: &str) -> Option<&NegativeLabelSet> {
        self.entries.get(target).or_else(|| {
            let folded = target.to_lowercase();
            self.entries.values().find(|s| s.target.to_lowercase() == folded)
        })
    }

    /// The first `k` negatives stored for `target`; exact key match first,
    /// then case-insensitive.
    pub fn get(&self, target: &str, k: usize) -> Option<NegativeLabelSet> {
        let set = self.entry(target)?;
        if set.len() < k {
            log::warn!("corpus has {} negatives for {target:?}, {k} requested", set.len());
        }
        Some(set.truncated(k))
    }

    pub fn from_json_str(s: &str) -> Result<Self, NegativesError> {
        let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(s)?;
        let mut corpus = Self::new();
        for (target, negatives) in raw {
            let k = negatives.len();
            corpus.insert(NegativeLabelSet::new(target, negatives, k, NegativeSource::File)?);
        }
        Ok(corpus)
    }

    pub fn to_json_string(&self) -> String {
        let raw: BTreeMap<&str, &[String]> = self.entries.iter().map(|(t, s)| (t.as_str(), s.negatives())).collect();
        serde_json::to_string_pretty(&raw).expect("string map serializes")
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<NegativeCorpus, NegativesError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| NegativesError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    NegativeCorpus::from_json_str(&text)
}

/// Atomically replaces `path` with the corpus.
pub fn save_corpus(corpus: &NegativeCorpus, path: impl AsRef<Path>) -> Result<(), NegativesError> {
    let path = path.as_ref();
    write_atomic(path, corpus.to_json_string().as_bytes()).map_err(|source| NegativesError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sanitize_numbered_duplicates() {
        assert_eq!(sanitize("1. cat\n2. cat\n3. lynx", "dog", 3), vec!["cat", "lynx"]);
    }

    #[test]
    fn sanitize_drops_target_and_truncates() {
        let raw = "Boxer, pug, Bulldog, Pekingese";
        assert_eq!(sanitize(raw, "Pug", 4), vec!["Boxer", "Bulldog", "Pekingese"]);
        assert_eq!(sanitize(raw, "Pug", 2), vec!["Boxer", "Bulldog"]);
    }

    #[test]
    fn sanitize_markers_and_quotes() {
        let raw = "- \"Shih Tzu\"\n2) 'Lhasa Apso'\n* Boston Terrier\n3D printer\n10.  Fries";
        assert_eq!(
            sanitize(raw, "x", 10),
            vec!["Shih Tzu", "Lhasa Apso", "Boston Terrier", "3D printer", "Fries"]
        );
        assert!(sanitize(" , \n 1. \n", "x", 5).is_empty());
    }

    #[test]
    fn label_set_invariants() {
        let ok = NegativeLabelSet::new("cat", vec!["lynx".into(), "dog".into()], 2, NegativeSource::File).unwrap();
        assert_eq!(ok.truncated(1).negatives(), &["lynx".to_string()]);
        for bad in [vec![], vec!["Cat".to_string()], vec!["a".into(), "A".into()]] {
            assert!(NegativeLabelSet::new("cat", bad, 5, NegativeSource::File).is_err());
        }
        assert!(NegativeLabelSet::new("cat", vec!["a".into(), "b".into()], 1, NegativeSource::File).is_err());
    }

    #[test]
    fn corpus_parsing() {
        let c = NegativeCorpus::from_json_str(r#"{"Churros": ["French Fries","Spring Rolls","Donuts"]}"#).unwrap();
        let s = c.get("Churros", 10).unwrap();
        assert_eq!(s.negatives(), &["French Fries", "Spring Rolls", "Donuts"]);
        assert_eq!(s.source(), NegativeSource::File);
        assert_eq!(c.get("churros", 2).unwrap().len(), 2);
        assert!(c.get("Pizza", 2).is_none());
        assert!(NegativeCorpus::from_json_str("{}").unwrap().is_empty());
        assert!(matches!(
            NegativeCorpus::from_json_str(r#"{"cat": ["cat"]}"#),
            Err(NegativesError::InvariantViolation { .. })
        ));
        assert!(matches!(
            NegativeCorpus::from_json_str("[1]"),
            Err(NegativesError::Parse(_))
        ));
    }

    #[test]
    fn corpus_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.json");
        let c = NegativeCorpus::from_json_str(r#"{"b": ["x","y"], "a": ["z"]}"#).unwrap();
        save_corpus(&c, &path).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), c);
        assert!(!dir.path().join("corpus.json.tmp").exists());
    }

    proptest! {
        #[test]
        fn sanitize_is_idempotent(
            items in prop::collection::vec("[ a-zA-Z0-9.)\\-'\"]{0,12}", 0..12),
            target in "[a-z]{1,5}",
            k in 1usize..12,
        ) {
            let raw = items.join(if k % 2 == 0 { "," } else { "\n" });
            let once = sanitize(&raw, &target, k);
            let twice = sanitize(&once.join("\n"), &target, k);
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.len() <= k);
        }
    }
}
