//! Negatives taken from the dataset's own classes: the labels whose text
//! prototypes lie closest to the target's.

use std::cmp::Ordering;
use std::collections::HashSet;

use super::{NegativeLabelSet, NegativeSource, NegativesError};
use crate::embedding_store::{EmbeddingSet, Taxonomy};
use crate::similarity::cosine;

/// Restricts candidates to the taxonomic neighbours of the target: classes
/// under the target node's parent but outside the target's own subtree.
#[derive(Debug, Clone, Copy)]
pub struct NeighborScope<'a> {
    pub taxonomy: &'a Taxonomy,
    /// Root-to-node path of the target.
    pub target_path: &'a [String],
}

impl<'a> NeighborScope<'a> {
    fn allowed_names(self) -> Result<HashSet<&'a str>, NegativesError> {
        let tax = self.taxonomy;
        let not_found = || NegativesError::TargetNotFound(self.target_path.join("/"));
        let target = tax.find_path(self.target_path).ok_or_else(not_found)?;
        let Some(parent) = tax.parent(target) else {
            return Ok(HashSet::new());
        };
        Ok((parent..tax.subtree_end(parent))
            .filter(|&n| n != parent && !tax.in_subtree(n, target))
            .map(|n| tax.name(n))
            .collect())
    }
}

/// The `k` labels whose prototypes have the highest cosine to the target's
/// prototype, in descending order; ties go to the lexicographically smaller
/// label.
pub fn groundtruth_neighbors(
    target: &str,
    k: usize,
    prototypes: &EmbeddingSet,
    scope: Option<NeighborScope<'_>>,
) -> Result<NegativeLabelSet, NegativesError> {
    let t = prototypes
        .find_label(target)
        .ok_or_else(|| NegativesError::TargetNotFound(target.to_string()))?;
    let allowed = scope.map(|s| s.allowed_names()).transpose()?;
    let folded = target.to_lowercase();
    let mut seen = HashSet::new();
    let mut ranked = Vec::new();
    for (i, label) in prototypes.labels().iter().enumerate() {
        if label.to_lowercase() == folded || !seen.insert(label.to_lowercase()) {
            continue;
        }
        if allowed.as_ref().is_some_and(|a| !a.contains(label.as_str())) {
            continue;
        }
        let score = cosine(prototypes.row(t), prototypes.row(i)).map_err(|e| NegativesError::InvariantViolation {
            target: target.to_string(),
            reason: format!("prototype of {label:?}: {e}"),
        })?;
        ranked.push((score, label.as_str()));
    }
    if ranked.is_empty() {
        return Err(NegativesError::NoCandidates(target.to_string()));
    }
    ranked.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.1.cmp(b.1))
    });
    let negatives = ranked.into_iter().take(k.max(1)).map(|(_, l)| l.to_string()).collect();
    NegativeLabelSet::new(target, negatives, k.max(1), NegativeSource::Groundtruth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding_store::EmbeddingKind;
    use proptest::prelude::*;

    fn protos(rows: &[(&str, &[f32])]) -> EmbeddingSet {
        EmbeddingSet::from_labeled_rows(EmbeddingKind::Text, rows).unwrap()
    }

    #[test]
    fn nearest_single() {
        // cos(t,a) = 0.9/√0.82 ≈ 0.994, cos(t,b) = 0.
        let p = protos(&[("t", &[1.0, 0.0]), ("a", &[0.9, 0.1]), ("b", &[0.0, 1.0])]);
        assert_eq!(groundtruth_neighbors("t", 1, &p, None).unwrap().negatives(), &["a"]);
        assert_eq!(
            groundtruth_neighbors("t", 5, &p, None).unwrap().negatives(),
            &["a", "b"]
        );
    }

    #[test]
    fn ties_break_by_label() {
        let p = protos(&[("t", &[1.0, 0.0]), ("z", &[1.0, 1.0]), ("m", &[1.0, -1.0])]);
        assert_eq!(
            groundtruth_neighbors("t", 2, &p, None).unwrap().negatives(),
            &["m", "z"]
        );
    }

    #[test]
    fn taxonomy_scope_filters_pool() {
        let tax = Taxonomy::from_paths([["root", "P", "t"], ["root", "P", "a"], ["root", "Q", "b"]]).unwrap();
        let p = protos(&[("t", &[1.0, 0.0]), ("a", &[0.9, 0.1]), ("b", &[0.95, 0.0])]);
        let path: Vec<String> = ["root", "P", "t"].iter().map(|s| s.to_string()).collect();
        let scope = NeighborScope {
            taxonomy: &tax,
            target_path: &path,
        };
        assert_eq!(
            groundtruth_neighbors("t", 2, &p, Some(scope)).unwrap().negatives(),
            &["a"]
        );
        assert_eq!(
            groundtruth_neighbors("t", 2, &p, None).unwrap().negatives(),
            &["b", "a"]
        );
    }

    #[test]
    fn errors() {
        let p = protos(&[("t", &[1.0, 0.0])]);
        assert!(matches!(
            groundtruth_neighbors("x", 1, &p, None),
            Err(NegativesError::TargetNotFound(_))
        ));
        assert!(matches!(
            groundtruth_neighbors("t", 1, &p, None),
            Err(NegativesError::NoCandidates(_))
        ));
    }

    proptest! {
        #[test]
        fn returned_scores_dominate_excluded(
            rows in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 4), 3..20),
            k in 1usize..8,
        ) {
            prop_assume!(rows.iter().all(|r| r.iter().map(|x| x * x).sum::<f32>() > 1e-3));
            let labels: Vec<String> = (0..rows.len()).map(|i| format!("c{i:02}")).collect();
            let pairs: Vec<(&str, &[f32])> = labels.iter().zip(&rows).map(|(l, r)| (l.as_str(), r.as_slice())).collect();
            let p = protos(&pairs);
            let got = groundtruth_neighbors("c00", k, &p, None).unwrap();
            let score = |l: &str| cosine(&rows[0], &rows[labels.iter().position(|x| x == l).unwrap()]).unwrap();
            let kept: Vec<f64> = got.negatives().iter().map(|l| score(l)).collect();
            prop_assert!(kept.windows(2).all(|w| w[0] >= w[1]));
            prop_assert_eq!(kept.len(), k.min(rows.len() - 1));
            let worst_kept = *kept.last().unwrap();
            for l in labels.iter().skip(1).filter(|l| !got.negatives().contains(l)) {
                prop_assert!(score(l) <= worst_kept);
            }
        }
    }
}
