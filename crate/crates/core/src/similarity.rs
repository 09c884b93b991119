//! Cosine score between image embeddings and text prototypes.

use rayon::prelude::*;
use thiserror::Error;

use crate::embedding_store::EmbeddingSet;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimilarityError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero-norm vector")]
    ZeroNorm,
}

/// Euclidean norm, accumulated in `f64`.
#[inline]
pub fn norm<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.widen() * x.widen()).sum::<f64>().sqrt()
}

#[inline]
fn dot<A: Scalar, B: Scalar>(u: &[A], v: &[B]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a.widen() * b.widen()).sum()
}

#[inline]
fn cosine_with_norms<A: Scalar, B: Scalar>(u: &[A], v: &[B], nu: f64, nv: f64) -> f64 {
    dot(u, v) / (nu * nv)
}

/// `uᵀv / (‖u‖‖v‖)`. The two sides may use different element types; all
/// arithmetic happens in `f64`.
pub fn cosine<A: Scalar, B: Scalar>(u: &[A], v: &[B]) -> Result<f64, SimilarityError> {
    if u.len() != v.len() {
        return Err(SimilarityError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(SimilarityError::ZeroNorm);
    }
    Ok(cosine_with_norms(u, v, nu, nv))
}

/// Dense `images × prototypes` score matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Scores every image row against every prototype row. Entry `(i, j)` is
/// bit-identical to `cosine(images.row(i), prototypes.row(j))`.
pub fn score_matrix(images: &EmbeddingSet, prototypes: &EmbeddingSet) -> Result<ScoreMatrix, SimilarityError> {
    if images.dim() != prototypes.dim() {
        return Err(SimilarityError::DimensionMismatch {
            left: images.dim(),
            right: prototypes.dim(),
        });
    }
    let check = |set: &EmbeddingSet| {
        set.rows()
            .map(|r| {
                let n = norm(r);
                if n == 0.0 {
                    Err(SimilarityError::ZeroNorm)
                } else {
                    Ok(n)
                }
            })
            .collect::<Result<Vec<_>, _>>()
    };
    let image_norms = check(images)?;
    let proto_norms = check(prototypes)?;
    let cols = prototypes.len();
    let data = (0..images.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let u = images.row(i);
            let nu = image_norms[i];
            (0..cols).map(move |j| (j, u, nu))
        })
        .map(|(j, u, nu)| cosine_with_norms(u, prototypes.row(j), nu, proto_norms[j]))
        .collect();
    Ok(ScoreMatrix {
        rows: images.len(),
        cols,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding_store::EmbeddingKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn basic_cases() {
        assert_eq!(cosine(&[1.0f32, 0.0], &[0.0f32, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[2.0f32, 0.0], &[1.0f32, 0.0]).unwrap(), 1.0);
        let c = cosine(&[1.0f64, 1.0], &[1.0f64, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert_eq!(
            cosine(&[1.0f32], &[1.0f32, 2.0]),
            Err(SimilarityError::DimensionMismatch { left: 1, right: 2 })
        );
        assert_eq!(cosine(&[0.0f32, 0.0], &[1.0f32, 0.0]), Err(SimilarityError::ZeroNorm));
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> EmbeddingSet {
        let rows: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        let pairs: Vec<(&str, &[f32])> = labels
            .iter()
            .zip(&rows)
            .map(|(l, r)| (l.as_str(), r.as_slice()))
            .collect();
        EmbeddingSet::from_labeled_rows(EmbeddingKind::Image, &pairs).unwrap()
    }

    #[test]
    fn matrix_equals_loop_of_cosines() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let images = random_set(&mut rng, 50, 16);
        let protos = random_set(&mut rng, 10, 16);
        let m = score_matrix(&images, &protos).unwrap();
        assert_eq!((m.rows(), m.cols()), (50, 10));
        for i in 0..50 {
            for j in 0..10 {
                let expected = cosine(images.row(i), protos.row(j)).unwrap();
                assert!((m.get(i, j) - expected).abs() <= 1e-12);
                assert_eq!(m.get(i, j).to_bits(), expected.to_bits());
            }
        }
    }

    #[test]
    fn identity_rows_score_one_on_matches() {
        let set = EmbeddingSet::from_labeled_rows(
            EmbeddingKind::Text,
            &[
                ("a", &[1.0, 0.0, 0.0]),
                ("b", &[0.0, 1.0, 0.0]),
                ("c", &[0.0, 0.0, 1.0]),
            ],
        )
        .unwrap();
        let m = score_matrix(&set, &set).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    proptest! {
        #[test]
        fn symmetric_bounded_scale_invariant(
            pair in (1usize..32).prop_flat_map(|d| (
                prop::collection::vec(-10.0f64..10.0, d),
                prop::collection::vec(-10.0f64..10.0, d),
            )),
            a in 0.01f64..100.0,
            b in 0.01f64..100.0,
        ) {
            let (u, v) = pair;
            prop_assume!(norm(&u) > 1e-6 && norm(&v) > 1e-6);
            let c = cosine(&u, &v).unwrap();
            prop_assert_eq!(c, cosine(&v, &u).unwrap());
            prop_assert!(c.abs() <= 1.0 + 1e-6);
            let su: Vec<f64> = u.iter().map(|x| x * a).collect();
            let sv: Vec<f64> = v.iter().map(|x| x * b).collect();
            prop_assert!((cosine(&su, &sv).unwrap() - c).abs() < 1e-12);
            prop_assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
