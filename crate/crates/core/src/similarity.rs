//! Cosine similarity between frame embeddings and the per-video similarity matrix.

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::frames::EmbeddingSequence;

/// Tolerance on symmetry, unit diagonal and range of a [`SimilarityMatrix`].
pub const MATRIX_TOL: f64 = 1e-9;

/// `a . b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "vector lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::invalid("cosine similarity of empty vectors"));
    }
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine similarity of a zero vector".into()));
    }
    if !(na.is_finite() && nb.is_finite()) {
        return Err(Error::invalid("cosine similarity of non-finite vector"));
    }
    Ok((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Symmetric `l x l` matrix of pairwise frame similarities for one video.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub video_id: String,
    pub interval_seconds: f64,
    values: Array2<f64>,
}

impl SimilarityMatrix {
    /// Wraps `values` after checking the symmetric, unit-diagonal, bounded-range invariants.
    pub fn new(
        video_id: impl Into<String>,
        interval_seconds: f64,
        values: Array2<f64>,
    ) -> Result<Self> {
        let video_id = video_id.into();
        if !(interval_seconds.is_finite() && interval_seconds > 0.0) {
            return Err(Error::invalid(format!(
                "interval must be finite and > 0, got {interval_seconds}"
            )));
        }
        let n = values.nrows();
        if n == 0 || values.ncols() != n {
            return Err(Error::invalid(format!(
                "similarity matrix must be square and non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        for i in 0..n {
            if (values[[i, i]] - 1.0).abs() > MATRIX_TOL {
                return Err(Error::invalid(format!(
                    "diagonal entry {i} is {}, expected 1",
                    values[[i, i]]
                )));
            }
            for j in 0..n {
                let v = values[[i, j]];
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i });
                }
                if v.abs() > 1.0 + MATRIX_TOL {
                    return Err(Error::invalid(format!("entry ({i}, {j}) = {v} outside [-1, 1]")));
                }
                if (v - values[[j, i]]).abs() > MATRIX_TOL {
                    return Err(Error::invalid(format!("matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self {
            video_id,
            interval_seconds,
            values,
        })
    }

    /// Number of frames `l`.
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }
}

/// Pairwise cosine similarities of every embedding row.
pub fn build_similarity_matrix(emb: &EmbeddingSequence) -> Result<SimilarityMatrix> {
    let x = &emb.embeddings;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::invalid("embedding sequence is empty"));
    }
    let mut norms = Vec::with_capacity(n);
    for (row, r) in x.rows().into_iter().enumerate() {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row });
        }
        let norm = r.dot(&r).sqrt();
        if norm == 0.0 {
            return Err(Error::Degenerate(format!("embedding row {row} has zero norm")));
        }
        norms.push(norm);
    }

    let mut values = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let ri = x.row(i);
        for j in i..n {
            let s = (ri.dot(&x.row(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            values[[i, j]] = s;
            values[[j, i]] = s;
        }
    }
    SimilarityMatrix::new(emb.video_id.clone(), emb.interval_seconds, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit_rows(rng: &mut ChaCha8Rng, n: usize, e: usize) -> Array2<f64> {
        let mut x = Array2::<f64>::from_shape_fn((n, e), |_| rng.random_range(-1.0..1.0));
        for mut row in x.rows_mut() {
            let norm = row.dot(&row).sqrt();
            row /= norm;
        }
        x
    }

    #[test]
    fn cosine_examples() {
        let c = |a: Array1<f64>, b: Array1<f64>| cosine_similarity(a.view(), b.view()).unwrap();
        assert_eq!(c(array![1.0, 0.0], array![1.0, 0.0]), 1.0);
        assert_eq!(c(array![1.0, 0.0], array![0.0, 1.0]), 0.0);
        assert!((c(array![1.0, 1.0], array![-1.0, -1.0]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_rejects_degenerate() {
        let z = array![0.0, 0.0];
        let a = array![1.0, 0.0];
        assert!(matches!(cosine_similarity(z.view(), a.view()), Err(Error::Degenerate(_))));
        assert!(cosine_similarity(a.view(), array![1.0].view()).is_err());
    }

    #[test]
    fn matrix_small_examples() {
        let emb = EmbeddingSequence::new("v", 1.0, array![[0.6, 0.8], [0.6, 0.8]]).unwrap();
        let s = build_similarity_matrix(&emb).unwrap();
        for v in s.values().iter() {
            assert!((v - 1.0).abs() < 1e-15);
        }
        let emb = EmbeddingSequence::new("v", 1.0, array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let s = build_similarity_matrix(&emb).unwrap();
        assert_eq!(s.values(), &array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn matrix_matches_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_unit_rows(&mut rng, 8, 5);
        let emb = EmbeddingSequence::new("v", 1.0, x.clone()).unwrap();
        let s = build_similarity_matrix(&emb).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let mut dot = 0.0;
                let mut ni = 0.0;
                let mut nj = 0.0;
                for k in 0..5 {
                    dot += x[[i, k]] * x[[j, k]];
                    ni += x[[i, k]] * x[[i, k]];
                    nj += x[[j, k]] * x[[j, k]];
                }
                let naive = dot / (ni.sqrt() * nj.sqrt());
                assert!((s.get(i, j) - naive).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matrix_rejects_bad_values() {
        assert!(SimilarityMatrix::new("v", 1.0, array![[1.0, 0.5], [0.4, 1.0]]).is_err());
        assert!(SimilarityMatrix::new("v", 1.0, array![[0.9, 0.0], [0.0, 1.0]]).is_err());
        assert!(SimilarityMatrix::new("v", 1.0, array![[1.0, 1.5], [1.5, 1.0]]).is_err());
    }

    proptest! {
        #[test]
        fn matrix_invariants_hold(seed in any::<u64>(), n in 1usize..12, e in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_unit_rows(&mut rng, n, e);
            let emb = EmbeddingSequence::new("v", 1.0, x).unwrap();
            let s = build_similarity_matrix(&emb).unwrap();
            for i in 0..n {
                prop_assert!((s.get(i, i) - 1.0).abs() <= 1e-9);
                for j in 0..n {
                    prop_assert!(s.get(i, j).abs() <= 1.0 + 1e-9);
                    prop_assert!((s.get(i, j) - s.get(j, i)).abs() <= 1e-9);
                }
            }
            // Gram matrix of unit vectors is PSD.
            for _ in 0..4 {
                let v = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
                let quad = v.dot(&s.values().dot(&v));
                prop_assert!(quad >= -1e-8);
            }
        }

        #[test]
        fn cosine_is_scale_invariant(
            a in prop::collection::vec(-10.0f64..10.0, 1..8),
            c in 1e-3f64..1e3,
        ) {
            let a = Array1::from(a);
            prop_assume!(a.dot(&a) > 1e-12);
            let scaled = &a * c;
            let s = cosine_similarity(a.view(), scaled.view()).unwrap();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn cosine_is_symmetric(
            pair in (1usize..8).prop_flat_map(|n| (
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(-5.0f64..5.0, n),
            )),
        ) {
            let (a, b) = (Array1::from(pair.0), Array1::from(pair.1));
            prop_assume!(a.dot(&a) > 1e-12 && b.dot(&b) > 1e-12);
            let ab = cosine_similarity(a.view(), b.view()).unwrap();
            let ba = cosine_similarity(b.view(), a.view()).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
