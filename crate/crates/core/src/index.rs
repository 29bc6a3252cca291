//! Global-descriptor store with exact top-k cosine retrieval and the
//! query difficulty score.
//!
//! The database is desk scale (at most a few thousand images), so retrieval
//! is an exhaustive scan: exact, allocation-light and deterministic.
//! Descriptors are L2-normalized once at insertion, which turns every cosine
//! into a dot product and leaves the ranking unchanged.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::bundle::SceneBundle;
use crate::ids::ImageId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("descriptor dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero-norm descriptor (corrupt input)")]
    ZeroNorm,
    #[error("descriptor contains a non-finite value")]
    NonFinite,
    #[error("duplicate image id {0} in index")]
    DuplicateImage(ImageId),
    #[error("retrieval from an empty index")]
    EmptyIndex,
    #[error("retrieval count must be at least 1")]
    ZeroCount,
}

/// One fixed-length vector summarizing an entire image. Stored L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDescriptor {
    values: Vec<f64>,
}

impl GlobalDescriptor {
    /// Validates and normalizes a raw descriptor vector. Vectors that are
    /// already unit within 1e-12 are stored bit-for-bit, so normalization is
    /// idempotent and canonical files survive load/save cycles unchanged.
    pub fn new(values: Vec<f64>) -> Result<Self, IndexError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(IndexError::NonFinite);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 0.0 {
            return Err(IndexError::ZeroNorm);
        }
        let values = if (norm - 1.0).abs() < 1e-12 {
            values
        } else {
            values.into_iter().map(|v| v / norm).collect()
        };
        Ok(GlobalDescriptor { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Cosine similarity of two raw vectors: `a·b / (‖a‖₂·‖b‖₂)`, clamped to
/// `[−1, 1]`.
pub fn cosine_similarity_raw(a: &[f64], b: &[f64]) -> Result<f64, IndexError> {
    if a.len() != b.len() {
        return Err(IndexError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let norm_a = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_a <= 0.0 || norm_b <= 0.0 {
        return Err(IndexError::ZeroNorm);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (norm_a * norm_b)).clamp(-1.0, 1.0))
}

/// Cosine similarity of two stored (normalized) descriptors; agrees with
/// [`cosine_similarity_raw`] on the original vectors.
pub fn cosine_similarity(a: &GlobalDescriptor, b: &GlobalDescriptor) -> Result<f64, IndexError> {
    if a.dim() != b.dim() {
        return Err(IndexError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// One retrieved image with its similarity to the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievedImage {
    pub image: ImageId,
    pub similarity: f64,
}

/// Retrieval result, descending by similarity with ties broken by ascending
/// image id, so the ordering is reproducible across runs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalList {
    pub items: Vec<RetrievedImage>,
}

impl RetrievalList {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> Vec<ImageId> {
        self.items.iter().map(|r| r.image).collect()
    }
}

/// Write-once store of the reference images' global descriptors.
#[derive(Debug, Clone)]
pub struct DescriptorIndex {
    dimension: usize,
    entries: BTreeMap<ImageId, GlobalDescriptor>,
}

impl DescriptorIndex {
    pub fn new(dimension: usize) -> Self {
        DescriptorIndex {
            dimension,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: ImageId, descriptor: GlobalDescriptor) -> Result<(), IndexError> {
        if descriptor.dim() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                left: self.dimension,
                right: descriptor.dim(),
            });
        }
        if self.entries.contains_key(&id) {
            return Err(IndexError::DuplicateImage(id));
        }
        self.entries.insert(id, descriptor);
        Ok(())
    }

    /// Index over every reference image of a validated bundle.
    pub fn from_bundle(bundle: &SceneBundle) -> Self {
        let mut index = DescriptorIndex::new(bundle.global_dim);
        for (id, image) in &bundle.images {
            index
                .insert(*id, image.global_descriptor.clone())
                .expect("validated bundle has unique ids and uniform dimensions");
        }
        index
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Exact top-k retrieval by cosine similarity. Returns the
    /// `min(k, database size)` most similar images, descending, ties broken
    /// by ascending image id.
    pub fn retrieve_top_k(
        &self,
        query: &GlobalDescriptor,
        k: usize,
    ) -> Result<RetrievalList, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroCount);
        }
        if self.entries.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        if query.dim() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                left: self.dimension,
                right: query.dim(),
            });
        }
        let mut scored: Vec<RetrievedImage> = self
            .entries
            .iter()
            .map(|(id, d)| {
                let dot: f64 = query.values.iter().zip(&d.values).map(|(x, y)| x * y).sum();
                RetrievedImage {
                    image: *id,
                    similarity: dot.clamp(-1.0, 1.0),
                }
            })
            .collect();
        scored.sort_unstable_by(|a, b| {
            b.similarity
                .total_cmp(&a.similarity)
                .then(a.image.cmp(&b.image))
        });
        scored.truncate(k.min(self.entries.len()));
        Ok(RetrievalList { items: scored })
    }

    /// Difficulty score of a query: the mean similarity of its top
    /// `min(n, database size)` retrievals.
    pub fn query_score(&self, query: &GlobalDescriptor, n: usize) -> Result<f64, IndexError> {
        let top = self.retrieve_top_k(query, n)?;
        let sum: f64 = top.items.iter().map(|r| r.similarity).sum();
        Ok(sum / top.items.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn desc(values: &[f64]) -> GlobalDescriptor {
        GlobalDescriptor::new(values.to_vec()).unwrap()
    }

    #[test]
    fn cosine_identity_orthogonal_and_diagonal() {
        let a = desc(&[3.0, 4.0]);
        assert_eq!(cosine_similarity(&a, &a).unwrap(), 1.0);

        let e1 = desc(&[1.0, 0.0]);
        let e2 = desc(&[0.0, 1.0]);
        assert!(cosine_similarity(&e1, &e2).unwrap().abs() < 1e-15);

        let diag = desc(&[1.0, 1.0]);
        let got = cosine_similarity(&e1, &diag).unwrap();
        assert!((got - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_error_cases() {
        assert_eq!(
            cosine_similarity_raw(&[1.0], &[1.0, 2.0]),
            Err(IndexError::DimensionMismatch { left: 1, right: 2 })
        );
        assert_eq!(cosine_similarity_raw(&[0.0, 0.0], &[1.0, 0.0]), Err(IndexError::ZeroNorm));
        assert_eq!(GlobalDescriptor::new(vec![f64::NAN, 1.0]), Err(IndexError::NonFinite));
        assert_eq!(GlobalDescriptor::new(vec![0.0, 0.0]), Err(IndexError::ZeroNorm));
    }

    #[test]
    fn raw_and_normalized_cosine_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let raw = cosine_similarity_raw(&a, &b).unwrap();
            let stored = cosine_similarity(&desc(&a), &desc(&b)).unwrap();
            assert!((raw - stored).abs() < 1e-12);
        }
    }

    fn random_index(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> DescriptorIndex {
        let mut index = DescriptorIndex::new(dim);
        for i in 0..n {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            index.insert(ImageId(i as u32), desc(&v)).unwrap();
        }
        index
    }

    #[test]
    fn top_k_clamps_to_database_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let index = random_index(&mut rng, 3, 8);
        let q: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = index.retrieve_top_k(&desc(&q), 5).unwrap();
        assert_eq!(got.len(), 3);
    }

    #[test]
    fn exact_match_ranks_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut index = random_index(&mut rng, 10, 8);
        let q: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        index.insert(ImageId(99), desc(&q)).unwrap();
        let got = index.retrieve_top_k(&desc(&q), 1).unwrap();
        assert_eq!(got.items[0].image, ImageId(99));
        assert!((got.items[0].similarity - 1.0).abs() < 1e-12);
    }

    /// Brute-force oracle: raw cosine against every entry, full sort with the
    /// same tie rule, computed through [`cosine_similarity_raw`] rather than
    /// the index's normalized dot products.
    fn exhaustive_oracle(entries: &[(ImageId, Vec<f64>)], query: &[f64], k: usize) -> Vec<(ImageId, f64)> {
        let mut all: Vec<(ImageId, f64)> = entries
            .iter()
            .map(|(id, v)| (*id, cosine_similarity_raw(v, query).unwrap()))
            .collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn top_k_matches_exhaustive_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dim = 12;
        let raw: Vec<(ImageId, Vec<f64>)> = (0..50)
            .map(|i| {
                let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                (ImageId(i as u32), v)
            })
            .collect();
        let mut index = DescriptorIndex::new(dim);
        for (id, v) in &raw {
            index.insert(*id, desc(v)).unwrap();
        }
        let query: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();

        let got = index.retrieve_top_k(&desc(&query), 5).unwrap();
        let expected = exhaustive_oracle(&raw, &query, 5);
        assert_eq!(got.len(), expected.len());
        for (g, e) in got.items.iter().zip(&expected) {
            assert_eq!(g.image, e.0);
            assert!((g.similarity - e.1).abs() < 1e-12);
        }

        // query_score equals the mean of the brute-force top 3.
        let score = index.query_score(&desc(&query), 3).unwrap();
        let top3 = exhaustive_oracle(&raw, &query, 3);
        let mean = top3.iter().map(|(_, s)| s).sum::<f64>() / 3.0;
        assert!((score - mean).abs() < 1e-12);
    }

    #[test]
    fn query_score_arithmetic_and_clamping() {
        // Orthogonal basis entries give known similarities to a crafted query.
        let mut index = DescriptorIndex::new(4);
        index.insert(ImageId(0), desc(&[1.0, 0.0, 0.0, 0.0])).unwrap();
        index.insert(ImageId(1), desc(&[0.0, 1.0, 0.0, 0.0])).unwrap();
        // Two-image database, n = 3 clamps to the two available entries.
        let q = desc(&[1.0, 1.0, 0.0, 0.0]);
        let score = index.query_score(&q, 3).unwrap();
        assert!((score - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn empty_index_errors() {
        let index = DescriptorIndex::new(2);
        let q = desc(&[1.0, 0.0]);
        assert_eq!(index.retrieve_top_k(&q, 1), Err(IndexError::EmptyIndex));
        assert_eq!(index.query_score(&q, 3), Err(IndexError::EmptyIndex));
        assert_eq!(
            random_idx_err(),
            Err(IndexError::ZeroCount),
        );
    }

    fn random_idx_err() -> Result<RetrievalList, IndexError> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let index = random_index(&mut rng, 3, 2);
        let q = desc(&[1.0, 0.0]);
        index.retrieve_top_k(&q, 0)
    }

    proptest! {
        #[test]
        fn top_k_prefix_property(seed in 0u64..500, k1 in 1usize..10, extra in 0usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let index = random_index(&mut rng, 20, 6);
            let q: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q = desc(&q);
            let small = index.retrieve_top_k(&q, k1).unwrap();
            let large = index.retrieve_top_k(&q, k1 + extra).unwrap();
            prop_assert_eq!(&small.items[..], &large.items[..small.len()]);
        }

        #[test]
        fn full_retrieval_is_sorted_permutation(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let index = random_index(&mut rng, 15, 6);
            let q: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let all = index.retrieve_top_k(&desc(&q), 15).unwrap();
            prop_assert_eq!(all.len(), 15);
            let mut ids: Vec<u32> = all.items.iter().map(|r| r.image.0).collect();
            for w in all.items.windows(2) {
                prop_assert!(w[0].similarity >= w[1].similarity);
            }
            ids.sort_unstable();
            prop_assert_eq!(ids, (0..15u32).collect::<Vec<_>>());
        }

        #[test]
        fn score_invariant_to_positive_rescaling(seed in 0u64..500, scale in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let index = random_index(&mut rng, 12, 6);
            let raw: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            prop_assume!(raw.iter().map(|v| v * v).sum::<f64>() > 1e-6);
            let scaled: Vec<f64> = raw.iter().map(|v| v * scale).collect();
            let s1 = index.query_score(&desc(&raw), 3).unwrap();
            let s2 = index.query_score(&desc(&scaled), 3).unwrap();
            prop_assert!((s1 - s2).abs() < 1e-9);
        }
    }
}
