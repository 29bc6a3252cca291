//! Local feature matching between a query image and one reference image.
//!
//! The matcher is mutual-nearest-neighbor under cosine similarity with
//! Lowe's ratio test on angular distance. It is deterministic, one-to-one,
//! and emits pairs ordered by query keypoint index. A ratio threshold of
//! exactly 1.0 disables the ratio test and leaves pure mutual-NN matching.

use nalgebra::Vector2;
use thiserror::Error;

use crate::ids::PointId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("descriptor dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("feature set has {keypoints} keypoints but {descriptors} descriptors")]
    CountMismatch { keypoints: usize, descriptors: usize },
    #[error("descriptor rows have inconsistent dimensions ({left} vs {right})")]
    RaggedDescriptors { left: usize, right: usize },
    #[error("non-finite value in feature set")]
    NonFinite,
    #[error("zero-norm local descriptor at index {0}")]
    ZeroNorm(usize),
    #[error("point-link list has {links} entries for {keypoints} keypoints")]
    LinkCountMismatch { links: usize, keypoints: usize },
    #[error("query has zero keypoints")]
    EmptyQuery,
    #[error("ratio threshold must lie in (0, 1], got {0}")]
    InvalidRatioThreshold(f32),
}

/// Matcher knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatcherConfig {
    /// Lowe's ratio gate on angular distance; 1.0 disables the test.
    pub ratio_threshold: f32,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig { ratio_threshold: 0.9 }
    }
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        if !(self.ratio_threshold > 0.0 && self.ratio_threshold <= 1.0) {
            return Err(MatchError::InvalidRatioThreshold(self.ratio_threshold));
        }
        Ok(())
    }
}

/// Keypoints plus local descriptors for one image. Reference images also
/// carry per-keypoint links into the 3D point cloud; query feature sets
/// carry none.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFeatureSet {
    keypoints: Vec<Vector2<f64>>,
    descriptors: Vec<f32>,
    dim: usize,
    point_links: Option<Vec<Option<PointId>>>,
}

impl LocalFeatureSet {
    /// Validates and normalizes a feature set. Local descriptors are stored
    /// L2-normalized (f32; rows already unit within 1e-6 are kept as-is).
    pub fn new(
        keypoints: Vec<Vector2<f64>>,
        descriptors: Vec<Vec<f32>>,
        point_links: Option<Vec<Option<PointId>>>,
    ) -> Result<Self, MatchError> {
        if keypoints.len() != descriptors.len() {
            return Err(MatchError::CountMismatch {
                keypoints: keypoints.len(),
                descriptors: descriptors.len(),
            });
        }
        if let Some(links) = &point_links {
            if links.len() != keypoints.len() {
                return Err(MatchError::LinkCountMismatch {
                    links: links.len(),
                    keypoints: keypoints.len(),
                });
            }
        }
        if keypoints.iter().any(|k| !(k.x.is_finite() && k.y.is_finite())) {
            return Err(MatchError::NonFinite);
        }
        let dim = descriptors.first().map_or(0, |d| d.len());
        let mut flat = Vec::with_capacity(dim * descriptors.len());
        for (i, row) in descriptors.iter().enumerate() {
            if row.len() != dim {
                return Err(MatchError::RaggedDescriptors {
                    left: dim,
                    right: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(MatchError::NonFinite);
            }
            let norm = row.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt();
            if norm <= 0.0 {
                return Err(MatchError::ZeroNorm(i));
            }
            if (norm - 1.0).abs() < 1e-6 {
                flat.extend_from_slice(row);
            } else {
                flat.extend(row.iter().map(|v| (*v as f64 / norm) as f32));
            }
        }
        Ok(LocalFeatureSet {
            keypoints,
            descriptors: flat,
            dim,
            point_links,
        })
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn descriptor_dim(&self) -> usize {
        self.dim
    }

    pub fn keypoints(&self) -> &[Vector2<f64>] {
        &self.keypoints
    }

    pub fn keypoint(&self, i: usize) -> Vector2<f64> {
        self.keypoints[i]
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.descriptors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn has_links(&self) -> bool {
        self.point_links.is_some()
    }

    /// 3D point linked to keypoint `i`, if any.
    pub fn point_link(&self, i: usize) -> Option<PointId> {
        self.point_links.as_ref().and_then(|links| links[i])
    }

    pub fn point_links(&self) -> Option<&[Option<PointId>]> {
        self.point_links.as_deref()
    }

    /// Copy truncated to the first `max` keypoints (file order), used by the
    /// loader's feature cap.
    pub fn truncated(&self, max: usize) -> Self {
        if max >= self.len() {
            return self.clone();
        }
        LocalFeatureSet {
            keypoints: self.keypoints[..max].to_vec(),
            descriptors: self.descriptors[..max * self.dim].to_vec(),
            dim: self.dim,
            point_links: self.point_links.as_ref().map(|l| l[..max].to_vec()),
        }
    }
}

/// One-to-one matches between a query and a reference feature set, ordered
/// by query keypoint index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchSet {
    /// `(query keypoint index, reference keypoint index)` pairs.
    pub pairs: Vec<(usize, usize)>,
    /// Cosine similarity of each pair's descriptors.
    pub scores: Vec<f32>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mutual-nearest-neighbor matching with Lowe's ratio test.
///
/// For every query keypoint the nearest reference descriptor (by cosine
/// similarity) is found; a pair survives when the assignment is mutual and
/// the angular distance to the best neighbor is at most `ratio_threshold`
/// times the distance to the second best. Ties resolve to the lowest index,
/// making the result deterministic.
pub fn match_features(
    query: &LocalFeatureSet,
    reference: &LocalFeatureSet,
    ratio_threshold: f32,
) -> Result<MatchSet, MatchError> {
    if !(ratio_threshold > 0.0 && ratio_threshold <= 1.0) {
        return Err(MatchError::InvalidRatioThreshold(ratio_threshold));
    }
    if query.is_empty() || reference.is_empty() {
        return Ok(MatchSet::default());
    }
    if query.descriptor_dim() != reference.descriptor_dim() {
        return Err(MatchError::DimensionMismatch {
            left: query.descriptor_dim(),
            right: reference.descriptor_dim(),
        });
    }

    let nq = query.len();
    let nr = reference.len();

    // Per-query best and second-best similarity, per-reference best query.
    let mut best = vec![(0usize, f32::NEG_INFINITY, f32::NEG_INFINITY); nq];
    let mut ref_best: Vec<(usize, f32)> = vec![(usize::MAX, f32::NEG_INFINITY); nr];

    for i in 0..nq {
        let qd = query.descriptor(i);
        let (mut bj, mut bs, mut ss) = (0usize, f32::NEG_INFINITY, f32::NEG_INFINITY);
        for j in 0..nr {
            let s = dot(qd, reference.descriptor(j));
            if s > bs {
                ss = bs;
                bs = s;
                bj = j;
            } else if s > ss {
                ss = s;
            }
            if s > ref_best[j].1 {
                ref_best[j] = (i, s);
            }
        }
        best[i] = (bj, bs, ss);
    }

    let mut pairs = Vec::new();
    let mut scores = Vec::new();
    let r = ratio_threshold as f64;
    for (i, &(j, best_sim, second_sim)) in best.iter().enumerate() {
        if ref_best[j].0 != i {
            continue; // not mutual
        }
        if nr > 1 {
            let theta_best = (best_sim as f64).clamp(-1.0, 1.0).acos();
            let theta_second = (second_sim as f64).clamp(-1.0, 1.0).acos();
            if theta_best > r * theta_second {
                continue;
            }
        }
        pairs.push((i, j));
        scores.push(best_sim);
    }
    Ok(MatchSet { pairs, scores })
}

/// Match ratio: matched query keypoints over total query keypoints.
pub fn match_ratio(query: &LocalFeatureSet, matches: &MatchSet) -> Result<f64, MatchError> {
    if query.is_empty() {
        return Err(MatchError::EmptyQuery);
    }
    debug_assert!(matches.pairs.iter().all(|(qi, _)| *qi < query.len()));
    Ok(matches.len() as f64 / query.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| (x / n) as f32).collect()
    }

    fn feature_set(rng: &mut ChaCha8Rng, descriptors: Vec<Vec<f32>>) -> LocalFeatureSet {
        let keypoints = (0..descriptors.len())
            .map(|_| Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)))
            .collect();
        LocalFeatureSet::new(keypoints, descriptors, None).unwrap()
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> LocalFeatureSet {
        let descriptors: Vec<Vec<f32>> = (0..n).map(|_| random_unit(rng, dim)).collect();
        feature_set(rng, descriptors)
    }

    #[test]
    fn identical_sets_match_one_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set = random_set(&mut rng, 12, 16);
        let matches = match_features(&set, &set, 0.9).unwrap();
        assert_eq!(matches.len(), 12);
        for (k, &(qi, ri)) in matches.pairs.iter().enumerate() {
            assert_eq!(qi, ri);
            assert_eq!(qi, k); // ordered by query index
            assert!((matches.scores[k] - 1.0).abs() < 1e-5);
        }
        assert_eq!(match_ratio(&set, &matches).unwrap(), 1.0);
    }

    #[test]
    fn one_to_one_bound_with_ratio_test_disabled() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let query = random_set(&mut rng, 5, 8);
        let reference = random_set(&mut rng, 3, 8);
        let matches = match_features(&query, &reference, 1.0).unwrap();
        assert!(matches.len() <= 3);
        // one-to-one on both sides
        let mut qs: Vec<_> = matches.pairs.iter().map(|p| p.0).collect();
        let mut rs: Vec<_> = matches.pairs.iter().map(|p| p.1).collect();
        qs.dedup();
        rs.sort_unstable();
        rs.dedup();
        assert_eq!(qs.len(), matches.len());
        assert_eq!(rs.len(), matches.len());
    }

    #[test]
    fn empty_inputs_yield_empty_match_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let empty = LocalFeatureSet::new(vec![], vec![], None).unwrap();
        let set = random_set(&mut rng, 4, 8);
        assert!(match_features(&empty, &set, 0.9).unwrap().is_empty());
        assert!(match_features(&set, &empty, 0.9).unwrap().is_empty());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_set(&mut rng, 4, 8);
        let b = random_set(&mut rng, 4, 16);
        assert!(matches!(
            match_features(&a, &b, 0.9),
            Err(MatchError::DimensionMismatch { .. })
        ));
    }

    /// Synthetic landmark test: 20 landmarks with noisy observations on both
    /// sides plus distractors. The ground-truth correspondence is the
    /// landmark identity; matching on the noisy sets must agree with it for
    /// at least 95% of returned pairs.
    #[test]
    fn noisy_landmark_matching_recovers_ground_truth_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dim = 32;
        let sigma = 0.05f64;
        let bases: Vec<Vec<f32>> = (0..20).map(|_| random_unit(&mut rng, dim)).collect();
        let noisy = |rng: &mut ChaCha8Rng, base: &[f32]| -> Vec<f32> {
            base.iter()
                .map(|v| (*v as f64 + sigma * rng.sample::<f64, _>(StandardNormal)) as f32)
                .collect()
        };

        let query_rows: Vec<Vec<f32>> = bases.iter().map(|b| noisy(&mut rng, b)).collect();
        let ref_rows: Vec<Vec<f32>> = bases.iter().map(|b| noisy(&mut rng, b)).collect();

        let mut query_all = query_rows;
        let mut ref_all = ref_rows;
        for _ in 0..5 {
            query_all.push(random_unit(&mut rng, dim));
            ref_all.push(random_unit(&mut rng, dim));
        }
        let query = feature_set(&mut rng, query_all);
        let reference = feature_set(&mut rng, ref_all);

        let matches = match_features(&query, &reference, 0.9).unwrap();
        assert!(matches.len() >= 15, "too few matches: {}", matches.len());
        let correct = matches
            .pairs
            .iter()
            .filter(|(qi, ri)| qi < &20 && qi == ri)
            .count();
        let precision = correct as f64 / matches.len() as f64;
        assert!(precision >= 0.95, "precision {precision} below 0.95");
    }

    #[test]
    fn match_ratio_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let set = random_set(&mut rng, 100, 8);
        let m = MatchSet {
            pairs: (0..25).map(|i| (i, i)).collect(),
            scores: vec![1.0; 25],
        };
        assert_eq!(match_ratio(&set, &m).unwrap(), 0.25);
        assert_eq!(match_ratio(&set, &MatchSet::default()).unwrap(), 0.0);

        let full = random_set(&mut rng, 37, 8);
        let self_match = match_features(&full, &full, 0.9).unwrap();
        assert_eq!(match_ratio(&full, &self_match).unwrap(), 1.0);

        let empty = LocalFeatureSet::new(vec![], vec![], None).unwrap();
        assert_eq!(match_ratio(&empty, &MatchSet::default()), Err(MatchError::EmptyQuery));
    }

    #[test]
    fn constructor_validation() {
        let kp = vec![Vector2::new(1.0, 2.0)];
        assert!(matches!(
            LocalFeatureSet::new(kp.clone(), vec![], None),
            Err(MatchError::CountMismatch { .. })
        ));
        assert!(matches!(
            LocalFeatureSet::new(kp.clone(), vec![vec![0.0, 0.0]], None),
            Err(MatchError::ZeroNorm(0))
        ));
        assert!(matches!(
            LocalFeatureSet::new(kp.clone(), vec![vec![1.0, f32::NAN]], None),
            Err(MatchError::NonFinite)
        ));
        assert!(matches!(
            LocalFeatureSet::new(kp, vec![vec![1.0, 0.0]], Some(vec![])),
            Err(MatchError::LinkCountMismatch { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn match_count_bounded_and_mutual(seed in 0u64..1000, nq in 1usize..24, nr in 1usize..24) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let query = random_set(&mut rng, nq, 8);
            let reference = random_set(&mut rng, nr, 8);
            let matches = match_features(&query, &reference, 0.95).unwrap();
            prop_assert!(matches.len() <= nq.min(nr));
            let ratio = match_ratio(&query, &matches).unwrap();
            prop_assert!((0.0..=1.0).contains(&ratio));

            // mutual-NN property, re-derived by brute force
            for &(qi, ri) in &matches.pairs {
                let qd = query.descriptor(qi);
                let best_r = (0..nr).max_by(|&a, &b| {
                    dot(qd, reference.descriptor(a)).total_cmp(&dot(qd, reference.descriptor(b)))
                        .then(b.cmp(&a)) // prefer lower index on ties
                }).unwrap();
                prop_assert_eq!(best_r, ri);
                let rd = reference.descriptor(ri);
                let best_q = (0..nq).max_by(|&a, &b| {
                    dot(rd, query.descriptor(a)).total_cmp(&dot(rd, query.descriptor(b)))
                        .then(b.cmp(&a))
                }).unwrap();
                prop_assert_eq!(best_q, qi);
            }
        }

        #[test]
        fn reference_permutation_preserves_pairs(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let nq = 10;
            let nr = 12;
            let query = random_set(&mut rng, nq, 8);
            let ref_rows: Vec<Vec<f32>> = (0..nr).map(|_| random_unit(&mut rng, 8)).collect();
            let ref_kps: Vec<Vector2<f64>> = (0..nr)
                .map(|_| Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)))
                .collect();
            let reference =
                LocalFeatureSet::new(ref_kps.clone(), ref_rows.clone(), None).unwrap();

            let mut perm: Vec<usize> = (0..nr).collect();
            perm.shuffle(&mut rng);
            let permuted = LocalFeatureSet::new(
                perm.iter().map(|&j| ref_kps[j]).collect(),
                perm.iter().map(|&j| ref_rows[j].clone()).collect(),
                None,
            ).unwrap();

            let direct = match_features(&query, &reference, 0.9).unwrap();
            let shuffled = match_features(&query, &permuted, 0.9).unwrap();

            // Map shuffled reference indices back through the permutation.
            let unmapped: Vec<(usize, usize)> = shuffled
                .pairs
                .iter()
                .map(|&(qi, rj)| (qi, perm[rj]))
                .collect();
            prop_assert_eq!(direct.pairs, unmapped);
        }
    }
}
