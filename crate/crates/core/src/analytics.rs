//! Statistics over localisation runs: the similarity/match-ratio correlation
//! study, ATE/ARE aggregation with bucketed accuracy, per-difficulty
//! breakdowns, and empirical calibration of the difficulty thresholds.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::bundle::{QuerySet, SceneBundle};
use crate::geometry::{rotation_error, translation_error, Pose};
use crate::ids::{ImageId, QueryId};
use crate::index::{DescriptorIndex, IndexError};
use crate::matching::{match_features, match_ratio, MatchError, MatcherConfig};
use crate::pipeline::{QueryRecord, QueryResult};
use crate::policy::{Difficulty, ALL_DIFFICULTIES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("need at least {required} samples, got {got}")]
    TooFewSamples { required: usize, got: usize },
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("invalid fractions: {0}")]
    InvalidFractions(String),
    #[error("missing ground truth for query {0}")]
    MissingGroundTruth(QueryId),
    #[error("empty result set")]
    EmptyResults,
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Pearson product-moment correlation, clamped to `[-1, 1]`.
pub fn pearson(samples: &[(f64, f64)]) -> Result<f64, AnalyticsError> {
    if samples.len() < 2 {
        return Err(AnalyticsError::TooFewSamples {
            required: 2,
            got: samples.len(),
        });
    }
    let n = samples.len() as f64;
    let mean_x = samples.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = samples.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in samples {
        let dx = x - mean_x;
        let dy = y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x <= 0.0 || var_y <= 0.0 {
        return Err(AnalyticsError::DegenerateSample(
            "zero variance in a coordinate".into(),
        ));
    }
    Ok((cov / (var_x * var_y).sqrt()).clamp(-1.0, 1.0))
}

/// Average ranks (1-based), with tied values sharing the mean of their rank
/// range.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average-rank tie handling.
pub fn spearman(samples: &[(f64, f64)]) -> Result<f64, AnalyticsError> {
    if samples.len() < 2 {
        return Err(AnalyticsError::TooFewSamples {
            required: 2,
            got: samples.len(),
        });
    }
    let xs: Vec<f64> = samples.iter().map(|(x, _)| *x).collect();
    let ys: Vec<f64> = samples.iter().map(|(_, y)| *y).collect();
    let rx = average_ranks(&xs);
    let ry = average_ranks(&ys);
    let ranked: Vec<(f64, f64)> = rx.into_iter().zip(ry).collect();
    pearson(&ranked)
}

/// One `(query, reference)` evaluation point of the correlation study.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSample {
    pub query: QueryId,
    pub reference: ImageId,
    pub similarity: f64,
    pub match_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationStudy {
    pub samples: Vec<CorrelationSample>,
    pub pcc: f64,
    pub src: f64,
}

/// Records `(similarity, match ratio)` for every query against each of its
/// top-`k_eval` retrievals and correlates the two quantities.
pub fn correlation_study(
    bundle: &SceneBundle,
    queries: &QuerySet,
    k_eval: usize,
    matcher: MatcherConfig,
) -> Result<CorrelationStudy, AnalyticsError> {
    matcher.validate()?;
    let index = DescriptorIndex::from_bundle(bundle);
    let mut samples = Vec::new();
    for query in &queries.queries {
        let retrieval = index.retrieve_top_k(&query.global_descriptor, k_eval)?;
        for item in &retrieval.items {
            let reference = &bundle.images[&item.image];
            let matches = match_features(&query.features, &reference.features, matcher.ratio_threshold)?;
            let ratio = match_ratio(&query.features, &matches)?;
            samples.push(CorrelationSample {
                query: query.id,
                reference: item.image,
                similarity: item.similarity,
                match_ratio: ratio,
            });
        }
    }
    let points: Vec<(f64, f64)> = samples.iter().map(|s| (s.similarity, s.match_ratio)).collect();
    let pcc = pearson(&points)?;
    let src = spearman(&points)?;
    Ok(CorrelationStudy { samples, pcc, src })
}

/// Accuracy thresholds: (translation meters, rotation degrees), nested.
pub const ACCURACY_BUCKETS: [(f64, f64); 3] = [(0.25, 2.0), (0.5, 5.0), (5.0, 10.0)];

/// Percentage of queries localized within each accuracy bucket. Failed
/// localisations count toward the denominator but no bucket, so the three
/// percentages are nested: `high <= medium <= low`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AccuracyBuckets {
    pub high_pct: f64,
    pub medium_pct: f64,
    pub low_pct: f64,
}

/// Mean/median ATE and ARE over the localized subset of a query group.
/// The error fields are `None` when nothing in the group localized.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorStats {
    pub total: usize,
    pub localized: usize,
    pub failed: usize,
    pub mean_ate_m: Option<f64>,
    pub median_ate_m: Option<f64>,
    pub mean_are_deg: Option<f64>,
    pub median_are_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSummary {
    pub overall: ErrorStats,
    pub buckets: AccuracyBuckets,
    /// Present for the difficulty classes that occur in the results.
    pub per_difficulty: Vec<(Difficulty, ErrorStats)>,
}

/// The slice of a query result that error aggregation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedQuery {
    pub query: QueryId,
    pub difficulty: Option<Difficulty>,
    pub estimate: Option<Pose>,
}

impl From<&QueryResult> for EvaluatedQuery {
    fn from(r: &QueryResult) -> Self {
        EvaluatedQuery {
            query: r.query,
            difficulty: r.difficulty,
            estimate: r.pose.as_ref().map(|e| e.pose),
        }
    }
}

impl From<&QueryRecord> for EvaluatedQuery {
    fn from(r: &QueryRecord) -> Self {
        EvaluatedQuery {
            query: QueryId(r.query),
            difficulty: r.difficulty,
            estimate: r.pose.as_ref().map(|p| p.to_pose()),
        }
    }
}

/// Median with the even-count convention: the mean of the two middle values.
fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn stats_of(errors: &[(f64, f64)], total: usize) -> ErrorStats {
    let localized = errors.len();
    if localized == 0 {
        return ErrorStats {
            total,
            localized,
            failed: total,
            ..ErrorStats::default()
        };
    }
    let mut ates: Vec<f64> = errors.iter().map(|(a, _)| *a).collect();
    let mut ares: Vec<f64> = errors.iter().map(|(_, r)| *r).collect();
    let n = localized as f64;
    ErrorStats {
        total,
        localized,
        failed: total - localized,
        mean_ate_m: Some(ates.iter().sum::<f64>() / n),
        median_ate_m: Some(median(&mut ates)),
        mean_are_deg: Some(ares.iter().sum::<f64>() / n),
        median_are_deg: Some(median(&mut ares)),
    }
}

/// Aggregates pose errors against ground truth, overall and per difficulty
/// class. Failed localisations are excluded from the means and medians but
/// counted in the totals and outside every accuracy bucket.
pub fn summarize_errors(
    results: &[EvaluatedQuery],
    truth: &BTreeMap<QueryId, Pose>,
) -> Result<ErrorSummary, AnalyticsError> {
    if results.is_empty() {
        return Err(AnalyticsError::EmptyResults);
    }
    let mut overall_errors = Vec::new();
    let mut per_difficulty: BTreeMap<Difficulty, (Vec<(f64, f64)>, usize)> = BTreeMap::new();
    let mut in_bucket = [0usize; 3];

    for result in results {
        let gt = truth
            .get(&result.query)
            .ok_or(AnalyticsError::MissingGroundTruth(result.query))?;
        let errors = result
            .estimate
            .as_ref()
            .map(|pose| (translation_error(pose, gt), rotation_error(pose, gt)));
        if let Some((ate, are)) = errors {
            overall_errors.push((ate, are));
            for (i, (t_max, r_max)) in ACCURACY_BUCKETS.iter().enumerate() {
                if ate <= *t_max && are <= *r_max {
                    in_bucket[i] += 1;
                }
            }
        }
        if let Some(difficulty) = result.difficulty {
            let entry = per_difficulty.entry(difficulty).or_default();
            entry.1 += 1;
            if let Some(pair) = errors {
                entry.0.push(pair);
            }
        }
    }

    let total = results.len();
    let pct = |count: usize| 100.0 * count as f64 / total as f64;
    Ok(ErrorSummary {
        overall: stats_of(&overall_errors, total),
        buckets: AccuracyBuckets {
            high_pct: pct(in_bucket[0]),
            medium_pct: pct(in_bucket[1]),
            low_pct: pct(in_bucket[2]),
        },
        per_difficulty: ALL_DIFFICULTIES
            .iter()
            .filter_map(|d| {
                per_difficulty
                    .get(d)
                    .map(|(errors, total)| (*d, stats_of(errors, *total)))
            })
            .collect(),
    })
}

/// Inclusive linear-interpolation quantile (the "type 7" rule) of a sorted
/// sample: index `h = (n-1)p`, interpolated between the bracketing values.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Empirical difficulty thresholds from a score sample: `gamma_high` is the
/// `(1 − easy_fraction)` quantile and `gamma_low` the `hard_fraction`
/// quantile. With `easy_fraction == 0` the returned `gamma_high` sits just
/// above the sample maximum, so no query classifies as easy.
pub fn calibrate_thresholds(
    scores: &[f64],
    easy_fraction: f64,
    hard_fraction: f64,
) -> Result<(f64, f64), AnalyticsError> {
    for (name, f) in [("easy_fraction", easy_fraction), ("hard_fraction", hard_fraction)] {
        if !(f.is_finite() && (0.0..=1.0).contains(&f)) {
            return Err(AnalyticsError::InvalidFractions(format!(
                "{name} must lie in [0, 1], got {f}"
            )));
        }
    }
    if easy_fraction + hard_fraction > 1.0 {
        return Err(AnalyticsError::InvalidFractions(format!(
            "easy_fraction + hard_fraction must not exceed 1, got {}",
            easy_fraction + hard_fraction
        )));
    }
    if scores.len() < 10 {
        return Err(AnalyticsError::TooFewSamples {
            required: 10,
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(AnalyticsError::DegenerateSample("non-finite score".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);

    let gamma_low = quantile_sorted(&sorted, hard_fraction);
    let gamma_high = if easy_fraction == 0.0 {
        sorted[sorted.len() - 1] + 1e-9
    } else {
        quantile_sorted(&sorted, 1.0 - easy_fraction)
    };
    if gamma_low >= gamma_high {
        return Err(AnalyticsError::DegenerateSample(format!(
            "score sample too concentrated: gamma_low {gamma_low} >= gamma_high {gamma_high}"
        )));
    }
    Ok((gamma_low, gamma_high))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pearson_known_cases() {
        let linear: Vec<(f64, f64)> = (1..=10).map(|x| (x as f64, 2.0 * x as f64 + 1.0)).collect();
        assert!((pearson(&linear).unwrap() - 1.0).abs() < 1e-12);

        let inverse: Vec<(f64, f64)> = (1..=10).map(|x| (x as f64, -(x as f64))).collect();
        assert!((pearson(&inverse).unwrap() + 1.0).abs() < 1e-12);

        // Hand computation via the closed form: covariance 3, both variances
        // 5, so r = 3/5.
        let mixed = vec![(1.0, 2.0), (2.0, 1.0), (3.0, 4.0), (4.0, 3.0)];
        assert!((pearson(&mixed).unwrap() - 0.6).abs() < 1e-12);

        assert!(matches!(
            pearson(&[(1.0, 1.0), (1.0, 2.0)]),
            Err(AnalyticsError::DegenerateSample(_))
        ));
        assert!(matches!(
            pearson(&[(1.0, 1.0)]),
            Err(AnalyticsError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn spearman_known_cases() {
        let cubic: Vec<(f64, f64)> = (-3..=3).map(|x| (x as f64, (x as f64).powi(3))).collect();
        assert!((spearman(&cubic).unwrap() - 1.0).abs() < 1e-12);

        let neg_exp: Vec<(f64, f64)> = (-3..=3).map(|x| (x as f64, -(x as f64).exp())).collect();
        assert!((spearman(&neg_exp).unwrap() + 1.0).abs() < 1e-12);

        assert!(matches!(
            spearman(&[(2.0, 1.0), (2.0, 3.0), (2.0, 5.0)]),
            Err(AnalyticsError::DegenerateSample(_))
        ));
    }

    /// Independent oracle for tie handling: rank each coordinate with a
    /// brute-force O(n²) average-rank computation, then correlate the ranks.
    #[test]
    fn spearman_with_ties_matches_rank_oracle() {
        let brute_ranks = |values: &[f64]| -> Vec<f64> {
            values
                .iter()
                .map(|v| {
                    let less = values.iter().filter(|w| *w < v).count() as f64;
                    let equal = values.iter().filter(|w| *w == v).count() as f64;
                    less + (equal + 1.0) / 2.0
                })
                .collect()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let samples: Vec<(f64, f64)> = (0..30)
                .map(|_| {
                    (
                        rng.random_range(0..6) as f64, // heavy ties
                        rng.random_range(0..6) as f64,
                    )
                })
                .collect();
            let xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
            let ys: Vec<f64> = samples.iter().map(|s| s.1).collect();
            let oracle_pairs: Vec<(f64, f64)> = brute_ranks(&xs)
                .into_iter()
                .zip(brute_ranks(&ys))
                .collect();
            match (spearman(&samples), pearson(&oracle_pairs)) {
                (Ok(got), Ok(expected)) => assert!((got - expected).abs() < 1e-12),
                (Err(_), Err(_)) => {}
                (got, expected) => panic!("mismatch: {got:?} vs {expected:?}"),
            }
        }
    }

    fn eq(query: u32, difficulty: Option<Difficulty>, estimate: Option<Pose>) -> EvaluatedQuery {
        EvaluatedQuery {
            query: QueryId(query),
            difficulty,
            estimate,
        }
    }

    #[test]
    fn summarize_exact_poses() {
        use crate::geometry::Quaternion;
        use nalgebra::Vector3;
        let truth_pose = Pose::new(Quaternion::IDENTITY, Vector3::new(1.0, 2.0, 3.0));
        let truth: BTreeMap<QueryId, Pose> = (0..4).map(|i| (QueryId(i), truth_pose)).collect();
        let results: Vec<EvaluatedQuery> =
            (0..4).map(|i| eq(i, Some(Difficulty::Easy), Some(truth_pose))).collect();
        let summary = summarize_errors(&results, &truth).unwrap();
        assert_eq!(summary.overall.localized, 4);
        assert_eq!(summary.overall.mean_ate_m, Some(0.0));
        assert_eq!(summary.overall.median_are_deg, Some(0.0));
        assert_eq!(summary.buckets.high_pct, 100.0);
        assert_eq!(summary.buckets.medium_pct, 100.0);
        assert_eq!(summary.buckets.low_pct, 100.0);
    }

    #[test]
    fn summarize_bucket_boundaries() {
        use crate::geometry::Quaternion;
        use nalgebra::Vector3;
        let truth_pose = Pose::identity();
        let mut truth = BTreeMap::new();
        truth.insert(QueryId(0), truth_pose);
        // 0.3 m translation error, 1 degree rotation error: misses the high
        // bucket, lands in medium and low.
        let est = Pose::new(
            Quaternion::from_axis_angle(&Vector3::x(), 1.0f64.to_radians()),
            Vector3::new(0.3, 0.0, 0.0),
        );
        let summary = summarize_errors(&[eq(0, None, Some(est))], &truth).unwrap();
        assert_eq!(summary.buckets.high_pct, 0.0);
        assert_eq!(summary.buckets.medium_pct, 100.0);
        assert_eq!(summary.buckets.low_pct, 100.0);
        assert!(summary.per_difficulty.is_empty());
    }

    #[test]
    fn summarize_even_count_median_and_failures() {
        use crate::geometry::Quaternion;
        use nalgebra::Vector3;
        let truth: BTreeMap<QueryId, Pose> = (0..5).map(|i| (QueryId(i), Pose::identity())).collect();
        let mut results = Vec::new();
        for (i, cm) in [1.0, 2.0, 3.0, 4.0].iter().enumerate() {
            let est = Pose::new(Quaternion::IDENTITY, Vector3::new(cm / 100.0, 0.0, 0.0));
            results.push(eq(i as u32, Some(Difficulty::Hard), Some(est)));
        }
        results.push(eq(4, Some(Difficulty::Hard), None)); // failure
        let summary = summarize_errors(&results, &truth).unwrap();
        assert_eq!(summary.overall.total, 5);
        assert_eq!(summary.overall.failed, 1);
        assert!((summary.overall.median_ate_m.unwrap() - 0.025).abs() < 1e-12);
        assert!((summary.overall.mean_ate_m.unwrap() - 0.025).abs() < 1e-12);
        // failures stay outside every bucket: 4 of 5 inside
        assert!((summary.buckets.low_pct - 80.0).abs() < 1e-12);
        let hard = &summary.per_difficulty[0];
        assert_eq!(hard.0, Difficulty::Hard);
        assert_eq!(hard.1.total, 5);
        assert_eq!(hard.1.localized, 4);
    }

    #[test]
    fn summarize_requires_ground_truth_and_results() {
        let truth = BTreeMap::new();
        assert!(matches!(summarize_errors(&[], &truth), Err(AnalyticsError::EmptyResults)));
        assert!(matches!(
            summarize_errors(&[eq(7, None, None)], &truth),
            Err(AnalyticsError::MissingGroundTruth(QueryId(7)))
        ));
    }

    #[test]
    fn calibrate_uniform_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<f64> = (0..5000).map(|_| rng.random_range(0.0..1.0)).collect();
        let (lo, hi) = calibrate_thresholds(&scores, 0.2, 0.2).unwrap();
        assert!((lo - 0.2).abs() < 0.03, "gamma_low {lo}");
        assert!((hi - 0.8).abs() < 0.03, "gamma_high {hi}");
    }

    #[test]
    fn calibrate_zero_easy_fraction_disables_easy_class() {
        let scores: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
        let max = 19.0 / 20.0;
        let (_, hi) = calibrate_thresholds(&scores, 0.0, 0.3).unwrap();
        assert!(hi > max);
    }

    #[test]
    fn calibrate_guards() {
        let constant = vec![0.5; 20];
        assert!(matches!(
            calibrate_thresholds(&constant, 0.2, 0.2),
            Err(AnalyticsError::DegenerateSample(_))
        ));
        let scores: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert!(matches!(
            calibrate_thresholds(&scores, 0.7, 0.6),
            Err(AnalyticsError::InvalidFractions(_))
        ));
        assert!(matches!(
            calibrate_thresholds(&scores[..5], 0.2, 0.2),
            Err(AnalyticsError::TooFewSamples { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pearson_invariant_under_positive_affine(
            seed in 0u64..1000,
            a in 0.01f64..10.0,
            b in -5.0f64..5.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<(f64, f64)> = (0..40)
                .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            prop_assume!(pearson(&samples).is_ok());
            let transformed: Vec<(f64, f64)> = samples.iter().map(|(x, y)| (a * x + b, *y)).collect();
            let r1 = pearson(&samples).unwrap();
            let r2 = pearson(&transformed).unwrap();
            prop_assert!((r1 - r2).abs() < 1e-9);
        }

        #[test]
        fn spearman_invariant_under_monotone_transform(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<(f64, f64)> = (0..40)
                .map(|_| (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
                .collect();
            prop_assume!(spearman(&samples).is_ok());
            // exp is strictly monotone, so ranks are unchanged
            let transformed: Vec<(f64, f64)> = samples.iter().map(|(x, y)| (x.exp(), *y)).collect();
            let r1 = spearman(&samples).unwrap();
            let r2 = spearman(&transformed).unwrap();
            prop_assert!((r1 - r2).abs() < 1e-9);
        }

        #[test]
        fn buckets_are_nested(seed in 0u64..1000) {
            use crate::geometry::Quaternion;
            use nalgebra::Vector3;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth: BTreeMap<QueryId, Pose> = (0..20).map(|i| (QueryId(i), Pose::identity())).collect();
            let results: Vec<EvaluatedQuery> = (0..20)
                .map(|i| {
                    let localized = rng.random_range(0..5) > 0;
                    let est = localized.then(|| {
                        Pose::new(
                            Quaternion::from_axis_angle(
                                &Vector3::x(),
                                rng.random_range(0.0..0.3f64),
                            ),
                            Vector3::new(rng.random_range(0.0..2.0), 0.0, 0.0),
                        )
                    });
                    eq(i, None, est)
                })
                .collect();
            let summary = summarize_errors(&results, &truth).unwrap();
            prop_assert!(summary.buckets.high_pct <= summary.buckets.medium_pct);
            prop_assert!(summary.buckets.medium_pct <= summary.buckets.low_pct);
            prop_assert!(summary.buckets.low_pct <= 100.0);
        }
    }
}
