//! Prints the statistical profile of a synthetic world: correlation between
//! retrieval similarity and match ratio, score distribution per offset tier,
//! and the fixed-vs-adaptive cost/accuracy comparison. Used to sanity-check
//! a world config before freezing its seed in tests.

use std::collections::BTreeMap;
use std::time::Instant;

use airloc_core::analytics::{
    calibrate_thresholds, correlation_study, summarize_errors, EvaluatedQuery,
};
use airloc_core::bundle::QuerySet;
use airloc_core::matching::MatcherConfig;
use airloc_core::pipeline::{run_batch, RunMode};
use airloc_core::pnp::RansacConfig;
use airloc_core::policy::{Difficulty, PolicyConfig};
use airloc_core::synthworld::{generate, WorldConfig};

fn main() {
    let config = WorldConfig::default();
    let t0 = Instant::now();
    let (bundle, queries) = generate(&config).unwrap();
    println!(
        "world: {} points, {} refs, {} queries, generated in {:.1}s",
        bundle.points3d.len(),
        bundle.images.len(),
        queries.len(),
        t0.elapsed().as_secs_f64()
    );
    let mean_feats: f64 = bundle
        .images
        .values()
        .map(|i| i.features.len() as f64)
        .sum::<f64>()
        / bundle.images.len() as f64;
    println!("mean features per reference image: {mean_feats:.1}");

    // correlation study
    let t0 = Instant::now();
    let study = correlation_study(&bundle, &queries, 10, MatcherConfig::default()).unwrap();
    println!(
        "correlation: PCC {:.3}  SRC {:.3}  ({} samples, {:.1}s)",
        study.pcc,
        study.src,
        study.samples.len(),
        t0.elapsed().as_secs_f64()
    );

    // score distribution
    let matcher = MatcherConfig::default();
    let ransac = RansacConfig { seed: 42, ..Default::default() };
    let fixed_mode = RunMode::Fixed { k: 10 };
    let t0 = Instant::now();
    let (fixed_results, fixed_summary) =
        run_batch(&queries, &bundle, &fixed_mode, matcher, ransac, 8).unwrap();
    println!(
        "fixed(10): pair_units {}  localized {}/{}  ({:.1}s)",
        fixed_summary.total_pair_units,
        fixed_summary.localized,
        fixed_summary.queries,
        t0.elapsed().as_secs_f64()
    );

    let scores: Vec<f64> = fixed_results.iter().map(|r| r.score).collect();
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    println!(
        "scores: min {:.3}  p25 {:.3}  median {:.3}  p75 {:.3}  max {:.3}",
        sorted[0],
        sorted[sorted.len() / 4],
        sorted[sorted.len() / 2],
        sorted[3 * sorted.len() / 4],
        sorted[sorted.len() - 1]
    );

    let (gamma_low, gamma_high) = calibrate_thresholds(&scores, 0.15, 0.3).unwrap();
    println!("calibrated gamma: low {gamma_low:.4}  high {gamma_high:.4}");

    let policy = PolicyConfig {
        k: 10,
        gamma_low,
        gamma_high,
        ..PolicyConfig::default()
    };
    let adaptive_mode = RunMode::Adaptive(policy);
    let (adaptive_results, adaptive_summary) =
        run_batch(&queries, &bundle, &adaptive_mode, matcher, ransac, 8).unwrap();
    println!(
        "adaptive: pair_units {} ({:.1}% saved)  mean budget {:.2}  localized {}/{}",
        adaptive_summary.total_pair_units,
        100.0 * (1.0
            - adaptive_summary.total_pair_units as f64 / fixed_summary.total_pair_units as f64),
        adaptive_summary.mean_budget,
        adaptive_summary.localized,
        adaptive_summary.queries
    );

    let truth = queries.ground_truth();
    let fixed_eval: Vec<EvaluatedQuery> = fixed_results.iter().map(EvaluatedQuery::from).collect();
    let adaptive_eval: Vec<EvaluatedQuery> =
        adaptive_results.iter().map(EvaluatedQuery::from).collect();
    let fixed_sum = summarize_errors(&fixed_eval, &truth).unwrap();
    let adaptive_sum = summarize_errors(&adaptive_eval, &truth).unwrap();
    for (label, s) in [("fixed", &fixed_sum), ("adaptive", &adaptive_sum)] {
        println!(
            "{label}: median ATE {:.2} mm  median ARE {:.4} deg  buckets ({:.1}, {:.1}, {:.1})",
            s.overall.median_ate_m.unwrap() * 1000.0,
            s.overall.median_are_deg.unwrap(),
            s.buckets.high_pct,
            s.buckets.medium_pct,
            s.buckets.low_pct
        );
    }

    // per-difficulty stats at full budget (classification from the adaptive run)
    let class_of: BTreeMap<u32, Difficulty> = adaptive_results
        .iter()
        .map(|r| (r.query.0, r.difficulty.unwrap()))
        .collect();
    let relabeled: Vec<EvaluatedQuery> = fixed_results
        .iter()
        .map(|r| {
            let mut e = EvaluatedQuery::from(r);
            e.difficulty = Some(class_of[&r.query.0]);
            e
        })
        .collect();
    let by_diff = summarize_errors(&relabeled, &truth).unwrap();
    for (d, stats) in &by_diff.per_difficulty {
        println!(
            "  {d}: n={} localized={} median ATE {:.2} mm  median ARE {:.4} deg",
            stats.total,
            stats.localized,
            stats.median_ate_m.map(|v| v * 1000.0).unwrap_or(f64::NAN),
            stats.median_are_deg.unwrap_or(f64::NAN)
        );
    }

    // offset tier score separation (queries are generated tier by tier)
    let tier_sizes: Vec<usize> = {
        let n = queries.len();
        config
            .query_offset_profile
            .iter()
            .map(|t| (t.fraction * n as f64).round() as usize)
            .collect()
    };
    let mut start = 0;
    for (i, &size) in tier_sizes.iter().enumerate() {
        let end = (start + size).min(scores.len());
        if start >= end {
            break;
        }
        let slice = &scores[start..end];
        let mean = slice.iter().sum::<f64>() / slice.len() as f64;
        println!(
            "tier {i} (offset <= {:.1} m / {:.0} deg): n={} mean score {:.3}",
            config.query_offset_profile[i].max_offset_m,
            config.query_offset_profile[i].max_offset_deg,
            slice.len(),
            mean
        );
        start = end;
    }

    let _ = QuerySet::default();
}
