//! Difficulty classes and adaptive retrieval budgets.
//!
//! A query scoring at least `gamma_high` is easy and gets `⌈α·k⌉` images,
//! a query below `gamma_low` is hard and gets the full `k`, everything in
//! between is medium and gets `⌈β·k⌉`. Both boundaries are inclusive on the
//! easier side: `score == gamma_high` is easy, `score == gamma_low` is
//! medium.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Score used when a mode carries no explicit policy (top-3 mean similarity).
pub const DEFAULT_N_SCORE: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
    #[error("invalid difficulty distribution: {0}")]
    InvalidDistribution(String),
}

/// Knobs of the adaptive retrieval rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyConfig {
    /// Maximum number of retrieved images (the hard-query budget).
    pub k: usize,
    /// Easy-query budget coefficient, in (0, 1).
    pub alpha: f64,
    /// Medium-query budget coefficient, in (alpha, 1).
    pub beta: f64,
    /// Scores below this are hard.
    pub gamma_low: f64,
    /// Scores at or above this are easy.
    pub gamma_high: f64,
    /// Number of top retrievals averaged into the query score.
    pub n_score: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            k: 10,
            alpha: 0.5,
            beta: 0.7,
            gamma_low: 0.4,
            gamma_high: 0.6,
            n_score: DEFAULT_N_SCORE,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let fail = |msg: String| Err(PolicyError::InvalidConfig(msg));
        if self.k < 1 {
            return fail("k must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < self.beta && self.beta < 1.0) {
            return fail(format!(
                "coefficients must satisfy 0 < alpha < beta < 1, got alpha = {}, beta = {}",
                self.alpha, self.beta
            ));
        }
        // The upper tolerance admits the "no easy class" sentinel produced by
        // calibration on samples whose maximum score is itself the cut.
        let in_range = |g: f64| g >= -1.0 && g <= 1.0 + 1e-6;
        if !(self.gamma_low < self.gamma_high && in_range(self.gamma_low) && in_range(self.gamma_high))
        {
            return fail(format!(
                "thresholds must satisfy -1 <= gamma_low < gamma_high <= 1, got ({}, {})",
                self.gamma_low, self.gamma_high
            ));
        }
        if self.n_score < 1 {
            return fail("n_score must be at least 1".into());
        }
        Ok(())
    }
}

/// Localisation difficulty of a query, judged from its similarity score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl std::fmt::Display for Difficulty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Difficulty::Easy => write!(f, "easy"),
            Difficulty::Medium => write!(f, "medium"),
            Difficulty::Hard => write!(f, "hard"),
        }
    }
}

pub const ALL_DIFFICULTIES: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

/// Maps a query score to its difficulty class.
pub fn classify(score: f64, config: &PolicyConfig) -> Difficulty {
    if score >= config.gamma_high {
        Difficulty::Easy
    } else if score >= config.gamma_low {
        Difficulty::Medium
    } else {
        Difficulty::Hard
    }
}

/// Ceiling of `coeff · k`, tolerant of floating-point representation error:
/// products that land within 1e-9 of an integer are treated as that integer,
/// so e.g. `0.7 × 20` yields 14 rather than 15.
fn ceil_budget(coeff: f64, k: usize) -> usize {
    let v = coeff * k as f64;
    let r = v.round();
    let c = if (v - r).abs() < 1e-9 { r } else { v.ceil() };
    (c as usize).max(1)
}

/// Retrieval budget for a difficulty class: `⌈α·k⌉`, `⌈β·k⌉` or `k`.
pub fn budget(difficulty: Difficulty, config: &PolicyConfig) -> usize {
    match difficulty {
        Difficulty::Easy => ceil_budget(config.alpha, config.k),
        Difficulty::Medium => ceil_budget(config.beta, config.k),
        Difficulty::Hard => config.k,
    }
}

/// Population shares of the three difficulty classes, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifficultyDistribution {
    pub easy_pct: f64,
    pub medium_pct: f64,
    pub hard_pct: f64,
}

impl DifficultyDistribution {
    pub fn new(easy_pct: f64, medium_pct: f64, hard_pct: f64) -> Result<Self, PolicyError> {
        let d = DifficultyDistribution {
            easy_pct,
            medium_pct,
            hard_pct,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let parts = [self.easy_pct, self.medium_pct, self.hard_pct];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(PolicyError::InvalidDistribution(
                "percentages must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 100.0).abs() > 1e-6 {
            return Err(PolicyError::InvalidDistribution(format!(
                "percentages must sum to 100, got {sum}"
            )));
        }
        Ok(())
    }
}

/// Mean retrieval budget over a query population with the given difficulty
/// distribution: `(pE·⌈αk⌉ + pM·⌈βk⌉ + pH·k) / 100`.
pub fn expected_average_k(
    distribution: &DifficultyDistribution,
    config: &PolicyConfig,
) -> Result<f64, PolicyError> {
    distribution.validate()?;
    config.validate()?;
    let easy = budget(Difficulty::Easy, config) as f64;
    let medium = budget(Difficulty::Medium, config) as f64;
    let hard = budget(Difficulty::Hard, config) as f64;
    Ok(
        (distribution.easy_pct * easy + distribution.medium_pct * medium + distribution.hard_pct * hard)
            / 100.0,
    )
}
