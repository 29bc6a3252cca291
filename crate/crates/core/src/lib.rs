//! Adaptive image-retrieval localisation at desk scale.
//!
//! The crate implements a hierarchical localisation pipeline over a stored
//! scene bundle: global-descriptor retrieval, per-query difficulty scoring
//! with an adaptive retrieval budget, local feature matching, 2D-3D lifting
//! and P3P/RANSAC pose estimation, plus the statistics used to study the
//! cost-accuracy trade-off (similarity/match-ratio correlation, ATE/ARE
//! summaries, threshold calibration).
//!
//! Modules follow the pipeline stages:
//!
//! - [`geometry`]: quaternions, poses, pinhole projection, pose-error metrics
//! - [`index`]: exact top-k cosine retrieval over global descriptors
//! - [`policy`]: difficulty classes and retrieval budgets
//! - [`matching`]: mutual-nearest-neighbor local feature matching
//! - [`pnp`]: P3P minimal solver, RANSAC loop, pose refinement
//! - [`bundle`]: on-disk scene bundle and query-set format
//! - [`pipeline`]: end-to-end localisation with cost accounting
//! - [`analytics`]: correlation studies, error summaries, calibration
//! - [`synthworld`]: seeded synthetic scene generator with ground truth

pub mod analytics;
pub mod bundle;
pub mod geometry;
pub mod ids;
pub mod index;
pub mod matching;
pub mod pipeline;
pub mod pnp;
pub mod policy;
pub mod synthworld;
