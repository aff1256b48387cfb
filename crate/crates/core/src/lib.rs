//! Estimators, variance formulas, population-size estimators and independence
//! tests for interval-censored detection data observed on a fixed grid of
//! observation intervals, plus a seeded simulation harness.

pub mod covariate;
pub mod dependence;
pub mod error;
pub mod estimate;
pub mod io;
pub mod model;
pub mod parallel;
pub mod sim;
pub mod size;
pub mod stats;

pub use error::{Error, ErrorKind, Result};
pub use estimate::{
    asymptotic_variances, bernoulli_loglik, cumulative_hazard, estimate_interval_probs, estimate_never_observed,
    normal_quantile, survival_curve, CumulativeHazard, EstimateSet, SurvivalCurve, VarianceReport,
};
pub use model::{
    validate_dataset, ClassId, ClassTransition, CovariateLevel, CovariatePath, Dataset, DetectionRecord,
    IntervalPartition,
};
pub use parallel::Execution;
