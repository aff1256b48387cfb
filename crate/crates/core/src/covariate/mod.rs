//! Estimators conditioned on covariates: finite-level stratification,
//! kernel smoothing for continuous covariates, and the proportional-hazards
//! decomposition for a finite set of relative risks.

mod kernel;
mod ph;
mod stratified;

pub use kernel::{kernel_conditional_probs, kernel_grid, Bandwidth, KernelConfig, KernelEstimate, KernelKind};
pub use ph::{ph_decomposition, ph_loglik, PhDecomposition, PhLevel};
pub use stratified::{
    combine_marginal_probs, empirical_level_weights, recover_covariate_distribution, stratified_estimates,
    CombinedProbs, CovariateDistribution, LevelEstimates, Normalization, StratifiedEstimates,
};

use crate::error::{Error, Result};
use crate::model::{CovariateLevel, DetectionRecord, IntervalPartition};

/// Covariate in force on interval `k` (zero-based): the left-continuous
/// value of the path at the interval's right end point.
pub(crate) fn interval_value<'a>(
    record: &'a DetectionRecord,
    part: &IntervalPartition,
    k: usize,
) -> Result<&'a [f64]> {
    let path = record.covariates.as_ref().ok_or(Error::NoCovariates)?;
    Ok(path.value_at(part.endpoints()[k + 1]))
}

pub(crate) fn interval_level(record: &DetectionRecord, part: &IntervalPartition, k: usize) -> Result<CovariateLevel> {
    interval_value(record, part, k).map(CovariateLevel::new)
}

/// `levels[i][k]`: level of record `i` on interval `k`.
pub(crate) fn level_matrix(records: &[&DetectionRecord], part: &IntervalPartition) -> Result<Vec<Vec<CovariateLevel>>> {
    records
        .iter()
        .map(|r| (0..part.k()).map(|k| interval_level(r, part, k)).collect())
        .collect()
}
