use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{interval_value, level_matrix};
use crate::error::{Error, Result};
use crate::estimate::{binomial_var, cumulative_hazard, survival_curve, CumulativeHazard, EstimateSet, SurvivalCurve};
use crate::model::{ClassId, CovariateLevel, Dataset};

/// Denominator of the per-level cell estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide level-cell sums by the class size `n_l`.
    #[default]
    ClassTotal,
    /// Divide by the number of individuals in the cell, giving conditional
    /// detection probabilities.
    CellCount,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelEstimates {
    pub level: CovariateLevel,
    /// Per interval; `None` marks an empty cell.
    pub p_hat: Vec<Option<f64>>,
    /// Binomial variance of the conditional cell mean, using the cell count.
    pub p_hat_var: Vec<Option<f64>>,
    pub counts: Vec<u64>,
    pub detections: Vec<u64>,
    /// Missing when a cell is empty or the level's mass exceeds one.
    pub survival: Option<SurvivalCurve>,
    pub hazard: Option<CumulativeHazard>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratifiedEstimates {
    pub class_id: ClassId,
    pub endpoints: Vec<f64>,
    pub normalization: Normalization,
    pub n: usize,
    pub levels: Vec<LevelEstimates>,
    /// `(interval, level)` pairs without members.
    pub empty_cells: Vec<(usize, CovariateLevel)>,
}

impl StratifiedEstimates {
    pub fn level(&self, level: &CovariateLevel) -> Option<&LevelEstimates> {
        self.levels.iter().find(|l| &l.level == level)
    }
}

/// Per-(interval, level) cell estimates with per-level survival and hazard.
pub fn stratified_estimates(data: &Dataset, class: &ClassId, normalization: Normalization) -> Result<StratifiedEstimates> {
    let part = data.partition(class)?;
    let records = data.nonempty_class_records(class)?;
    let levels = level_matrix(&records, part)?;
    let k = part.k();
    let n = records.len();

    let mut cells: BTreeMap<CovariateLevel, (Vec<u64>, Vec<u64>)> = BTreeMap::new();
    for (r, row) in records.iter().zip(&levels) {
        for (kk, lvl) in row.iter().enumerate() {
            let (counts, dets) = cells
                .entry(lvl.clone())
                .or_insert_with(|| (vec![0; k], vec![0; k]));
            counts[kk] += 1;
            dets[kk] += r.deltas[kk] as u64;
        }
    }

    let mut empty_cells = Vec::new();
    let mut out = Vec::with_capacity(cells.len());
    for (level, (counts, detections)) in cells {
        let mut p_hat = Vec::with_capacity(k);
        let mut p_hat_var = Vec::with_capacity(k);
        for kk in 0..k {
            if counts[kk] == 0 {
                empty_cells.push((kk, level.clone()));
                p_hat.push(None);
                p_hat_var.push(None);
                continue;
            }
            let m = counts[kk] as f64;
            let d = detections[kk] as f64;
            let denom = match normalization {
                Normalization::ClassTotal => n as f64,
                Normalization::CellCount => m,
            };
            p_hat.push(Some(d / denom));
            p_hat_var.push(Some(binomial_var(d / m, m)));
        }
        let (survival, hazard) = match p_hat.iter().copied().collect::<Option<Vec<f64>>>() {
            Some(p) => {
                let est = EstimateSet::from_probs(class.clone(), part.endpoints().to_vec(), p, n);
                match survival_curve(&est) {
                    Ok(s) => (Some(s), Some(cumulative_hazard(&est))),
                    Err(_) => (None, None),
                }
            }
            None => (None, None),
        };
        out.push(LevelEstimates {
            level,
            p_hat,
            p_hat_var,
            counts,
            detections,
            survival,
            hazard,
        });
    }
    empty_cells.sort();

    Ok(StratifiedEstimates {
        class_id: class.clone(),
        endpoints: part.endpoints().to_vec(),
        normalization,
        n,
        levels: out,
        empty_cells,
    })
}

/// Mixture `p̂_k = Σ_j p̂_k(Z_j) P̂(Z_j)` and its total over intervals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CombinedProbs {
    pub p_hat: Vec<f64>,
    pub total: f64,
}

/// Weights every level's cell estimates and sums them. Empty cells
/// contribute nothing.
pub fn combine_marginal_probs(
    strat: &StratifiedEstimates,
    weights: &BTreeMap<CovariateLevel, f64>,
) -> Result<CombinedProbs> {
    let strat_levels: BTreeSet<&CovariateLevel> = strat.levels.iter().map(|l| &l.level).collect();
    if let Some(extra) = weights.keys().find(|l| !strat_levels.contains(l)) {
        return Err(Error::WeightMismatch(format!("weight given for unknown level {extra}")));
    }
    if let Some(missing) = strat_levels.iter().find(|l| !weights.contains_key(l)) {
        return Err(Error::WeightMismatch(format!("no weight for level {missing}")));
    }
    if weights.values().any(|&w| !w.is_finite() || w < 0.0) {
        return Err(Error::InvalidWeights("weights must be finite and nonnegative".into()));
    }
    let sum: f64 = weights.values().sum();
    if sum > 1.0 + 1e-9 {
        return Err(Error::InvalidWeights(format!("weights sum to {sum}")));
    }

    let k = strat.endpoints.len() - 1;
    let mut p_hat = vec![0.0; k];
    for lvl in &strat.levels {
        let w = weights[&lvl.level];
        for (acc, p) in p_hat.iter_mut().zip(&lvl.p_hat) {
            if let Some(p) = p {
                *acc += p * w;
            }
        }
    }
    let total = p_hat.iter().sum();
    Ok(CombinedProbs { p_hat, total })
}

/// Share of the class at each level, read on the first interval.
pub fn empirical_level_weights(strat: &StratifiedEstimates) -> BTreeMap<CovariateLevel, f64> {
    strat
        .levels
        .iter()
        .map(|l| (l.level.clone(), l.counts[0] as f64 / strat.n as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovariateDistribution {
    /// Estimate clamped to `[0, 1]`.
    pub value: f64,
    pub raw: f64,
    pub clamped: bool,
}

/// Plug-in estimate of `P(Z ≤ z)` from the detected individuals:
///
/// `Σ_k P̂(Z ≤ z | δ_k = 1) P̂(δ_k = 1) / Σ_k P̂(δ_k = 1 | Z ≤ z)`.
///
/// Vector covariates compare component-wise; intervals with nobody at or
/// below `z` drop out of the denominator.
pub fn recover_covariate_distribution(data: &Dataset, class: &ClassId, z: &[f64]) -> Result<CovariateDistribution> {
    let part = data.partition(class)?;
    let records = data.nonempty_class_records(class)?;
    let n = records.len() as f64;
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    let mut any_below = false;
    for k in 0..part.k() {
        let mut detected = 0u64;
        let mut below = 0u64;
        let mut detected_below = 0u64;
        for r in &records {
            let zi = interval_value(r, part, k)?;
            if zi.len() != z.len() {
                return Err(Error::CovariateDimension {
                    expected: zi.len(),
                    found: z.len(),
                });
            }
            let is_below = zi.iter().zip(z).all(|(a, b)| a <= b);
            let d = r.deltas[k];
            detected += d as u64;
            below += is_below as u64;
            detected_below += (d && is_below) as u64;
        }
        if detected > 0 {
            numerator += (detected_below as f64 / detected as f64) * (detected as f64 / n);
        }
        if below > 0 {
            any_below = true;
            denominator += detected_below as f64 / below as f64;
        }
    }
    if !any_below {
        return Err(Error::ZeroDenominator);
    }
    if numerator == 0.0 {
        return Ok(CovariateDistribution {
            value: 0.0,
            raw: 0.0,
            clamped: false,
        });
    }
    let raw = numerator / denominator;
    let value = raw.clamp(0.0, 1.0);
    Ok(CovariateDistribution {
        value,
        raw,
        clamped: value != raw,
    })
}
