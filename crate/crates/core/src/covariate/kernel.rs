use serde::{Deserialize, Serialize};

use super::interval_value;
use crate::error::{Error, Result};
use crate::estimate::{cumulative_hazard, survival_curve, CumulativeHazard, EstimateSet, SurvivalCurve};
use crate::model::{ClassId, Dataset};
use crate::parallel::{map_slice, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    #[default]
    Epanechnikov,
    Gaussian,
    Uniform,
}

impl KernelKind {
    fn eval(self, u: f64) -> f64 {
        match self {
            KernelKind::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            KernelKind::Gaussian => (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            KernelKind::Uniform => {
                if u.abs() <= 1.0 {
                    0.5
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// `σ̂ · n^{−s/(d+4s)}` per covariate dimension.
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kernel: KernelKind,
    pub bandwidth: Bandwidth,
    /// Smoothness order `s` entering the automatic bandwidth rate.
    pub smoothness: u32,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            kernel: KernelKind::Epanechnikov,
            bandwidth: Bandwidth::Auto,
            smoothness: 2,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidKernel(format!("bandwidth must be positive, got {h}")));
            }
        }
        if self.smoothness == 0 {
            return Err(Error::InvalidKernel("smoothness order must be positive".into()));
        }
        Ok(())
    }
}

/// Smoothed estimates at one query point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelEstimate {
    pub z: Vec<f64>,
    /// `p_hat_var` is the Nadaraya–Watson variance `p̂(1 − p̂) Σw² / (Σw)²`.
    pub estimate: EstimateSet,
    pub survival: Option<SurvivalCurve>,
    pub hazard: CumulativeHazard,
    /// Bandwidth used on each interval, one entry per covariate dimension.
    pub bandwidths: Vec<Vec<f64>>,
}

fn sample_sd(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mean = xs.clone().sum::<f64>() / n;
    (xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Nadaraya–Watson estimate of the per-interval detection probabilities at
/// covariate value `z`, using a product kernel on `Z_i(τ_k)`.
pub fn kernel_conditional_probs(data: &Dataset, class: &ClassId, cfg: &KernelConfig, z: &[f64]) -> Result<KernelEstimate> {
    cfg.validate()?;
    let part = data.partition(class)?;
    let records = data.nonempty_class_records(class)?;
    let n = records.len();
    let d = z.len();
    let mut p_hat = Vec::with_capacity(part.k());
    let mut p_var = Vec::with_capacity(part.k());
    let mut bandwidths = Vec::with_capacity(part.k());

    for k in 0..part.k() {
        let design: Vec<&[f64]> = records
            .iter()
            .map(|r| interval_value(r, part, k))
            .collect::<Result<_>>()?;
        if let Some(bad) = design.iter().find(|x| x.len() != d) {
            return Err(Error::CovariateDimension {
                expected: bad.len(),
                found: d,
            });
        }
        let h: Vec<f64> = match cfg.bandwidth {
            Bandwidth::Fixed(h) => vec![h; d],
            Bandwidth::Auto => {
                let s = cfg.smoothness as f64;
                let rate = (n as f64).powf(-s / (d as f64 + 4.0 * s));
                (0..d)
                    .map(|j| {
                        let sd = sample_sd(design.iter().map(|x| x[j]));
                        // all design points tied: any positive width works
                        if sd > 0.0 { sd * rate } else { rate }
                    })
                    .collect()
            }
        };

        let mut sw = 0.0;
        let mut sw2 = 0.0;
        let mut swd = 0.0;
        for (x, r) in design.iter().zip(&records) {
            let w: f64 = x
                .iter()
                .zip(z)
                .zip(&h)
                .map(|((xi, zi), hi)| cfg.kernel.eval((zi - xi) / hi) / hi)
                .product();
            sw += w;
            sw2 += w * w;
            if r.deltas[k] {
                swd += w;
            }
        }
        if sw.is_nan() || sw <= 0.0 {
            return Err(Error::EmptyNeighborhood);
        }
        let p = swd / sw;
        p_hat.push(p);
        p_var.push((p * (1.0 - p)).max(0.0) * sw2 / (sw * sw));
        bandwidths.push(h);
    }

    let estimate = EstimateSet {
        class_id: class.clone(),
        endpoints: part.endpoints().to_vec(),
        p_hat,
        p_hat_var: p_var,
        n_used: n,
    };
    Ok(KernelEstimate {
        z: z.to_vec(),
        survival: survival_curve(&estimate).ok(),
        hazard: cumulative_hazard(&estimate),
        estimate,
        bandwidths,
    })
}

/// Evaluates [`kernel_conditional_probs`] at every query point.
pub fn kernel_grid(
    data: &Dataset,
    class: &ClassId,
    cfg: &KernelConfig,
    points: &[Vec<f64>],
    exec: Execution,
) -> Vec<Result<KernelEstimate>> {
    map_slice(points, exec, |z| kernel_conditional_probs(data, class, cfg, z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariate::{stratified_estimates, Normalization};
    use crate::estimate::estimate_interval_probs;
    use crate::model::{CovariateLevel, CovariatePath, DetectionRecord, IntervalPartition};

    fn ds(rows: &[(f64, [u8; 2])]) -> Dataset {
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, (z, d))| {
                DetectionRecord::new(i.to_string(), "A", d.iter().map(|&x| x == 1).collect())
                    .with_covariates(CovariatePath::constant(0.0, 2.0, vec![*z]).unwrap())
            })
            .collect();
        Dataset::new([IntervalPartition::unit("A", 2).unwrap()], records, true).unwrap()
    }

    const ROWS: [(f64, [u8; 2]); 5] = [(0.0, [1, 0]), (0.3, [0, 1]), (0.5, [1, 1]), (0.9, [0, 0]), (1.4, [1, 0])];

    #[test]
    fn wide_uniform_kernel_gives_pooled_estimate() {
        let data = ds(&ROWS);
        let pooled = estimate_interval_probs(&data, &"A".into()).unwrap();
        let cfg = KernelConfig {
            kernel: KernelKind::Uniform,
            bandwidth: Bandwidth::Fixed(10.0),
            smoothness: 2,
        };
        for z in [0.0, 0.7, 1.4] {
            let e = kernel_conditional_probs(&data, &"A".into(), &cfg, &[z]).unwrap();
            for (a, b) in e.estimate.p_hat.iter().zip(&pooled.p_hat) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tiny_bandwidth_recovers_tied_cell_mean() {
        let mut rows = ROWS.to_vec();
        rows.push((0.5, [0, 1]));
        rows.push((0.5, [0, 1]));
        let data = ds(&rows);
        let strat = stratified_estimates(&data, &"A".into(), Normalization::CellCount).unwrap();
        let cell = strat.level(&CovariateLevel::new(&[0.5])).unwrap();
        for kind in [KernelKind::Epanechnikov, KernelKind::Uniform] {
            let cfg = KernelConfig {
                kernel: kind,
                bandwidth: Bandwidth::Fixed(2f64.powi(-30)),
                smoothness: 2,
            };
            let e = kernel_conditional_probs(&data, &"A".into(), &cfg, &[0.5]).unwrap();
            for (a, b) in e.estimate.p_hat.iter().zip(&cell.p_hat) {
                assert_eq!(Some(*a), *b);
            }
        }
    }

    #[test]
    fn epanechnikov_matches_direct_weighted_mean() {
        let data = ds(&ROWS);
        let (z, h) = (0.6, 0.5);
        let cfg = KernelConfig {
            kernel: KernelKind::Epanechnikov,
            bandwidth: Bandwidth::Fixed(h),
            smoothness: 2,
        };
        let e = kernel_conditional_probs(&data, &"A".into(), &cfg, &[z]).unwrap();
        for k in 0..2 {
            let (mut num, mut den) = (0.0, 0.0);
            for (x, d) in ROWS {
                let u: f64 = (z - x) / h;
                let w = if u.abs() <= 1.0 { 0.75 * (1.0 - u * u) / h } else { 0.0 };
                num += w * d[k] as f64;
                den += w;
            }
            assert!((e.estimate.p_hat[k] - num / den).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_neighborhood_and_bad_config() {
        let data = ds(&ROWS);
        let cfg = KernelConfig {
            kernel: KernelKind::Uniform,
            bandwidth: Bandwidth::Fixed(0.01),
            smoothness: 2,
        };
        assert_eq!(
            kernel_conditional_probs(&data, &"A".into(), &cfg, &[5.0]).unwrap_err(),
            Error::EmptyNeighborhood
        );
        let bad = KernelConfig {
            bandwidth: Bandwidth::Fixed(-1.0),
            ..cfg
        };
        assert_eq!(
            kernel_conditional_probs(&data, &"A".into(), &bad, &[0.0]).unwrap_err().code(),
            "INVALID_KERNEL"
        );
    }

    #[test]
    fn auto_bandwidth_follows_rate() {
        let data = ds(&ROWS);
        let e = kernel_conditional_probs(&data, &"A".into(), &KernelConfig::default(), &[0.5]).unwrap();
        let xs: Vec<f64> = ROWS.iter().map(|r| r.0).collect();
        let mean = xs.iter().sum::<f64>() / 5.0;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        let expected = sd * 5f64.powf(-2.0 / 9.0);
        assert!((e.bandwidths[0][0] - expected).abs() < 1e-12);
    }

    #[test]
    fn grid_is_execution_independent() {
        let data = ds(&ROWS);
        let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.07]).collect();
        let cfg = KernelConfig {
            kernel: KernelKind::Gaussian,
            ..KernelConfig::default()
        };
        let a = kernel_grid(&data, &"A".into(), &cfg, &pts, Execution::Parallel);
        let b = kernel_grid(&data, &"A".into(), &cfg, &pts, Execution::Sequential);
        assert_eq!(a, b);
    }
}
