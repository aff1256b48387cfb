use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::generate::{generate_with_rng, replicate_rng};
use crate::dependence::{independence_test_consecutive, markov_independence_test, Scaling};
use crate::error::{Error, Result};
use crate::estimate::{asymptotic_variances, cumulative_hazard, estimate_interval_probs, EstimateSet};
use crate::model::{ClassId, Dataset};
use crate::parallel::{map_indexed, Execution};
use crate::size::{bootstrap_size_se, estimate_size_from_data, SizeMethod};
use crate::stats::{ks_distance_chi2, mean, sample_sd};

/// Quantity computed on every replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// `p̂_k` for every interval.
    IntervalProbs,
    /// `Λ̂(τ_k)` for every interval.
    CumulativeHazard,
    /// Sample-scaled consecutive-pair statistic and its p-value.
    ConsecutiveTest,
    /// Sample-scaled origin-class statistic and its p-value.
    MarkovTest,
}

impl Target {
    fn labels(self, k: usize) -> Vec<String> {
        match self {
            Target::IntervalProbs => (1..=k).map(|c| format!("p_hat[{c}]")).collect(),
            Target::CumulativeHazard => (1..=k).map(|c| format!("lambda_hat[{c}]")).collect(),
            Target::ConsecutiveTest | Target::MarkovTest => vec!["statistic".into(), "p_value".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    /// Records of the target class in this replicate.
    pub n: usize,
    pub values: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub labels: Vec<String>,
    pub successes: usize,
    pub failures: usize,
    pub mean: Vec<f64>,
    pub truth: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
    pub empirical_sd: Vec<f64>,
    /// Standard deviation predicted by the asymptotic variance formulas at the
    /// true parameters and population size, for estimator targets on roster
    /// data with known marginals.
    pub formula_sd: Option<Vec<f64>>,
    /// Degrees of freedom the test is referred to, for test targets.
    pub reference_df: Option<u64>,
    /// KS distance between the statistics and `χ²_{reference_df}`.
    pub ks_reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub config: SimConfig,
    pub target: Target,
    pub class_id: ClassId,
    pub replicates: Vec<ReplicateOutcome>,
    pub summary: MonteCarloSummary,
}

fn evaluate(data: &Dataset, class: &ClassId, target: Target) -> Result<(Vec<f64>, u64)> {
    Ok(match target {
        Target::IntervalProbs => (estimate_interval_probs(data, class)?.p_hat, 0),
        Target::CumulativeHazard => (cumulative_hazard(&estimate_interval_probs(data, class)?).values, 0),
        Target::ConsecutiveTest => {
            let t = independence_test_consecutive(data, class, Scaling::SampleScaled)?;
            (vec![t.statistic, t.p_value], t.df)
        }
        Target::MarkovTest => {
            let t = markov_independence_test(data, class, Scaling::SampleScaled)?;
            (vec![t.statistic, t.p_value], t.df)
        }
    })
}

fn run_replicate(cfg: &SimConfig, class: &ClassId, target: Target, r: usize) -> (ReplicateOutcome, u64) {
    let mut rng = replicate_rng(cfg.seed, r as u64);
    let out = generate_with_rng(cfg, &mut rng).and_then(|d| {
        let n = d.class_records(class).map_or(0, |v| v.len());
        evaluate(&d, class, target).map(|(v, df)| (n, v, df))
    });
    match out {
        Ok((n, values, df)) => (
            ReplicateOutcome {
                index: r,
                n,
                values: Some(values),
                error: None,
            },
            df,
        ),
        Err(e) => (
            ReplicateOutcome {
                index: r,
                n: 0,
                values: None,
                error: Some(e.code().to_string()),
            },
            0,
        ),
    }
}

/// Runs `cfg.replicates` independent replicates of `target` on class
/// `class` (the configuration's class when `None`). Replicate `r` draws from
/// the stream `(cfg.seed, r)`; per-replicate failures are recorded, not fatal.
pub fn run_monte_carlo(cfg: &SimConfig, target: Target, class: Option<&ClassId>, exec: Execution) -> Result<MonteCarloReport> {
    cfg.validate()?;
    if cfg.replicates < 10 {
        return Err(Error::TooFewReplicates {
            needed: 10,
            found: cfg.replicates,
        });
    }
    let class = class.unwrap_or(&cfg.class_id).clone();
    let runs = map_indexed(cfg.replicates, exec, |r| run_replicate(cfg, &class, target, r));
    let reference_df = runs.iter().find(|(o, _)| o.values.is_some()).map(|(_, df)| *df);
    let replicates: Vec<ReplicateOutcome> = runs.into_iter().map(|(o, _)| o).collect();
    let summary = summarize(cfg, target, &replicates, reference_df);
    Ok(MonteCarloReport {
        config: cfg.clone(),
        target,
        class_id: class,
        replicates,
        summary,
    })
}

fn summarize(cfg: &SimConfig, target: Target, reps: &[ReplicateOutcome], reference_df: Option<u64>) -> MonteCarloSummary {
    let labels = target.labels(cfg.k());
    let ok: Vec<&Vec<f64>> = reps.iter().filter_map(|r| r.values.as_ref()).collect();
    let column = |j: usize| -> Vec<f64> { ok.iter().map(|v| v[j]).collect() };
    let width = labels.len();
    let means: Vec<f64> = (0..width).map(|j| mean(&column(j))).collect();
    let sds: Vec<f64> = (0..width).map(|j| sample_sd(&column(j))).collect();

    let p0 = cfg.true_interval_probs();
    let truth = match (target, &p0) {
        (Target::IntervalProbs, Some(p)) => Some(p.clone()),
        (Target::CumulativeHazard, Some(p)) => Some(cumulative_hazard(&truth_set(cfg, p)).values),
        _ => None,
    };
    let formula_sd = match (target, &p0, cfg.includes_undetected) {
        (Target::IntervalProbs, Some(p), true) => Some(truth_set(cfg, p).p_hat_var.iter().map(|v| v.sqrt()).collect()),
        (Target::CumulativeHazard, Some(p), true) => {
            Some(asymptotic_variances(&truth_set(cfg, p)).lambda_var.iter().map(|v| v.sqrt()).collect())
        }
        _ => None,
    };
    let ks_reference = match (target, reference_df) {
        (Target::ConsecutiveTest | Target::MarkovTest, Some(df)) if !ok.is_empty() => Some(ks_distance_chi2(&column(0), df)),
        _ => None,
    };
    MonteCarloSummary {
        bias: truth.as_ref().map(|t| means.iter().zip(t).map(|(m, t)| m - t).collect()),
        truth,
        labels,
        successes: ok.len(),
        failures: reps.len() - ok.len(),
        mean: means,
        empirical_sd: sds,
        formula_sd,
        reference_df: reference_df.filter(|_| matches!(target, Target::ConsecutiveTest | Target::MarkovTest)),
        ks_reference,
    }
}

fn truth_set(cfg: &SimConfig, p: &[f64]) -> EstimateSet {
    EstimateSet::from_probs(cfg.class_id.clone(), cfg.endpoints.clone(), p.to_vec(), cfg.nu)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationTest {
    /// Consecutive-pair independence statistic.
    Z,
    /// Origin-class independence statistic.
    X,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub test: CalibrationTest,
    pub replicates: usize,
    pub failures: usize,
    pub mean: f64,
    pub variance: f64,
    /// Degrees of freedom stated for the limiting law.
    pub stated_df: u64,
    pub ks_stated_df: f64,
    /// Integer degrees of freedom whose χ² law is closest in KS distance.
    pub best_fit_df: u64,
    pub ks_best_fit: f64,
    pub df_anomaly: bool,
    pub statistics: Vec<f64>,
}

/// Empirical law of the sample-scaled statistic over `cfg.replicates`
/// replicates, compared with `χ²` laws by KS distance.
pub fn calibrate_df(cfg: &SimConfig, test: CalibrationTest, class: Option<&ClassId>, exec: Execution) -> Result<CalibrationReport> {
    let target = match test {
        CalibrationTest::Z => Target::ConsecutiveTest,
        CalibrationTest::X => Target::MarkovTest,
    };
    let report = run_monte_carlo(cfg, target, class, exec)?;
    let stats: Vec<f64> = report
        .replicates
        .iter()
        .filter_map(|r| r.values.as_ref().map(|v| v[0]))
        .collect();
    if stats.len() < 2 {
        return Err(Error::NoNondegenerateCells);
    }
    let stated_df = report.summary.reference_df.unwrap_or(0);
    let m = mean(&stats);
    let upper = (4.0 * m).ceil().max(2.0 * stated_df as f64).max(10.0) as u64;
    let (best_fit_df, ks_best_fit) = (1..=upper)
        .map(|df| (df, ks_distance_chi2(&stats, df)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((1, f64::NAN));
    Ok(CalibrationReport {
        test,
        replicates: cfg.replicates,
        failures: report.summary.failures,
        mean: m,
        variance: sample_sd(&stats).powi(2),
        stated_df,
        ks_stated_df: ks_distance_chi2(&stats, stated_df),
        best_fit_df,
        ks_best_fit,
        df_anomaly: stated_df == 0,
        statistics: stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeExperimentReport {
    pub nu: usize,
    pub method: SizeMethod,
    pub bootstrap_replicates: usize,
    pub nu_hat: Vec<f64>,
    pub se_boot: Vec<f64>,
    pub failures: usize,
    /// Mean of `|ν̂ − ν| / ν` over replicates.
    pub mean_relative_error: f64,
    /// Standard deviation of `ν̂` across replicates.
    pub sd_nu_hat: f64,
    pub mean_se_boot: f64,
    /// `mean_se_boot / sd_nu_hat`.
    pub se_ratio: f64,
}

/// Repeated two-sample size estimation. Each replicate draws a roster survey
/// of `cfg.nu` individuals and an independent calibration roster of the same
/// size, estimates the total size from the survey's detected count and the
/// calibration detection probabilities, and bootstraps its standard error.
pub fn size_experiment(cfg: &SimConfig, method: SizeMethod, bootstrap_replicates: usize, exec: Execution) -> Result<SizeExperimentReport> {
    cfg.validate()?;
    if !cfg.includes_undetected {
        return Err(Error::RequiresRoster);
    }
    if cfg.replicates < 10 {
        return Err(Error::TooFewReplicates {
            needed: 10,
            found: cfg.replicates,
        });
    }
    let runs: Vec<Result<(f64, f64)>> = map_indexed(cfg.replicates, exec, |r| {
        let mut rng = replicate_rng(cfg.seed, r as u64);
        let survey = generate_with_rng(cfg, &mut rng)?;
        let calib = generate_with_rng(cfg, &mut rng)?;
        let boot_seed: u64 = rng.random();
        let est = estimate_size_from_data(&survey, Some(&calib), method)?;
        let se = bootstrap_size_se(&survey, Some(&calib), method, bootstrap_replicates, boot_seed, Execution::Sequential)?
            .se_boot_total
            .unwrap_or(f64::NAN);
        Ok((est.nu_hat_total, se))
    });
    let ok: Vec<(f64, f64)> = runs.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let nu_hat: Vec<f64> = ok.iter().map(|x| x.0).collect();
    let se_boot: Vec<f64> = ok.iter().map(|x| x.1).collect();
    let nu = cfg.nu as f64;
    let sd = sample_sd(&nu_hat);
    let mean_se = mean(&se_boot);
    Ok(SizeExperimentReport {
        nu: cfg.nu,
        method,
        bootstrap_replicates,
        failures: runs.len() - ok.len(),
        mean_relative_error: mean(&nu_hat.iter().map(|x| (x - nu).abs() / nu).collect::<Vec<_>>()),
        sd_nu_hat: sd,
        mean_se_boot: mean_se,
        se_ratio: mean_se / sd,
        nu_hat,
        se_boot,
    })
}
