//! Class and population size estimators `ν̂ = n / p̂`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::column_counts;
use crate::model::{ClassId, Dataset, DetectionRecord};
use crate::parallel::{map_indexed, stream_rng, Execution};
use crate::stats::sample_sd;

/// Divisor of the moving-average window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowNormalization {
    /// Number of terms in the window, `2a + 1`.
    #[default]
    Mean,
    /// `2a`, which over-weights the window by `(2a + 1) / 2a`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum SizeMethod {
    #[default]
    Plain,
    MovingAverage {
        window: usize,
        normalization: WindowNormalization,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeEstimate {
    pub method: SizeMethod,
    pub nu_hat_by_class: BTreeMap<ClassId, f64>,
    pub nu_hat_total: f64,
    /// Bootstrap standard errors by class, when computed.
    pub se_boot: Option<BTreeMap<ClassId, f64>>,
    pub se_boot_total: Option<f64>,
}

impl SizeEstimate {
    fn from_classes(method: SizeMethod, nu_hat_by_class: BTreeMap<ClassId, f64>) -> Self {
        SizeEstimate {
            method,
            nu_hat_total: nu_hat_by_class.values().sum(),
            nu_hat_by_class,
            se_boot: None,
            se_boot_total: None,
        }
    }
}

fn check_prob(class: &ClassId, p: f64) -> Result<()> {
    if p == 0.0 {
        Err(Error::ZeroDetectionProb(class.to_string()))
    } else if !(p > 0.0 && p <= 1.0) {
        Err(Error::InvalidProbability(p))
    } else {
        Ok(())
    }
}

/// `ν̂_l = n_l / p̂_l` for each class and their sum.
pub fn estimate_size_plain(counts: &BTreeMap<ClassId, u64>, p_hat: &BTreeMap<ClassId, f64>) -> Result<SizeEstimate> {
    let mut out = BTreeMap::new();
    for (class, &n) in counts {
        let &p = p_hat
            .get(class)
            .ok_or_else(|| Error::InvalidArgument(format!("no detection probability for class {class}")))?;
        check_prob(class, p)?;
        out.insert(class.clone(), n as f64 / p);
    }
    Ok(SizeEstimate::from_classes(SizeMethod::Plain, out))
}

/// Per-interval detected counts and probabilities of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalCounts {
    pub counts: Vec<u64>,
    pub p_hat: Vec<f64>,
}

/// `ν̂_l = Σ_k n_{l,k} / p̄_{l,k}` over interior intervals `k = a+1, …, K−a`
/// (one-based), where `p̄_{l,k}` averages `p̂_{l,k−a}, …, p̂_{l,k+a}`.
pub fn estimate_size_moving_average(
    by_class: &BTreeMap<ClassId, IntervalCounts>,
    window: usize,
    normalization: WindowNormalization,
) -> Result<SizeEstimate> {
    if window == 0 {
        return Err(Error::InvalidArgument("moving-average window must be at least 1".into()));
    }
    let mut out = BTreeMap::new();
    for (class, ic) in by_class {
        out.insert(class.clone(), moving_average_one(class, ic, window, normalization)?);
    }
    Ok(SizeEstimate::from_classes(
        SizeMethod::MovingAverage { window, normalization },
        out,
    ))
}

fn moving_average_one(class: &ClassId, ic: &IntervalCounts, a: usize, norm: WindowNormalization) -> Result<f64> {
    let k = ic.p_hat.len();
    if ic.counts.len() != k {
        return Err(Error::InvalidArgument(format!(
            "class {class}: {} counts for {k} probabilities",
            ic.counts.len()
        )));
    }
    if let Some(&p) = ic.p_hat.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidProbability(p));
    }
    if k <= 2 * a {
        return Err(Error::WindowTooWide {
            window: a,
            needed: 2 * a,
            found: k,
        });
    }
    let divisor = match norm {
        WindowNormalization::Mean => (2 * a + 1) as f64,
        WindowNormalization::Literal => (2 * a) as f64,
    };
    let mut nu = 0.0;
    for c in a..k - a {
        let p_bar = ic.p_hat[c - a..=c + a].iter().sum::<f64>() / divisor;
        if p_bar == 0.0 {
            return Err(Error::ZeroWindowMass(c + 1));
        }
        nu += ic.counts[c] as f64 / p_bar;
    }
    Ok(nu)
}

/// Per-class summary statistics that a size estimate is built from.
struct ClassSample<'a> {
    survey: Vec<&'a DetectionRecord>,
    calibration: Vec<&'a DetectionRecord>,
    k: usize,
}

fn detected_count<'a>(records: impl IntoIterator<Item = &'a DetectionRecord>) -> u64 {
    records.into_iter().filter(|r| r.detections() > 0).count() as u64
}

fn class_nu(class: &ClassId, survey: &[&DetectionRecord], calib: &[&DetectionRecord], k: usize, method: SizeMethod) -> Result<f64> {
    if calib.is_empty() {
        return Err(Error::EmptyClass(class.to_string()));
    }
    let m = calib.len() as f64;
    match method {
        SizeMethod::Plain => {
            let p = detected_count(calib.iter().copied()) as f64 / m;
            check_prob(class, p)?;
            Ok(detected_count(survey.iter().copied()) as f64 / p)
        }
        SizeMethod::MovingAverage { window, normalization } => {
            if window == 0 {
                return Err(Error::InvalidArgument("moving-average window must be at least 1".into()));
            }
            let ic = IntervalCounts {
                counts: column_counts(survey.iter().copied(), k),
                p_hat: column_counts(calib.iter().copied(), k)
                    .into_iter()
                    .map(|c| c as f64 / m)
                    .collect(),
            };
            moving_average_one(class, &ic, window, normalization)
        }
    }
}

fn class_samples<'a>(survey: &'a Dataset, calibration: &'a Dataset) -> Result<BTreeMap<ClassId, ClassSample<'a>>> {
    if !calibration.includes_undetected() {
        return Err(Error::RequiresRoster);
    }
    let mut out = BTreeMap::new();
    for class in survey.class_ids() {
        let k = survey.partition(class)?.k();
        let calib_part = calibration.partition(class)?;
        if calib_part.k() != k {
            return Err(Error::SchemaMismatch(format!(
                "class {class} has {k} intervals in the survey and {} in the calibration sample",
                calib_part.k()
            )));
        }
        out.insert(
            class.clone(),
            ClassSample {
                survey: survey.class_records(class)?,
                calibration: calibration.class_records(class)?,
                k,
            },
        );
    }
    Ok(out)
}

/// Size estimate from data: counts come from `survey`, detection
/// probabilities from `calibration`, a roster sample of the same classes
/// that includes undetected individuals. With `calibration = None` the survey
/// itself must be a roster and supplies both.
///
/// Under [`SizeMethod::Plain`] `p̂_l` is the fraction of calibration records
/// detected at least once; under the moving average the per-interval `p̂_{l,k}`
/// are calibration column means and `n_{l,k}` survey column counts.
pub fn estimate_size_from_data(survey: &Dataset, calibration: Option<&Dataset>, method: SizeMethod) -> Result<SizeEstimate> {
    let samples = class_samples(survey, calibration.unwrap_or(survey))?;
    let mut out = BTreeMap::new();
    for (class, s) in &samples {
        out.insert(class.clone(), class_nu(class, &s.survey, &s.calibration, s.k, method)?);
    }
    Ok(SizeEstimate::from_classes(method, out))
}

/// [`estimate_size_from_data`] with nonparametric bootstrap standard errors.
///
/// Each replicate resamples records with replacement within every class of
/// the survey and, independently, of the calibration sample. Replicate `r`
/// draws from the stream `(seed, r)`, so the result does not depend on how
/// replicates are scheduled. SEs are sample standard deviations over
/// replicates.
pub fn bootstrap_size_se(
    survey: &Dataset,
    calibration: Option<&Dataset>,
    method: SizeMethod,
    replicates: usize,
    seed: u64,
    exec: Execution,
) -> Result<SizeEstimate> {
    if replicates < 2 {
        return Err(Error::TooFewReplicates {
            needed: 2,
            found: replicates,
        });
    }
    let mut est = estimate_size_from_data(survey, calibration, method)?;
    let separate = calibration.is_some();
    let samples = class_samples(survey, calibration.unwrap_or(survey))?;

    let draws: Vec<Result<Vec<f64>>> = map_indexed(replicates, exec, |r| {
        let mut rng = stream_rng(seed, r as u64);
        samples
            .iter()
            .map(|(class, s)| {
                let survey_bs = resample(&s.survey, &mut rng);
                let calib_bs = if separate {
                    resample(&s.calibration, &mut rng)
                } else {
                    survey_bs.clone()
                };
                class_nu(class, &survey_bs, &calib_bs, s.k, method)
            })
            .collect()
    });
    let draws: Vec<Vec<f64>> = draws.into_iter().collect::<Result<_>>()?;

    let mut se = BTreeMap::new();
    for (c, class) in samples.keys().enumerate() {
        se.insert(class.clone(), sample_sd(&draws.iter().map(|d| d[c]).collect::<Vec<_>>()));
    }
    est.se_boot = Some(se);
    est.se_boot_total = Some(sample_sd(&draws.iter().map(|d| d.iter().sum()).collect::<Vec<_>>()));
    Ok(est)
}

fn resample<'a, R: Rng>(records: &[&'a DetectionRecord], rng: &mut R) -> Vec<&'a DetectionRecord> {
    let n = records.len();
    (0..n).map(|_| records[rng.random_range(0..n)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::IntervalPartition;
    use proptest::prelude::*;

    fn one(class: &str, n: u64, p: f64) -> (BTreeMap<ClassId, u64>, BTreeMap<ClassId, f64>) {
        (
            BTreeMap::from([(ClassId::from(class), n)]),
            BTreeMap::from([(ClassId::from(class), p)]),
        )
    }

    #[test]
    fn plain_ratio() {
        let (n, p) = one("A", 50, 0.5);
        assert_eq!(estimate_size_plain(&n, &p).unwrap().nu_hat_total, 100.0);
        let (n, p) = one("A", 37, 1.0);
        assert_eq!(estimate_size_plain(&n, &p).unwrap().nu_hat_total, 37.0);
        let (n, p) = one("A", 37, 0.0);
        assert_eq!(estimate_size_plain(&n, &p).unwrap_err().code(), "ZERO_DETECTION_PROB");
        let (n, p) = one("A", 37, 1.5);
        assert_eq!(estimate_size_plain(&n, &p).unwrap_err().code(), "INVALID_PROBABILITY");
    }

    #[test]
    fn moving_average_constant_inputs() {
        let (k, m, p) = (7, 40u64, 0.2);
        let ic = IntervalCounts {
            counts: vec![m; k],
            p_hat: vec![p; k],
        };
        let by = BTreeMap::from([(ClassId::from("A"), ic)]);
        let est = estimate_size_moving_average(&by, 1, WindowNormalization::Mean).unwrap();
        let expected = (k - 2) as f64 * m as f64 / p;
        assert!((est.nu_hat_total - expected).abs() < 1e-9 * expected);
        let lit = estimate_size_moving_average(&by, 1, WindowNormalization::Literal).unwrap();
        assert!((lit.nu_hat_total - expected * 2.0 / 3.0).abs() < 1e-9 * expected);
    }

    #[test]
    fn full_window_matches_plain_on_the_centre_interval() {
        let ic = IntervalCounts {
            counts: vec![10, 30, 10],
            p_hat: vec![0.25; 3],
        };
        let by = BTreeMap::from([(ClassId::from("A"), ic)]);
        let ma = estimate_size_moving_average(&by, 1, WindowNormalization::Mean).unwrap();
        let (n, p) = one("A", 30, 0.25);
        let plain = estimate_size_plain(&n, &p).unwrap();
        assert!((ma.nu_hat_total - plain.nu_hat_total).abs() < 1e-12);
    }

    #[test]
    fn moving_average_errors() {
        let by = |counts: Vec<u64>, p_hat: Vec<f64>| BTreeMap::from([(ClassId::from("A"), IntervalCounts { counts, p_hat })]);
        assert_eq!(
            estimate_size_moving_average(&by(vec![1, 1], vec![0.1, 0.1]), 1, WindowNormalization::Mean)
                .unwrap_err()
                .code(),
            "WINDOW_TOO_WIDE"
        );
        assert_eq!(
            estimate_size_moving_average(&by(vec![1, 1, 1, 1], vec![0.0, 0.0, 0.0, 0.3]), 1, WindowNormalization::Mean)
                .unwrap_err(),
            Error::ZeroWindowMass(2)
        );
        assert_eq!(
            estimate_size_moving_average(&by(vec![1, 1, 1], vec![0.1; 3]), 0, WindowNormalization::Mean)
                .unwrap_err()
                .code(),
            "INVALID_ARGUMENT"
        );
    }

    fn roster(rows: &[&[u8]]) -> Dataset {
        let k = rows[0].len();
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, d)| DetectionRecord::new(i.to_string(), "A", d.iter().map(|&x| x == 1).collect()))
            .collect();
        Dataset::new([IntervalPartition::unit("A", k).unwrap()], records, true).unwrap()
    }

    #[test]
    fn data_driven_plain_estimate() {
        let data = roster(&[&[1, 0], &[0, 1], &[0, 0], &[0, 0]]);
        let est = estimate_size_from_data(&data, None, SizeMethod::Plain).unwrap();
        // a roster is its own calibration, so the estimate returns its size
        assert!((est.nu_hat_total - 4.0).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_degenerate_and_deterministic() {
        let single = roster(&[&[1]]);
        let est = bootstrap_size_se(&single, None, SizeMethod::Plain, 2, 1, Execution::Parallel).unwrap();
        assert_eq!(est.se_boot_total, Some(0.0));

        let survey = roster(&[&[1, 0], &[0, 1], &[0, 0], &[1, 0], &[0, 0], &[0, 1]]);
        let calib = roster(&[&[1, 0], &[0, 0], &[0, 1], &[0, 1], &[0, 0]]);
        let a = bootstrap_size_se(&survey, Some(&calib), SizeMethod::Plain, 64, 9, Execution::Parallel);
        let b = bootstrap_size_se(&survey, Some(&calib), SizeMethod::Plain, 64, 9, Execution::Sequential);
        // replicates that draw an all-undetected calibration sample fail
        match (a, b) {
            (Ok(a), Ok(b)) => assert_eq!(a, b),
            (Err(a), Err(b)) => assert_eq!(a, b),
            _ => panic!("execution mode changed the outcome"),
        }
        assert_eq!(
            bootstrap_size_se(&survey, None, SizeMethod::Plain, 1, 0, Execution::Parallel).unwrap_err().code(),
            "TOO_FEW_REPLICATES"
        );
    }

    #[test]
    fn detected_only_calibration_is_rejected() {
        let records = vec![DetectionRecord::new("1", "A", vec![true])];
        let det = Dataset::new([IntervalPartition::unit("A", 1).unwrap()], records, false).unwrap();
        assert_eq!(estimate_size_from_data(&det, None, SizeMethod::Plain).unwrap_err(), Error::RequiresRoster);
    }

    proptest! {
        #[test]
        fn plain_is_scale_equivariant(n in 0u64..10_000, p in 0.001f64..=1.0) {
            let (c1, pp) = one("A", n, p);
            let (c2, _) = one("A", 2 * n, p);
            let a = estimate_size_plain(&c1, &pp).unwrap().nu_hat_total;
            let b = estimate_size_plain(&c2, &pp).unwrap().nu_hat_total;
            prop_assert!((b - 2.0 * a).abs() <= 1e-9 * b.max(1.0));
            prop_assert!(a >= n as f64 * (1.0 - 1e-12));
        }

        #[test]
        fn total_is_relabel_invariant(ns in prop::collection::vec((1u64..1000, 0.01f64..=1.0), 1..6)) {
            let counts: BTreeMap<ClassId, u64> = ns.iter().enumerate().map(|(i, (n, _))| (ClassId::new(format!("c{i}")), *n)).collect();
            let probs: BTreeMap<ClassId, f64> = ns.iter().enumerate().map(|(i, (_, p))| (ClassId::new(format!("c{i}")), *p)).collect();
            let m = ns.len();
            let rc: BTreeMap<ClassId, u64> = ns.iter().enumerate().map(|(i, (n, _))| (ClassId::new(format!("z{}", m - i)), *n)).collect();
            let rp: BTreeMap<ClassId, f64> = ns.iter().enumerate().map(|(i, (_, p))| (ClassId::new(format!("z{}", m - i)), *p)).collect();
            let a = estimate_size_plain(&counts, &probs).unwrap().nu_hat_total;
            let b = estimate_size_plain(&rc, &rp).unwrap().nu_hat_total;
            prop_assert!((a - b).abs() <= 1e-9 * a);
        }
    }
}
