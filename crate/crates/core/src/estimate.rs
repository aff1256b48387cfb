//! Closed-form estimators for the model without covariates.
//!
//! With `n` records and detection indicators `δ_{i,k}`:
//!
//! - `p̂_k = n⁻¹ Σ_i δ_{i,k}` with variance `p̂_k (1 − p̂_k) / n`,
//! - `Ŝ(τ_k) = Ŝ(τ_{k−1}) − p̂_k`, `Ŝ(τ_0) = 1`,
//! - `Λ̂(τ_k) = Σ_{k'≤k} log(Ŝ(τ_{k'−1}) / Ŝ(τ_{k'}))`.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{ClassId, Dataset, DetectionRecord};

/// Mass in excess of one tolerated before a survival curve is rejected.
const MASS_TOLERANCE: f64 = 1e-12;

/// Per-interval probability estimates of one class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateSet {
    pub class_id: ClassId,
    /// `τ_0 < … < τ_K`.
    pub endpoints: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub p_hat_var: Vec<f64>,
    /// Sample size behind the estimates.
    pub n_used: usize,
}

impl EstimateSet {
    /// Estimates with binomial variances `p (1 − p) / n`.
    pub fn from_probs(class_id: ClassId, endpoints: Vec<f64>, p_hat: Vec<f64>, n_used: usize) -> Self {
        debug_assert_eq!(endpoints.len(), p_hat.len() + 1);
        let p_hat_var = p_hat
            .iter()
            .map(|&p| binomial_var(p, n_used as f64))
            .collect();
        EstimateSet {
            class_id,
            endpoints,
            p_hat,
            p_hat_var,
            n_used,
        }
    }

    pub fn k(&self) -> usize {
        self.p_hat.len()
    }

    /// Normal-approximation intervals `p̂ ± z √var`, clipped to `[0, 1]`.
    pub fn confidence_intervals(&self, level: f64) -> Result<Vec<(f64, f64)>> {
        let z = normal_quantile(level)?;
        Ok(self
            .p_hat
            .iter()
            .zip(&self.p_hat_var)
            .map(|(&p, &v)| {
                let half = z * v.sqrt();
                ((p - half).max(0.0), (p + half).min(1.0))
            })
            .collect())
    }
}

/// Two-sided standard normal quantile for a confidence level in (0, 1).
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(std.inverse_cdf(0.5 + level / 2.0))
}

pub(crate) fn binomial_var(p: f64, n: f64) -> f64 {
    if n <= 0.0 {
        return 0.0;
    }
    // exact zero at the boundary, never -0.0 or NaN
    (p * (1.0 - p) / n).max(0.0)
}

/// Step function `Ŝ` evaluated at `τ_0, …, τ_K`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalCurve {
    pub endpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl SurvivalCurve {
    /// Right-continuous evaluation: drops happen at the sampling times.
    pub fn eval(&self, t: f64) -> f64 {
        if t < self.endpoints[0] {
            return 1.0;
        }
        let k = self.endpoints.partition_point(|&e| e <= t) - 1;
        self.values[k]
    }
}

/// Step function `Λ̂` with its per-interval increments `Δ̂_k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CumulativeHazard {
    pub endpoints: Vec<f64>,
    pub increments: Vec<f64>,
    /// `Λ̂(τ_1), …, Λ̂(τ_K)`.
    pub values: Vec<f64>,
    /// First zero-based interval at which the survival mass is exhausted;
    /// values from there on are `+∞`.
    pub exhausted_at: Option<usize>,
}

impl CumulativeHazard {
    /// `Λ̂(t)` for `t ∈ (τ_{k−1}, τ_k]` is `Λ̂(τ_k)`.
    pub fn eval(&self, t: f64) -> f64 {
        if t <= self.endpoints[0] {
            return 0.0;
        }
        let k = self.endpoints.partition_point(|&e| e < t).min(self.values.len());
        self.values[k - 1]
    }
}

/// Asymptotic variances of `Ŝ` and `Λ̂` with plug-in survivor probabilities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport {
    /// At `τ_0, …, τ_K`.
    pub s_var: Vec<f64>,
    /// At `τ_1, …, τ_K`; `+∞` once the plug-in survivor probability is zero.
    pub lambda_var: Vec<f64>,
    /// Plug-in `Pr(T > τ_k)` at `τ_0, …, τ_K`.
    pub survivor_probs: Vec<f64>,
    pub zero_survivor_at: Option<usize>,
}

pub(crate) fn column_counts<'a>(records: impl IntoIterator<Item = &'a DetectionRecord>, k: usize) -> Vec<u64> {
    let mut counts = vec![0u64; k];
    for r in records {
        for (c, &d) in counts.iter_mut().zip(&r.deltas) {
            *c += d as u64;
        }
    }
    counts
}

/// Column means `p̂_k = n⁻¹ Σ_i δ_{i,k}` of one class.
pub fn estimate_interval_probs(data: &Dataset, class: &ClassId) -> Result<EstimateSet> {
    let part = data.partition(class)?;
    let records = data.nonempty_class_records(class)?;
    let n = records.len();
    let counts = column_counts(records.iter().copied(), part.k());
    let p_hat = counts.iter().map(|&c| c as f64 / n as f64).collect();
    Ok(EstimateSet::from_probs(
        class.clone(),
        part.endpoints().to_vec(),
        p_hat,
        n,
    ))
}

/// `1 − n⁻¹ Σ_i Σ_k δ_{i,k}`, the probability of never being observed.
///
/// Needs the undetected rows and at most one detection per record.
pub fn estimate_never_observed(data: &Dataset, class: &ClassId) -> Result<f64> {
    if !data.includes_undetected() {
        return Err(Error::RequiresRoster);
    }
    let records = data.nonempty_class_records(class)?;
    let mut total = 0usize;
    for r in &records {
        let d = r.detections();
        if d > 1 {
            return Err(Error::MultipleDetections(r.individual_id.clone()));
        }
        total += d;
    }
    Ok(1.0 - total as f64 / records.len() as f64)
}

fn survival_values(p_hat: &[f64]) -> std::result::Result<Vec<f64>, f64> {
    let mut values = Vec::with_capacity(p_hat.len() + 1);
    let mut s = 1.0;
    values.push(s);
    for &p in p_hat {
        s -= p;
        if s < -MASS_TOLERANCE {
            return Err(p_hat.iter().sum());
        }
        s = s.max(0.0);
        values.push(s);
    }
    Ok(values)
}

/// `Ŝ(τ_0) = 1`, `Ŝ(τ_k) = Ŝ(τ_{k−1}) − p̂_k`.
pub fn survival_curve(est: &EstimateSet) -> Result<SurvivalCurve> {
    let values = survival_values(&est.p_hat).map_err(Error::ProbMassExceedsOne)?;
    Ok(SurvivalCurve {
        endpoints: est.endpoints.clone(),
        values,
    })
}

/// Log-ratio transform of the survival steps.
///
/// Never fails: once the survival mass reaches zero the hazard is reported
/// as `+∞` and `exhausted_at` is set.
pub fn cumulative_hazard(est: &EstimateSet) -> CumulativeHazard {
    hazard_from_probs(&est.endpoints, &est.p_hat)
}

pub(crate) fn hazard_from_probs(endpoints: &[f64], p_hat: &[f64]) -> CumulativeHazard {
    let k = p_hat.len();
    let mut increments = Vec::with_capacity(k);
    let mut values = Vec::with_capacity(k);
    let mut exhausted_at = None;
    let mut prev = 1.0f64;
    let mut cum = 0.0f64;
    for (i, &p) in p_hat.iter().enumerate() {
        let s = (prev - p).max(0.0);
        if exhausted_at.is_some() || s <= 0.0 {
            exhausted_at.get_or_insert(i);
            increments.push(f64::INFINITY);
            values.push(f64::INFINITY);
            prev = 0.0;
            continue;
        }
        let inc = (prev / s).ln();
        cum += inc;
        increments.push(inc);
        values.push(cum);
        prev = s;
    }
    CumulativeHazard {
        endpoints: endpoints.to_vec(),
        increments,
        values,
        exhausted_at,
    }
}

/// Variances of `Ŝ(τ_k)` and `Λ̂(τ_k)` divided by `n`.
///
/// `Var Ŝ(τ_k) = n⁻¹ Σ_{k'≤k} p_{k'}(1 − p_{k'})`,
/// `Var Λ̂(τ_k) = n⁻¹ [Σ_{k'<k} p_{k'}(1 − p_{k'}) (p_k / (S_{k−1} S_k))² + p_k (1 − p_k) / S_k²]`
/// with `S_k = Ŝ(τ_k)` as plug-in for `Pr(T > τ_k)`.
pub fn asymptotic_variances(est: &EstimateSet) -> VarianceReport {
    let n = est.n_used as f64;
    let mut survivor_probs = Vec::with_capacity(est.k() + 1);
    let mut s = 1.0f64;
    survivor_probs.push(s);
    for &p in &est.p_hat {
        s = (s - p).max(0.0);
        survivor_probs.push(s);
    }

    let terms: Vec<f64> = est.p_hat.iter().map(|&p| (p * (1.0 - p)).max(0.0)).collect();
    let scale = |v: f64| if n > 0.0 { v / n } else { 0.0 };

    let mut s_var = Vec::with_capacity(est.k() + 1);
    s_var.push(0.0);
    let mut acc = 0.0;
    for &t in &terms {
        acc += t;
        s_var.push(scale(acc));
    }

    let mut lambda_var = Vec::with_capacity(est.k());
    let mut zero_survivor_at = None;
    let mut before = 0.0;
    for (k, &p) in est.p_hat.iter().enumerate() {
        let s_prev = survivor_probs[k];
        let s_k = survivor_probs[k + 1];
        if zero_survivor_at.is_some() || s_k <= 0.0 {
            zero_survivor_at.get_or_insert(k);
            lambda_var.push(f64::INFINITY);
        } else {
            let ratio = p / (s_prev * s_k);
            let v = before * ratio * ratio + terms[k] / (s_k * s_k);
            lambda_var.push(scale(v));
        }
        before += terms[k];
    }

    VarianceReport {
        s_var,
        lambda_var,
        survivor_probs,
        zero_survivor_at,
    }
}

/// Bernoulli log-likelihood `Σ_i Σ_k δ log p_k + (1 − δ) log(1 − p_k)`.
pub fn bernoulli_loglik(data: &Dataset, class: &ClassId, p: &[f64]) -> Result<f64> {
    let part = data.partition(class)?;
    if p.len() != part.k() {
        return Err(Error::InvalidArgument(format!(
            "expected {} probabilities, got {}",
            part.k(),
            p.len()
        )));
    }
    let records = data.class_records(class)?;
    let counts = column_counts(records.iter().copied(), part.k());
    let n = records.len() as f64;
    Ok(counts
        .iter()
        .zip(p)
        .map(|(&c, &pk)| xlogy(c as f64, pk) + xlogy(n - c as f64, 1.0 - pk))
        .sum())
}

/// `x log y` with the convention `0 log 0 = 0`.
pub(crate) fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DetectionRecord, IntervalPartition};
    use proptest::prelude::*;

    fn dataset(rows: &[&[u8]]) -> Dataset {
        let k = rows.first().map_or(1, |r| r.len());
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, r)| DetectionRecord::new(i.to_string(), "A", r.iter().map(|&d| d == 1).collect()))
            .collect();
        Dataset::new([IntervalPartition::unit("A", k).unwrap()], records, true).unwrap()
    }

    fn est(p: &[f64], n: usize) -> EstimateSet {
        EstimateSet::from_probs("A".into(), (0..=p.len()).map(|t| t as f64).collect(), p.to_vec(), n)
    }

    #[test]
    fn column_means() {
        let ds = dataset(&[&[1, 0], &[0, 1], &[1, 0], &[0, 0]]);
        let e = estimate_interval_probs(&ds, &"A".into()).unwrap();
        assert_eq!(e.p_hat, vec![0.5, 0.25]);
        assert_eq!(e.p_hat_var, vec![0.25 / 4.0, 0.1875 / 4.0]);
        assert_eq!(e.n_used, 4);
    }

    #[test]
    fn zero_and_one_columns_have_zero_variance() {
        let ds = dataset(&[&[0, 0, 0][..]; 5]);
        let e = estimate_interval_probs(&ds, &"A".into()).unwrap();
        assert_eq!(e.p_hat, vec![0.0; 3]);
        assert_eq!(e.p_hat_var, vec![0.0; 3]);

        let ds = dataset(&[&[1], &[1]]);
        let e = estimate_interval_probs(&ds, &"A".into()).unwrap();
        assert_eq!(e.p_hat, vec![1.0]);
        assert_eq!(e.p_hat_var, vec![0.0]);
        assert!(e.p_hat_var[0].is_sign_positive());
    }

    #[test]
    fn empty_class() {
        let ds = Dataset::new([IntervalPartition::unit("A", 2).unwrap()], vec![], true).unwrap();
        assert_eq!(
            estimate_interval_probs(&ds, &"A".into()).unwrap_err().code(),
            "EMPTY_CLASS"
        );
    }

    #[test]
    fn never_observed() {
        let ds = dataset(&[&[1, 0], &[0, 1], &[0, 0], &[0, 0]]);
        assert_eq!(estimate_never_observed(&ds, &"A".into()).unwrap(), 0.5);
        let ds = dataset(&[&[0, 0][..]; 3]);
        assert_eq!(estimate_never_observed(&ds, &"A".into()).unwrap(), 1.0);
        let ds = dataset(&[&[1, 1]]);
        assert_eq!(
            estimate_never_observed(&ds, &"A".into()).unwrap_err().code(),
            "MULTIPLE_DETECTIONS"
        );
        let detected_only = Dataset::new(
            [IntervalPartition::unit("A", 2).unwrap()],
            vec![DetectionRecord::new("1", "A", vec![true, false])],
            false,
        )
        .unwrap();
        assert_eq!(
            estimate_never_observed(&detected_only, &"A".into()).unwrap_err(),
            Error::RequiresRoster
        );
    }

    #[test]
    fn survival_steps() {
        let s = survival_curve(&est(&[0.5, 0.25], 4)).unwrap();
        assert_eq!(s.values, vec![1.0, 0.5, 0.25]);
        assert_eq!(s.eval(-1.0), 1.0);
        assert_eq!(s.eval(0.5), 1.0);
        assert_eq!(s.eval(1.0), 0.5);
        assert_eq!(s.eval(7.0), 0.25);

        let s = survival_curve(&est(&[0.0, 0.0, 0.0], 4)).unwrap();
        assert_eq!(s.values, vec![1.0; 4]);

        let err = survival_curve(&est(&[0.7, 0.6], 4)).unwrap_err();
        assert_eq!(err.code(), "PROB_MASS_EXCEEDS_ONE");
    }

    #[test]
    fn hazard_transform() {
        let h = cumulative_hazard(&est(&[0.5, 0.25], 4));
        let ln2 = std::f64::consts::LN_2;
        assert!((h.increments[0] - ln2).abs() < 1e-15);
        assert!((h.increments[1] - ln2).abs() < 1e-15);
        assert!((h.values[1] - 1.386294361119891).abs() < 1e-12);
        assert_eq!(h.exhausted_at, None);
        assert_eq!(h.eval(0.0), 0.0);
        assert_eq!(h.eval(0.3), h.values[0]);
        assert_eq!(h.eval(1.0), h.values[0]);
        assert_eq!(h.eval(1.2), h.values[1]);

        let h = cumulative_hazard(&est(&[0.0, 0.0], 4));
        assert_eq!(h.values, vec![0.0, 0.0]);

        let h = cumulative_hazard(&est(&[0.5, 0.5], 4));
        assert!((h.increments[0] - ln2).abs() < 1e-15);
        assert_eq!(h.increments[1], f64::INFINITY);
        assert_eq!(h.exhausted_at, Some(1));
    }

    #[test]
    fn variance_examples() {
        let v = asymptotic_variances(&est(&[0.5, 0.25], 100));
        assert!((v.s_var[1] - 0.0025).abs() < 1e-15);
        assert!((v.lambda_var[0] - 0.01).abs() < 1e-15);
        // second interval: 0.25 * (0.25 / (0.5 * 0.25))^2 + 0.1875 / 0.25^2, over n
        let expected = (0.25 * 4.0 + 0.1875 / 0.0625) / 100.0;
        assert!((v.lambda_var[1] - expected).abs() < 1e-15);
        assert_eq!(v.survivor_probs, vec![1.0, 0.5, 0.25]);

        let v = asymptotic_variances(&est(&[0.0, 0.0], 50));
        assert!(v.s_var.iter().chain(&v.lambda_var).all(|&x| x == 0.0));

        let v = asymptotic_variances(&est(&[0.5, 0.5], 10));
        assert_eq!(v.zero_survivor_at, Some(1));
        assert_eq!(v.lambda_var[1], f64::INFINITY);
        assert!(v.lambda_var[0].is_finite());
    }

    #[test]
    fn confidence_intervals_are_clipped() {
        let e = est(&[0.01, 0.5], 10);
        let ci = e.confidence_intervals(0.95).unwrap();
        assert_eq!(ci[0].0, 0.0);
        assert!(ci[1].0 < 0.5 && ci[1].1 > 0.5);
        assert!(e.confidence_intervals(1.5).is_err());
    }

    #[test]
    fn bernoulli_loglik_matches_direct_sum() {
        let ds = dataset(&[&[1, 0], &[0, 1], &[1, 1]]);
        let p = [0.4, 0.3];
        let direct = 2.0 * 0.4f64.ln() + 0.6f64.ln() + 2.0 * 0.3f64.ln() + 0.7f64.ln();
        let ll = bernoulli_loglik(&ds, &"A".into(), &p).unwrap();
        assert!((ll - direct).abs() < 1e-12);
    }

    fn arb_rows() -> impl Strategy<Value = (usize, Vec<Vec<bool>>)> {
        (1usize..6).prop_flat_map(|k| (Just(k), prop::collection::vec(prop::collection::vec(any::<bool>(), k), 1..40)))
    }

    proptest! {
        #[test]
        fn hazard_inverts_survival((k, rows) in arb_rows()) {
            // multinomial regime: keep only the first detection of each row
            let rows: Vec<Vec<bool>> = rows.into_iter().map(|r| {
                let first = r.iter().position(|&d| d);
                (0..k).map(|j| Some(j) == first).collect()
            }).collect();
            let records = rows.into_iter().enumerate()
                .map(|(i, d)| DetectionRecord::new(i.to_string(), "A", d)).collect();
            let ds = Dataset::new([IntervalPartition::unit("A", k).unwrap()], records, true).unwrap();
            let e = estimate_interval_probs(&ds, &"A".into()).unwrap();
            let s = survival_curve(&e).unwrap();
            let h = cumulative_hazard(&e);
            for j in 0..k {
                prop_assert!(s.values[j + 1] <= s.values[j]);
                prop_assert!(h.increments[j] >= 0.0);
                if h.values[j].is_finite() {
                    prop_assert!(((-h.values[j]).exp() - s.values[j + 1]).abs() <= 1e-12);
                    if e.p_hat[j] > 0.0 {
                        prop_assert!(h.increments[j] > 0.0);
                    }
                }
            }
        }

        #[test]
        fn record_order_is_irrelevant((k, rows) in arb_rows(), seed in any::<u64>()) {
            let records: Vec<DetectionRecord> = rows.into_iter().enumerate()
                .map(|(i, d)| DetectionRecord::new(i.to_string(), "A", d)).collect();
            let mut shuffled = records.clone();
            let len = shuffled.len();
            let mut state = seed;
            for i in (1..len).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (state >> 33) as usize % (i + 1));
            }
            let a = Dataset::new([IntervalPartition::unit("A", k).unwrap()], records, true).unwrap();
            let b = Dataset::new([IntervalPartition::unit("A", k).unwrap()], shuffled, true).unwrap();
            let ea = estimate_interval_probs(&a, &"A".into()).unwrap();
            let eb = estimate_interval_probs(&b, &"A".into()).unwrap();
            prop_assert_eq!(&ea, &eb);
            let ha = cumulative_hazard(&ea);
            let hb = cumulative_hazard(&eb);
            prop_assert!(ha.values.iter().zip(&hb.values).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
