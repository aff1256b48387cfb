//! Dependence between consecutive intervals and between detection and class
//! transitions, with χ²-type independence tests.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::covariate::interval_level;
use crate::error::{Error, Result};
use crate::estimate::{column_counts, hazard_from_probs, survival_curve, CumulativeHazard, EstimateSet, SurvivalCurve};
use crate::model::{ClassId, CovariateLevel, Dataset, DetectionRecord};
use crate::stats::chi2_sf;

/// Scaling of the reported test statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// `n` times the literal statistic, which has a nondegenerate χ² limit.
    #[default]
    SampleScaled,
    /// Sum of squared relative deviations of proportions, of order `1/n` under independence.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub scaling: Scaling,
    pub df: u64,
    /// Upper χ²_df tail at the sample-scaled statistic.
    pub p_value: f64,
    pub cells_used: usize,
    pub cells_excluded: usize,
    /// Set when the stated degrees of freedom are zero, so the reference law
    /// is a point mass and the p-value is 0 or 1.
    pub df_anomaly: bool,
    pub n: usize,
}

impl TestResult {
    fn new(literal: f64, n: usize, scaling: Scaling, df: u64, cells_used: usize, cells_excluded: usize) -> Self {
        let scaled = literal * n as f64;
        TestResult {
            statistic: match scaling {
                Scaling::SampleScaled => scaled,
                Scaling::Literal => literal,
            },
            scaling,
            df,
            p_value: chi2_sf(scaled, df),
            cells_used,
            cells_excluded,
            df_anomaly: df == 0,
            n,
        }
    }
}

/// Consecutive-pair estimates restricted to one covariate level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelJointEstimates {
    pub level: CovariateLevel,
    /// Records at this level on both intervals `k` and `k + 1`.
    pub members: Vec<u64>,
    pub pi_hat: Vec<Option<f64>>,
    /// Joint detections at this level divided by the class size.
    pub p_joint_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointEstimates {
    pub class_id: ClassId,
    pub n: usize,
    pub p_hat: Vec<f64>,
    /// `π̂_k`: share of interval-`k` detections also detected on `k + 1`;
    /// `None` when nobody is detected on `k`.
    pub pi_hat: Vec<Option<f64>>,
    /// `p̂_{k,k+1}`: share of records detected on both `k` and `k + 1`.
    pub p_joint_hat: Vec<f64>,
    pub joint_counts: Vec<u64>,
    pub by_level: Option<Vec<LevelJointEstimates>>,
}

fn joint_counts(records: &[&DetectionRecord], k: usize) -> Vec<u64> {
    (0..k - 1)
        .map(|c| records.iter().filter(|r| r.deltas[c] && r.deltas[c + 1]).count() as u64)
        .collect()
}

/// Per-level members, detections on `k` and joint detections on `(k, k + 1)`.
type LevelCounts = (Vec<u64>, Vec<u64>, Vec<u64>);

pub fn joint_estimates(data: &Dataset, class: &ClassId) -> Result<JointEstimates> {
    let part = data.partition(class)?;
    let k = part.k();
    if k < 2 {
        return Err(Error::KTooSmall(k));
    }
    let records = data.nonempty_class_records(class)?;
    let n = records.len();
    let nf = n as f64;
    let single = column_counts(records.iter().copied(), k);
    let joint = joint_counts(&records, k);
    let pi_hat = (0..k - 1)
        .map(|c| (single[c] > 0).then(|| joint[c] as f64 / single[c] as f64))
        .collect();

    let by_level = if records.iter().all(|r| r.covariates.is_some()) {
        let mut cells: BTreeMap<CovariateLevel, LevelCounts> = BTreeMap::new();
        for r in &records {
            for c in 0..k - 1 {
                let lvl = interval_level(r, part, c)?;
                if interval_level(r, part, c + 1)? != lvl {
                    continue;
                }
                let e = cells
                    .entry(lvl)
                    .or_insert_with(|| (vec![0; k - 1], vec![0; k - 1], vec![0; k - 1]));
                e.0[c] += 1;
                e.1[c] += r.deltas[c] as u64;
                e.2[c] += (r.deltas[c] && r.deltas[c + 1]) as u64;
            }
        }
        Some(
            cells
                .into_iter()
                .map(|(level, (members, first, both))| LevelJointEstimates {
                    level,
                    pi_hat: (0..k - 1)
                        .map(|c| (first[c] > 0).then(|| both[c] as f64 / first[c] as f64))
                        .collect(),
                    p_joint_hat: both.iter().map(|&b| b as f64 / nf).collect(),
                    members,
                })
                .collect(),
        )
    } else {
        None
    };

    Ok(JointEstimates {
        class_id: class.clone(),
        n,
        p_hat: single.iter().map(|&c| c as f64 / nf).collect(),
        pi_hat,
        p_joint_hat: joint.iter().map(|&c| c as f64 / nf).collect(),
        joint_counts: joint,
        by_level,
    })
}

/// Two algebraically equal forms of the literal consecutive-pair statistic:
/// the probability form `Σ (p̂_k p̂_{k+1} − p̂_{k,k+1})² / (p̂_k p̂_{k+1})` and
/// the count form `Σ (N_{k,k+1} − N_k N_{k+1}/n)² / (N_k N_{k+1})`.
/// Pairs with `N_k N_{k+1} = 0` are skipped in both.
pub fn consecutive_statistic_forms(data: &Dataset, class: &ClassId) -> Result<(f64, f64)> {
    let (prob, count, _) = consecutive_terms(data, class)?;
    Ok((prob, count))
}

fn consecutive_terms(data: &Dataset, class: &ClassId) -> Result<(f64, f64, JointEstimates)> {
    let je = joint_estimates(data, class)?;
    let nf = je.n as f64;
    let single: Vec<f64> = je.p_hat.iter().map(|p| (p * nf).round()).collect();
    let mut prob = 0.0;
    let mut count = 0.0;
    for c in 0..je.p_joint_hat.len() {
        let (a, b) = (je.p_hat[c], je.p_hat[c + 1]);
        if a * b == 0.0 {
            continue;
        }
        prob += (a * b - je.p_joint_hat[c]).powi(2) / (a * b);
        let (na, nb, nab) = (single[c], single[c + 1], je.joint_counts[c] as f64);
        count += (nab - na * nb / nf).powi(2) / (na * nb);
    }
    Ok((prob, count, je))
}

/// Test of independent detection on consecutive intervals, referred to
/// `χ²_{(K−2)²}`.
pub fn independence_test_consecutive(data: &Dataset, class: &ClassId, scaling: Scaling) -> Result<TestResult> {
    let (prob, count, je) = consecutive_terms(data, class)?;
    debug_assert!(
        (prob - count).abs() <= 1e-12 * prob.abs().max(1.0),
        "probability form {prob} and count form {count} disagree"
    );
    let pairs = je.p_joint_hat.len();
    let used = (0..pairs).filter(|&c| je.p_hat[c] * je.p_hat[c + 1] > 0.0).count();
    if used == 0 {
        return Err(Error::NoNondegenerateCells);
    }
    let k = je.p_hat.len() as u64;
    Ok(TestResult::new(prob, je.n, scaling, (k - 2) * (k - 2), used, pairs - used))
}

/// Detection estimates for records of class `to` that arrived from `from`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkovCell {
    pub to: ClassId,
    pub from: ClassId,
    /// Records of class `to` labelled with origin `from`.
    pub members: u64,
    pub detections: Vec<u64>,
    /// `q̂_{ll′}`: `members / n_l`.
    pub q_hat: f64,
    /// `p̂_{l|l′,k}`; `None` for an empty cell.
    pub p_cond: Option<Vec<f64>>,
    /// `p̂_{ll′,k} = p̂_{l|l′,k} q̂_{ll′}`.
    pub p_joint: Vec<f64>,
    pub survival: Option<SurvivalCurve>,
    pub hazard: Option<CumulativeHazard>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkovEstimates {
    /// One entry per destination class and candidate origin, in id order.
    pub cells: Vec<MarkovCell>,
    /// `(to, from)` pairs without any labelled record.
    pub empty_cells: Vec<(ClassId, ClassId)>,
}

impl MarkovEstimates {
    pub fn cell(&self, to: &ClassId, from: &ClassId) -> Option<&MarkovCell> {
        self.cells.iter().find(|c| &c.to == to && &c.from == from)
    }
}

/// Origins that can label a record: every class of the dataset and every
/// origin that occurs in a transition label.
fn origin_universe(data: &Dataset) -> BTreeSet<ClassId> {
    let mut out: BTreeSet<ClassId> = data.class_ids().cloned().collect();
    out.extend(data.records().iter().filter_map(|r| r.transition.as_ref().map(|t| t.from.clone())));
    out
}

pub fn markov_estimates(data: &Dataset) -> Result<MarkovEstimates> {
    if data.records().iter().all(|r| r.transition.is_none()) {
        return Err(Error::NoTransitionLabels);
    }
    let origins = origin_universe(data);
    let mut cells = Vec::new();
    let mut empty_cells = Vec::new();
    for to in data.class_ids() {
        let part = data.partition(to)?;
        let k = part.k();
        let records = data.class_records(to)?;
        let n = records.len() as f64;
        for from in &origins {
            let members: Vec<&DetectionRecord> = records
                .iter()
                .copied()
                .filter(|r| r.transition.as_ref().is_some_and(|t| &t.from == from))
                .collect();
            let m = members.len() as u64;
            let detections = column_counts(members.iter().copied(), k);
            let q_hat = if n > 0.0 { m as f64 / n } else { 0.0 };
            let p_cond: Option<Vec<f64>> = (m > 0).then(|| detections.iter().map(|&d| d as f64 / m as f64).collect());
            let (survival, hazard) = match &p_cond {
                Some(p) => {
                    let est = EstimateSet::from_probs(to.clone(), part.endpoints().to_vec(), p.clone(), m as usize);
                    (survival_curve(&est).ok(), Some(hazard_from_probs(part.endpoints(), p)))
                }
                None => {
                    empty_cells.push((to.clone(), from.clone()));
                    (None, None)
                }
            };
            cells.push(MarkovCell {
                to: to.clone(),
                from: from.clone(),
                members: m,
                p_joint: match &p_cond {
                    Some(p) => p.iter().map(|p| p * q_hat).collect(),
                    None => vec![0.0; k],
                },
                detections,
                q_hat,
                p_cond,
                survival,
                hazard,
            });
        }
    }
    Ok(MarkovEstimates { cells, empty_cells })
}

/// Test that detection in class `class` is independent of the origin class,
/// referred to `χ²_{(K−1)(L−1)}` with `L` the number of observed origins.
///
/// The marginal detection probability is the pooled per-interval estimate
/// over all records of the class, labelled or not.
pub fn markov_independence_test(data: &Dataset, class: &ClassId, scaling: Scaling) -> Result<TestResult> {
    let part = data.partition(class)?;
    let k = part.k();
    if k < 2 {
        return Err(Error::KTooSmall(k));
    }
    let records = data.nonempty_class_records(class)?;
    if records.iter().all(|r| r.transition.is_none()) {
        return Err(Error::NoTransitionLabels);
    }
    let n = records.len() as f64;
    let single = column_counts(records.iter().copied(), k);

    let mut by_origin: BTreeMap<&ClassId, (u64, Vec<u64>)> = BTreeMap::new();
    for r in &records {
        if let Some(t) = &r.transition {
            let e = by_origin.entry(&t.from).or_insert_with(|| (0, vec![0; k]));
            e.0 += 1;
            for (c, &d) in r.deltas.iter().enumerate() {
                e.1[c] += d as u64;
            }
        }
    }
    let l = by_origin.len();
    if l < 2 {
        return Err(Error::TooFewOrigins(l));
    }

    let mut literal = 0.0;
    let mut used = 0;
    let mut excluded = 0;
    for c in 0..k {
        let p = single[c] as f64 / n;
        for (m, det) in by_origin.values() {
            let q = *m as f64 / n;
            let e = p * q;
            if e == 0.0 {
                excluded += 1;
                continue;
            }
            used += 1;
            literal += (det[c] as f64 / n - e).powi(2) / e;
        }
    }
    if used == 0 {
        return Err(Error::NoNondegenerateCells);
    }
    let df = ((k - 1) * (l - 1)) as u64;
    Ok(TestResult::new(literal, records.len(), scaling, df, used, excluded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::estimate_interval_probs;
    use crate::model::{CovariatePath, IntervalPartition};
    use proptest::prelude::*;

    fn ds(rows: &[&[u8]]) -> Dataset {
        let k = rows[0].len();
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, d)| DetectionRecord::new(i.to_string(), "A", d.iter().map(|&x| x == 1).collect()))
            .collect();
        Dataset::new([IntervalPartition::unit("A", k).unwrap()], records, true).unwrap()
    }

    fn labelled(rows: &[(&str, &[u8])]) -> Dataset {
        let k = rows[0].1.len();
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, (from, d))| {
                DetectionRecord::new(i.to_string(), "A", d.iter().map(|&x| x == 1).collect()).with_transition(*from, "A")
            })
            .collect();
        Dataset::new([IntervalPartition::unit("A", k).unwrap()], records, true).unwrap()
    }

    #[test]
    fn joint_hand_example() {
        let data = ds(&[&[1, 1], &[1, 0], &[0, 1], &[0, 0]]);
        let je = joint_estimates(&data, &"A".into()).unwrap();
        assert_eq!(je.p_joint_hat, vec![0.25]);
        assert_eq!(je.pi_hat, vec![Some(0.5)]);
        let t = independence_test_consecutive(&data, &"A".into(), Scaling::SampleScaled).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.p_value, 1.0);
        assert!(t.df_anomaly);
        assert_eq!(t.df, 0);
    }

    #[test]
    fn joint_degenerate_cases() {
        let data = ds(&[&[1, 0, 1], &[0, 1, 0], &[0, 0, 0]]);
        let je = joint_estimates(&data, &"A".into()).unwrap();
        assert_eq!(je.p_joint_hat, vec![0.0, 0.0]);
        let data = ds(&[&[1, 1, 1], &[1, 1, 1]]);
        let je = joint_estimates(&data, &"A".into()).unwrap();
        assert_eq!(je.pi_hat, vec![Some(1.0), Some(1.0)]);
        assert_eq!(joint_estimates(&ds(&[&[1]]), &"A".into()).unwrap_err(), Error::KTooSmall(1));
    }

    #[test]
    fn joint_by_level() {
        let part = IntervalPartition::unit("A", 2).unwrap();
        let mk = |id: &str, d: [bool; 2], z: f64| {
            DetectionRecord::new(id, "A", d.to_vec()).with_covariates(CovariatePath::constant(0.0, 2.0, vec![z]).unwrap())
        };
        let data = Dataset::new(
            [part],
            vec![mk("1", [true, true], 0.0), mk("2", [true, false], 0.0), mk("3", [true, true], 1.0), mk("4", [false, false], 1.0)],
            true,
        )
        .unwrap();
        let je = joint_estimates(&data, &"A".into()).unwrap();
        let lv = je.by_level.unwrap();
        assert_eq!(lv[0].pi_hat, vec![Some(0.5)]);
        assert_eq!(lv[1].pi_hat, vec![Some(1.0)]);
        assert_eq!(lv[1].p_joint_hat, vec![0.25]);
    }

    #[test]
    fn no_nondegenerate_cells() {
        let data = ds(&[&[0, 1, 0], &[0, 0, 0]]);
        assert_eq!(
            independence_test_consecutive(&data, &"A".into(), Scaling::SampleScaled).unwrap_err(),
            Error::NoNondegenerateCells
        );
    }

    #[test]
    fn consecutive_scaling_and_exclusion() {
        // second pair has N_2 N_3 > 0, first pair N_1 = 0
        let data = ds(&[&[0, 1, 1], &[0, 1, 0], &[0, 0, 1], &[0, 0, 0], &[0, 1, 1]]);
        let lit = independence_test_consecutive(&data, &"A".into(), Scaling::Literal).unwrap();
        let sc = independence_test_consecutive(&data, &"A".into(), Scaling::SampleScaled).unwrap();
        assert_eq!((lit.cells_used, lit.cells_excluded), (1, 1));
        // p2 = p3 = 0.6, p23 = 0.4
        let expected = (0.36f64 - 0.4).powi(2) / 0.36;
        assert!((lit.statistic - expected).abs() < 1e-15);
        assert!((sc.statistic - 5.0 * expected).abs() < 1e-14);
        assert_eq!(sc.df, 1);
        assert!((sc.p_value - crate::stats::chi2_sf(5.0 * expected, 1)).abs() < 1e-15);
    }

    #[test]
    fn markov_single_origin_matches_pooled() {
        let data = labelled(&[("B", &[1, 0]), ("B", &[0, 1]), ("B", &[0, 0]), ("B", &[1, 0])]);
        let m = markov_estimates(&data).unwrap();
        let cell = m.cell(&"A".into(), &"B".into()).unwrap();
        assert_eq!(cell.q_hat, 1.0);
        let pooled = estimate_interval_probs(&data, &"A".into()).unwrap();
        assert_eq!(cell.p_cond.as_ref().unwrap(), &pooled.p_hat);
        assert_eq!(m.empty_cells, vec![(ClassId::from("A"), ClassId::from("A"))]);
        assert_eq!(
            markov_independence_test(&data, &"A".into(), Scaling::SampleScaled).unwrap_err(),
            Error::TooFewOrigins(1)
        );
    }

    #[test]
    fn markov_six_record_example() {
        let data = labelled(&[
            ("B", &[1, 0]),
            ("B", &[0, 1]),
            ("B", &[1, 0]),
            ("C", &[0, 1]),
            ("C", &[0, 1]),
            ("C", &[0, 0]),
        ]);
        let m = markov_estimates(&data).unwrap();
        let b = m.cell(&"A".into(), &"B".into()).unwrap();
        let c = m.cell(&"A".into(), &"C".into()).unwrap();
        assert_eq!(b.p_cond.as_ref().unwrap(), &vec![2.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(c.p_cond.as_ref().unwrap(), &vec![0.0, 2.0 / 3.0]);
        assert_eq!(b.q_hat, 0.5);
        assert!((b.p_joint[0] - 1.0 / 3.0).abs() < 1e-15);
        let total_q: f64 = m.cells.iter().map(|c| c.q_hat).sum();
        assert!(total_q <= 1.0 + 1e-9);
    }

    #[test]
    fn markov_test_hand_arithmetic() {
        // K = 2, L = 2; one excess joint cell (origin B detected on interval 1)
        let data = labelled(&[("B", &[1, 0]), ("B", &[1, 0]), ("C", &[0, 1]), ("C", &[1, 0])]);
        // N = (3, 1), M = (2, 2), n = 4; expected counts N_k M_l / n
        // O = [[2, 1], [0, 1]], E = [[1.5, 1.5], [0.5, 0.5]]
        let pearson = 0.25 / 1.5 + 0.25 / 1.5 + 0.25 / 0.5 + 0.25 / 0.5;
        let t = markov_independence_test(&data, &"A".into(), Scaling::SampleScaled).unwrap();
        assert!((t.statistic - pearson).abs() < 1e-12);
        assert_eq!(t.df, 1);
        let lit = markov_independence_test(&data, &"A".into(), Scaling::Literal).unwrap();
        assert!((lit.statistic * 4.0 - pearson).abs() < 1e-12);
    }

    #[test]
    fn markov_factorizing_table_is_zero() {
        let data = labelled(&[("B", &[1, 0]), ("B", &[0, 1]), ("C", &[1, 0]), ("C", &[0, 1])]);
        let t = markov_independence_test(&data, &"A".into(), Scaling::SampleScaled).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.p_value, 1.0);
    }

    #[test]
    fn no_labels() {
        let data = ds(&[&[1, 0]]);
        assert_eq!(markov_estimates(&data).unwrap_err(), Error::NoTransitionLabels);
    }

    fn rows_strategy() -> impl Strategy<Value = Vec<Vec<u8>>> {
        (2usize..6).prop_flat_map(|k| prop::collection::vec(prop::collection::vec(0u8..2, k), 1..40))
    }

    proptest! {
        #[test]
        fn joint_identity_and_forms(rows in rows_strategy()) {
            let refs: Vec<&[u8]> = rows.iter().map(|r| r.as_slice()).collect();
            let data = ds(&refs);
            let je = joint_estimates(&data, &"A".into()).unwrap();
            for c in 0..je.p_joint_hat.len() {
                prop_assert!(je.p_joint_hat[c] <= je.p_hat[c].min(je.p_hat[c + 1]) + 1e-12);
                if let Some(pi) = je.pi_hat[c] {
                    prop_assert!((je.p_joint_hat[c] - pi * je.p_hat[c]).abs() <= 1e-15);
                }
            }
            let (a, b) = consecutive_statistic_forms(&data, &"A".into()).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn statistic_is_permutation_invariant(rows in rows_strategy(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let refs: Vec<&[u8]> = rows.iter().map(|r| r.as_slice()).collect();
            let mut shuffled = refs.clone();
            shuffled.shuffle(&mut crate::parallel::stream_rng(seed, 0));
            let a = independence_test_consecutive(&ds(&refs), &"A".into(), Scaling::SampleScaled);
            let b = independence_test_consecutive(&ds(&shuffled), &"A".into(), Scaling::SampleScaled);
            prop_assert_eq!(a, b);
        }
    }
}
