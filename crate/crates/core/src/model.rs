//! Domain types shared by estimation, testing, simulation and IO.
//!
//! Every type here checks its invariants at construction and is immutable
//! afterwards, so validated values can be shared freely across threads.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of a population class.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(String);

impl ClassId {
    pub fn new(id: impl Into<String>) -> Self {
        ClassId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ClassId {
    fn from(s: &str) -> Self {
        ClassId(s.to_owned())
    }
}

/// Observation intervals `(τ_{k-1}, τ_k]`, `k = 1..=K`, of one class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalPartition {
    class_id: ClassId,
    endpoints: Vec<f64>,
}

impl IntervalPartition {
    pub fn new(class_id: impl Into<ClassId>, endpoints: Vec<f64>) -> Result<Self> {
        if endpoints.len() < 2
            || endpoints.iter().any(|t| !t.is_finite())
            || endpoints.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::NonmonotoneEndpoints);
        }
        Ok(IntervalPartition {
            class_id: class_id.into(),
            endpoints,
        })
    }

    /// Partition `0 < 1 < … < k`.
    pub fn unit(class_id: impl Into<ClassId>, k: usize) -> Result<Self> {
        Self::new(class_id, (0..=k).map(|t| t as f64).collect())
    }

    pub fn class_id(&self) -> &ClassId {
        &self.class_id
    }

    /// Number of intervals `K`.
    pub fn k(&self) -> usize {
        self.endpoints.len() - 1
    }

    pub fn endpoints(&self) -> &[f64] {
        &self.endpoints
    }

    /// Bounds of interval `k` (zero-based).
    pub fn interval(&self, k: usize) -> (f64, f64) {
        (self.endpoints[k], self.endpoints[k + 1])
    }

    /// Zero-based index of the interval containing `t`, if any.
    pub fn locate(&self, t: f64) -> Option<usize> {
        if t <= self.endpoints[0] || t > self.endpoints[self.k()] {
            return None;
        }
        // first endpoint >= t, intervals are closed on the right
        let idx = self.endpoints.partition_point(|&e| e < t);
        Some(idx - 1)
    }
}

impl From<String> for ClassId {
    fn from(s: String) -> Self {
        ClassId(s)
    }
}

/// Piece-wise constant covariate process.
///
/// Level `j` holds on the sub-interval between `breakpoints[j]` and
/// `breakpoints[j + 1]`. Evaluation is left-continuous: at a breakpoint the
/// path takes the value of the piece that ends there, so the value read at an
/// interval end point `τ_k` is the covariate in force during that interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariatePath {
    breakpoints: Vec<f64>,
    levels: Vec<Vec<f64>>,
}

impl CovariatePath {
    pub fn new(breakpoints: Vec<f64>, levels: Vec<Vec<f64>>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::InvalidCovariatePath(
                "at least two breakpoints are required".into(),
            ));
        }
        if breakpoints.iter().any(|t| !t.is_finite()) || breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidCovariatePath(
                "breakpoints must be finite and strictly increasing".into(),
            ));
        }
        if levels.len() + 1 != breakpoints.len() {
            return Err(Error::InvalidCovariatePath(format!(
                "{} breakpoints need {} levels, found {}",
                breakpoints.len(),
                breakpoints.len() - 1,
                levels.len()
            )));
        }
        let dim = levels[0].len();
        if let Some(bad) = levels.iter().find(|z| z.len() != dim) {
            return Err(Error::CovariateDimension {
                expected: dim,
                found: bad.len(),
            });
        }
        if levels.iter().flatten().any(|z| !z.is_finite()) {
            return Err(Error::InvalidCovariatePath("non-finite covariate value".into()));
        }
        Ok(CovariatePath { breakpoints, levels })
    }

    /// A path that stays at `z` over `[start, end]`.
    pub fn constant(start: f64, end: f64, z: Vec<f64>) -> Result<Self> {
        Self::new(vec![start, end], vec![z])
    }

    /// Builds a path from one covariate value per observation interval,
    /// merging adjacent intervals that share a value.
    pub fn from_interval_levels(endpoints: &[f64], per_interval: Vec<Vec<f64>>) -> Result<Self> {
        if per_interval.len() + 1 != endpoints.len() {
            return Err(Error::InvalidCovariatePath(format!(
                "{} intervals need {} levels, found {}",
                endpoints.len().saturating_sub(1),
                endpoints.len().saturating_sub(1),
                per_interval.len()
            )));
        }
        let mut breakpoints = vec![endpoints[0]];
        let mut levels: Vec<Vec<f64>> = Vec::new();
        for (k, z) in per_interval.into_iter().enumerate() {
            match levels.last() {
                Some(last) if *last == z => {
                    *breakpoints.last_mut().unwrap() = endpoints[k + 1];
                }
                _ => {
                    levels.push(z);
                    breakpoints.push(endpoints[k + 1]);
                }
            }
        }
        Self::new(breakpoints, levels)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    pub fn dim(&self) -> usize {
        self.levels[0].len()
    }

    /// Left-continuous value at `t`; clamps to the first or last level
    /// outside the covered range.
    pub fn value_at(&self, t: f64) -> &[f64] {
        let j = self.breakpoints[1..].partition_point(|&b| b < t);
        &self.levels[j.min(self.levels.len() - 1)]
    }

    /// Pieces of the path inside `(lo, hi]` as `(start, end, level)` triples,
    /// with the first and last level extended to cover the whole range.
    pub fn pieces_within(&self, lo: f64, hi: f64) -> Vec<(f64, f64, &[f64])> {
        let last = self.levels.len() - 1;
        let mut out = Vec::new();
        for (j, z) in self.levels.iter().enumerate() {
            let start = if j == 0 { f64::NEG_INFINITY } else { self.breakpoints[j] };
            let end = if j == last { f64::INFINITY } else { self.breakpoints[j + 1] };
            let a = start.max(lo);
            let b = end.min(hi);
            if a < b {
                out.push((a, b, z.as_slice()));
            }
        }
        out
    }
}

/// Pair `(from, to)` recording a class change at the observation time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTransition {
    pub from: ClassId,
    pub to: ClassId,
}

/// One individual's detection indicators on the intervals of its class.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub individual_id: String,
    pub class_id: ClassId,
    pub deltas: Vec<bool>,
    pub covariates: Option<CovariatePath>,
    pub transition: Option<ClassTransition>,
}

impl DetectionRecord {
    pub fn new(individual_id: impl Into<String>, class_id: impl Into<ClassId>, deltas: Vec<bool>) -> Self {
        DetectionRecord {
            individual_id: individual_id.into(),
            class_id: class_id.into(),
            deltas,
            covariates: None,
            transition: None,
        }
    }

    pub fn with_covariates(mut self, path: CovariatePath) -> Self {
        self.covariates = Some(path);
        self
    }

    pub fn with_transition(mut self, from: impl Into<ClassId>, to: impl Into<ClassId>) -> Self {
        self.transition = Some(ClassTransition {
            from: from.into(),
            to: to.into(),
        });
        self
    }

    /// Number of intervals on which the individual was detected.
    pub fn detections(&self) -> usize {
        self.deltas.iter().filter(|&&d| d).count()
    }
}

/// Validated collection of detection records with their class partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    partitions: BTreeMap<ClassId, IntervalPartition>,
    records: Vec<DetectionRecord>,
    includes_undetected: bool,
    covariate_dim: Option<usize>,
}

impl Dataset {
    /// Assembles and validates a dataset.
    ///
    /// `includes_undetected` states whether individuals never detected are
    /// present as all-zero rows (roster known) or absent (detected-only).
    pub fn new(
        partitions: impl IntoIterator<Item = IntervalPartition>,
        records: Vec<DetectionRecord>,
        includes_undetected: bool,
    ) -> Result<Self> {
        let partitions: BTreeMap<ClassId, IntervalPartition> = partitions
            .into_iter()
            .map(|p| (p.class_id.clone(), p))
            .collect();
        let mut ds = Dataset {
            partitions,
            records,
            includes_undetected,
            covariate_dim: None,
        };
        ds.covariate_dim = ds.check()?;
        Ok(ds)
    }

    fn check(&self) -> Result<Option<usize>> {
        if self.partitions.is_empty() {
            return Err(Error::SchemaMismatch("dataset has no class partitions".into()));
        }
        for (id, p) in &self.partitions {
            // re-run the constructor checks on the stored endpoints
            IntervalPartition::new(id.clone(), p.endpoints.clone())?;
        }
        let mut dim: Option<usize> = None;
        let mut seen: BTreeSet<(&ClassId, &str)> = BTreeSet::new();
        for r in &self.records {
            let part = self
                .partitions
                .get(&r.class_id)
                .ok_or_else(|| Error::UnknownClass(r.class_id.to_string()))?;
            if r.deltas.len() != part.k() {
                return Err(Error::MisalignedDeltas {
                    individual: r.individual_id.clone(),
                    class: r.class_id.to_string(),
                    expected: part.k(),
                    found: r.deltas.len(),
                });
            }
            if !self.includes_undetected && r.detections() == 0 {
                return Err(Error::UndetectedRecord(r.individual_id.clone()));
            }
            if !seen.insert((&r.class_id, r.individual_id.as_str())) {
                return Err(Error::DuplicateIndividual {
                    class: r.class_id.to_string(),
                    individual: r.individual_id.clone(),
                });
            }
            if let Some(t) = &r.transition {
                if t.to != r.class_id {
                    return Err(Error::TransitionMismatch {
                        individual: r.individual_id.clone(),
                        class: r.class_id.to_string(),
                        to: t.to.to_string(),
                    });
                }
            }
            if let Some(path) = &r.covariates {
                match dim {
                    None => dim = Some(path.dim()),
                    Some(d) if d != path.dim() => {
                        return Err(Error::CovariateDimension {
                            expected: d,
                            found: path.dim(),
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(dim)
    }

    pub fn partitions(&self) -> &BTreeMap<ClassId, IntervalPartition> {
        &self.partitions
    }

    pub fn partition(&self, class: &ClassId) -> Result<&IntervalPartition> {
        self.partitions
            .get(class)
            .ok_or_else(|| Error::UnknownClass(class.to_string()))
    }

    pub fn records(&self) -> &[DetectionRecord] {
        &self.records
    }

    pub fn includes_undetected(&self) -> bool {
        self.includes_undetected
    }

    /// Covariate dimension shared by every record carrying a path.
    pub fn covariate_dim(&self) -> Option<usize> {
        self.covariate_dim
    }

    pub fn class_ids(&self) -> impl Iterator<Item = &ClassId> {
        self.partitions.keys()
    }

    /// Records of one class, in dataset order.
    pub fn class_records<'a>(&'a self, class: &ClassId) -> Result<Vec<&'a DetectionRecord>> {
        self.partition(class)?;
        Ok(self.records.iter().filter(|r| &r.class_id == class).collect())
    }

    /// Like [`Dataset::class_records`] but rejects an empty class.
    pub fn nonempty_class_records<'a>(&'a self, class: &ClassId) -> Result<Vec<&'a DetectionRecord>> {
        let recs = self.class_records(class)?;
        if recs.is_empty() {
            return Err(Error::EmptyClass(class.to_string()));
        }
        Ok(recs)
    }

    pub fn into_parts(self) -> (Vec<IntervalPartition>, Vec<DetectionRecord>, bool) {
        (
            self.partitions.into_values().collect(),
            self.records,
            self.includes_undetected,
        )
    }
}

/// Re-checks every invariant of `raw` and hands it back unchanged.
pub fn validate_dataset(raw: Dataset) -> Result<Dataset> {
    let dim = raw.check()?;
    debug_assert_eq!(dim, raw.covariate_dim);
    Ok(raw)
}

/// Covariate value rounded to 12 significant digits, usable as a map key.
///
/// Finite-level estimators group individuals whose covariates are equal
/// after this rounding.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CovariateLevel(Vec<f64>);

impl CovariateLevel {
    pub fn new(z: &[f64]) -> Self {
        CovariateLevel(z.iter().map(|&x| canonical_round(x)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl PartialEq for CovariateLevel {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}

impl Eq for CovariateLevel {}

impl PartialOrd for CovariateLevel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for CovariateLevel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        for (a, b) in self.0.iter().zip(&other.0) {
            match a.total_cmp(b) {
                std::cmp::Ordering::Equal => continue,
                o => return o,
            }
        }
        self.0.len().cmp(&other.0.len())
    }
}

impl fmt::Display for CovariateLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|x| x.to_string()).collect();
        f.write_str(&parts.join(";"))
    }
}

fn canonical_round(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        // folds -0.0 into 0.0
        return x + 0.0;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}
