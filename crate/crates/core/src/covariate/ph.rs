use std::collections::BTreeMap;

use serde::Serialize;

use super::level_matrix;
use crate::error::{Error, Result};
use crate::estimate::{column_counts, hazard_from_probs, CumulativeHazard, SurvivalCurve};
use crate::model::{ClassId, CovariateLevel, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhLevel {
    pub level: CovariateLevel,
    /// Members of the level on each interval.
    pub counts: Vec<u64>,
    pub detections: Vec<u64>,
    /// `p̂(I_k, Z_j)`, `None` when the level has no members on interval `k`.
    pub p_hat: Vec<Option<f64>>,
    /// `ω̂_{k,j} = log(n D_{kj} / (N_k M_{kj}))`; `None` when undefined,
    /// `-∞` when the level has members but no detections.
    pub omega_hat: Vec<Option<f64>>,
    pub survival: Option<SurvivalCurve>,
    pub hazard: Option<CumulativeHazard>,
}

/// Finite-level proportional-hazards decomposition of one class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhDecomposition {
    pub class_id: ClassId,
    pub endpoints: Vec<f64>,
    pub n: usize,
    /// `μ̂_k = log p̂_k`; `-∞` on intervals without detections.
    pub mu_hat: Vec<f64>,
    /// Intervals where `μ̂_k` or some `ω̂_{k,j}` is the log of zero.
    pub log_of_zero: Vec<usize>,
    pub levels: Vec<PhLevel>,
    /// Coefficients solved from `ω̂_{k,j} = c_k + β_k' Z_j` when the levels
    /// present on interval `k` form a square full-rank design. Derived
    /// convenience, not a closed-form estimator.
    pub beta_hat: Vec<Option<Vec<f64>>>,
}

pub fn ph_decomposition(data: &Dataset, class: &ClassId) -> Result<PhDecomposition> {
    let part = data.partition(class)?;
    let records = data.nonempty_class_records(class)?;
    let levels = level_matrix(&records, part)?;
    let k = part.k();
    let n = records.len();
    let totals = column_counts(records.iter().copied(), k);

    let mut cells: BTreeMap<CovariateLevel, (Vec<u64>, Vec<u64>)> = BTreeMap::new();
    for (r, row) in records.iter().zip(&levels) {
        for (kk, lvl) in row.iter().enumerate() {
            let (m, d) = cells.entry(lvl.clone()).or_insert_with(|| (vec![0; k], vec![0; k]));
            m[kk] += 1;
            d[kk] += r.deltas[kk] as u64;
        }
    }

    let mut log_of_zero = Vec::new();
    let mu_hat: Vec<f64> = totals
        .iter()
        .enumerate()
        .map(|(kk, &c)| {
            if c == 0 {
                log_of_zero.push(kk);
            }
            (c as f64 / n as f64).ln()
        })
        .collect();

    let nf = n as f64;
    let mut out = Vec::with_capacity(cells.len());
    for (level, (counts, detections)) in cells {
        let mut p_hat = Vec::with_capacity(k);
        let mut omega_hat = Vec::with_capacity(k);
        for kk in 0..k {
            let (m, d, tot) = (counts[kk] as f64, detections[kk] as f64, totals[kk] as f64);
            p_hat.push((m > 0.0).then(|| d / m));
            omega_hat.push(if m > 0.0 && tot > 0.0 {
                if d == 0.0 {
                    log_of_zero.push(kk);
                }
                Some(((nf * d) / (tot * m)).ln())
            } else {
                None
            });
        }
        let (survival, hazard) = match p_hat.iter().copied().collect::<Option<Vec<f64>>>() {
            Some(p) => level_curves(part.endpoints(), &p),
            None => (None, None),
        };
        out.push(PhLevel {
            level,
            counts,
            detections,
            p_hat,
            omega_hat,
            survival,
            hazard,
        });
    }
    log_of_zero.sort_unstable();
    log_of_zero.dedup();

    let beta_hat = (0..k).map(|kk| solve_beta(&out, kk)).collect();
    Ok(PhDecomposition {
        class_id: class.clone(),
        endpoints: part.endpoints().to_vec(),
        n,
        mu_hat,
        log_of_zero,
        levels: out,
        beta_hat,
    })
}

fn level_curves(endpoints: &[f64], p: &[f64]) -> (Option<SurvivalCurve>, Option<CumulativeHazard>) {
    let mut values = vec![1.0];
    let mut s = 1.0f64;
    for &pk in p {
        s -= pk;
        if s < -1e-12 {
            return (None, None);
        }
        s = s.max(0.0);
        values.push(s);
    }
    (
        Some(SurvivalCurve {
            endpoints: endpoints.to_vec(),
            values,
        }),
        Some(hazard_from_probs(endpoints, p)),
    )
}

fn solve_beta(levels: &[PhLevel], k: usize) -> Option<Vec<f64>> {
    let rows: Vec<(&[f64], f64)> = levels
        .iter()
        .filter_map(|l| match l.omega_hat[k] {
            Some(w) if w.is_finite() => Some((l.level.values(), w)),
            _ => None,
        })
        .collect();
    let d = rows.first()?.0.len();
    if rows.len() != d + 1 {
        return None;
    }
    let mut a: Vec<Vec<f64>> = rows
        .iter()
        .map(|(z, w)| {
            let mut row = Vec::with_capacity(d + 2);
            row.push(1.0);
            row.extend_from_slice(z);
            row.push(*w);
            row
        })
        .collect();
    let x = gauss_solve(&mut a)?;
    Some(x[1..].to_vec())
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn gauss_solve(a: &mut [Vec<f64>]) -> Option<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        let pivot_row = a[col].clone();
        for row in a.iter_mut().skip(col + 1) {
            let f = row[col] / pivot_row[col];
            for (x, p) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * p;
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (a[row][n] - s) / a[row][row];
    }
    Some(x)
}

/// `log(1 − e^{−x})` for `x > 0`.
fn log1mexp(x: f64) -> f64 {
    (-(-x).exp_m1()).ln()
}

/// Conditional log-likelihood of the proportional-hazards model.
///
/// `beta[k]` is the coefficient vector of interval `k`; `delta[k]` is the
/// baseline cumulative hazard gained over interval `k`, spread linearly
/// across the interval so that a covariate sub-interval `I'_j ⊂ I_k` gets
/// `Δ_j` in proportion to its length. For each record and interval,
///
/// `log p_k = Σ_j e^{β_k'Z_j} [−Σ_{j'<j} Δ_{j'} + log(1 − exp(−e^{β_k'Z_j} Δ_j))]`
///
/// and the record contributes `δ log p_k + (1 − δ) log(1 − p_k)`.
pub fn ph_loglik(data: &Dataset, class: &ClassId, beta: &[Vec<f64>], delta: &[f64]) -> Result<f64> {
    let part = data.partition(class)?;
    let k = part.k();
    if delta.len() != k {
        return Err(Error::CoefficientShape(format!(
            "expected {k} hazard increments, got {}",
            delta.len()
        )));
    }
    if delta.iter().any(|&d| !d.is_finite() || d <= 0.0) {
        return Err(Error::NonpositiveDelta);
    }
    if beta.len() != k {
        return Err(Error::CoefficientShape(format!(
            "expected {k} coefficient vectors, got {}",
            beta.len()
        )));
    }
    let dim = beta[0].len();
    if beta.iter().any(|b| b.len() != dim) {
        return Err(Error::CoefficientShape("coefficient vectors differ in length".into()));
    }
    if let Some(d) = data.covariate_dim() {
        if d != dim && dim != 0 {
            return Err(Error::CovariateDimension { expected: d, found: dim });
        }
    }

    let mut cum_before = Vec::with_capacity(k);
    let mut acc = 0.0;
    for &d in delta {
        cum_before.push(acc);
        acc += d;
    }

    let mut ll = 0.0;
    for r in data.class_records(class)? {
        for kk in 0..k {
            let (lo, hi) = part.interval(kk);
            let len = hi - lo;
            let log_p = match (&r.covariates, dim) {
                (_, 0) => -cum_before[kk] + log1mexp(delta[kk]),
                (None, _) => return Err(Error::NoCovariates),
                (Some(path), _) => path
                    .pieces_within(lo, hi)
                    .into_iter()
                    .map(|(a, b, z)| {
                        let w = beta[kk].iter().zip(z).map(|(b, z)| b * z).sum::<f64>().exp();
                        let before = cum_before[kk] + delta[kk] * (a - lo) / len;
                        let piece = delta[kk] * (b - a) / len;
                        w * (-before + log1mexp(w * piece))
                    })
                    .sum(),
            };
            ll += if r.deltas[kk] { log_p } else { log1mexp(-log_p) };
        }
    }
    Ok(ll)
}
