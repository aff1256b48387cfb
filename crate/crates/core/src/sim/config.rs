use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ClassId;

/// Piece-wise linear baseline cumulative hazard through `(times[i], values[i])`,
/// extended beyond the last knot with the slope of the last segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearHazard {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseLinearHazard {
    /// Baseline whose knots sit on `endpoints` and whose first-presence law
    /// puts mass `p0[k]` on interval `k` when the covariate effect is zero.
    pub fn from_interval_probs(endpoints: &[f64], p0: &[f64]) -> Result<Self> {
        if endpoints.len() != p0.len() + 1 {
            return Err(Error::InfeasibleParams("need one probability per interval".into()));
        }
        let mut values = vec![0.0];
        let mut mass = 0.0;
        for &p in p0 {
            mass += p;
            if !(0.0..=1.0).contains(&p) || mass >= 1.0 {
                return Err(Error::InfeasibleParams(
                    "interval probabilities must be in [0, 1] with total below one".into(),
                ));
            }
            values.push(-(1.0 - mass).ln());
        }
        Ok(PiecewiseLinearHazard {
            times: endpoints.to_vec(),
            values,
        })
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let ok = self.times.len() >= 2
            && self.times.len() == self.values.len()
            && self.times.windows(2).all(|w| w[0] < w[1])
            && self.values.windows(2).all(|w| w[0] <= w[1])
            && self.values.iter().chain(&self.times).all(|x| x.is_finite())
            && self.values[0] >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InfeasibleParams(
                "baseline hazard needs at least two knots with increasing times and nondecreasing finite values".into(),
            ))
        }
    }

    /// `Λ₀(t)`; zero before the first knot.
    pub fn eval(&self, t: f64) -> f64 {
        let (ts, vs) = (&self.times, &self.values);
        if t <= ts[0] {
            return vs[0];
        }
        let i = ts.partition_point(|&x| x < t).min(ts.len() - 1).max(1);
        let slope = (vs[i] - vs[i - 1]) / (ts[i] - ts[i - 1]);
        vs[i - 1] + slope * (t - ts[i - 1])
    }
}

/// One detection stratum of the multinomial or Bernoulli generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub weight: f64,
    pub p0: Vec<f64>,
    /// Time-constant covariate value carried by members of the stratum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
}

/// Detection law for a single class: either one `p0` vector or a mixture of
/// strata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DetectionLaw {
    Homogeneous { p0: Vec<f64> },
    Stratified { strata: Vec<Stratum> },
}

impl DetectionLaw {
    pub fn strata(&self) -> Vec<Stratum> {
        match self {
            DetectionLaw::Homogeneous { p0 } => vec![Stratum {
                weight: 1.0,
                p0: p0.clone(),
                z: None,
            }],
            DetectionLaw::Stratified { strata } => strata.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "model")]
pub enum CovariateModel {
    /// Finite set of covariate vectors drawn with the given weights, once per
    /// individual or afresh on every interval.
    Levels {
        levels: Vec<Vec<f64>>,
        weights: Vec<f64>,
        #[serde(default)]
        time_varying: bool,
    },
    /// Scalar covariate, uniform on `[lo, hi]`, constant over time.
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// First-presence time: at most one detection per individual.
    #[default]
    Multinomial,
    /// Independent detection on every interval.
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum Generator {
    MultinomialFirstPresence {
        #[serde(flatten)]
        law: DetectionLaw,
    },
    BernoulliPerInterval {
        #[serde(flatten)]
        law: DetectionLaw,
    },
    /// First presence under the intensity `λ₀(t) exp(β_k' Z(t))` on interval `k`.
    PhCovariate {
        baseline: PiecewiseLinearHazard,
        /// One coefficient vector per interval.
        beta: Vec<Vec<f64>>,
        covariate: CovariateModel,
    },
    /// Destination and origin drawn jointly from `q0[to][from]`, then detection
    /// with probabilities `p0_cond[to][from]`.
    MarkovTransition {
        classes: Vec<ClassId>,
        q0: Vec<Vec<f64>>,
        p0_cond: Vec<Vec<Vec<f64>>>,
        #[serde(default)]
        regime: Regime,
    },
    /// Marginal detection `p0[k]` with `P(δ_{k+1} = 1 | δ_k = 1) = pi0[k]`,
    /// chained as a first-order Markov sequence.
    DependentConsecutive { p0: Vec<f64>, pi0: Vec<f64> },
}

fn default_class() -> ClassId {
    ClassId::from("A")
}

fn default_replicates() -> usize {
    200
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub generator: Generator,
    pub endpoints: Vec<f64>,
    /// Population size per replicate.
    pub nu: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub includes_undetected: bool,
    /// Class of single-class generators.
    #[serde(default = "default_class")]
    pub class_id: ClassId,
}

impl SimConfig {
    pub fn new(generator: Generator, endpoints: Vec<f64>, nu: usize, seed: u64) -> Self {
        SimConfig {
            generator,
            endpoints,
            nu,
            replicates: default_replicates(),
            seed,
            includes_undetected: true,
            class_id: default_class(),
        }
    }

    pub fn k(&self) -> usize {
        self.endpoints.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleParams(m));
        let k = self.k();
        if k == 0 || !self.endpoints.windows(2).all(|w| w[0] < w[1]) || self.endpoints.iter().any(|x| !x.is_finite()) {
            return bad("endpoints must be finite and strictly increasing".into());
        }
        let probs = |p: &[f64], what: &str| -> Result<()> {
            if p.len() != k {
                return bad(format!("{what} has {} entries for {k} intervals", p.len()));
            }
            if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return bad(format!("{what} has entries outside [0, 1]"));
            }
            Ok(())
        };
        let weights = |w: &[f64], what: &str| -> Result<()> {
            if w.is_empty() || w.iter().any(|x| x.is_nan() || *x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad(format!("{what} must be nonnegative and sum to one"));
            }
            Ok(())
        };
        let multinomial = |p: &[f64]| -> Result<()> {
            if p.iter().sum::<f64>() > 1.0 + 1e-12 {
                return bad("multinomial probabilities sum above one".into());
            }
            Ok(())
        };
        match &self.generator {
            Generator::MultinomialFirstPresence { law } | Generator::BernoulliPerInterval { law } => {
                let strata = law.strata();
                weights(&strata.iter().map(|s| s.weight).collect::<Vec<_>>(), "stratum weights")?;
                let dim = strata[0].z.as_ref().map(Vec::len);
                for s in &strata {
                    probs(&s.p0, "p0")?;
                    if matches!(self.generator, Generator::MultinomialFirstPresence { .. }) {
                        multinomial(&s.p0)?;
                    }
                    if s.z.as_ref().map(Vec::len) != dim {
                        return bad("strata must all carry covariates of the same dimension or none".into());
                    }
                }
            }
            Generator::PhCovariate {
                baseline,
                beta,
                covariate,
            } => {
                baseline.validate()?;
                let dim = match covariate {
                    CovariateModel::Levels { levels, weights: w, .. } => {
                        weights(w, "level weights")?;
                        if levels.len() != w.len() || levels.is_empty() {
                            return bad("one weight per covariate level is required".into());
                        }
                        let d = levels[0].len();
                        if levels.iter().any(|l| l.len() != d || l.iter().any(|x| !x.is_finite())) {
                            return bad("covariate levels must be finite with a common dimension".into());
                        }
                        d
                    }
                    CovariateModel::Uniform { lo, hi } => {
                        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                            return bad("uniform covariate needs finite lo < hi".into());
                        }
                        1
                    }
                };
                if beta.len() != k || beta.iter().any(|b| b.len() != dim || b.iter().any(|x| !x.is_finite())) {
                    return bad(format!("beta needs {k} finite vectors of dimension {dim}"));
                }
            }
            Generator::MarkovTransition {
                classes,
                q0,
                p0_cond,
                regime,
            } => {
                let l = classes.len();
                if l == 0 || q0.len() != l || q0.iter().any(|r| r.len() != l) {
                    return bad(format!("q0 must be a {l}×{l} matrix"));
                }
                weights(&q0.concat(), "q0")?;
                if p0_cond.len() != l || p0_cond.iter().any(|r| r.len() != l) {
                    return bad(format!("p0_cond must be indexed [to][from] over {l} classes"));
                }
                for p in p0_cond.iter().flatten() {
                    probs(p, "p0_cond")?;
                    if *regime == Regime::Multinomial {
                        multinomial(p)?;
                    }
                }
            }
            Generator::DependentConsecutive { p0, pi0 } => {
                probs(p0, "p0")?;
                if pi0.len() + 1 != k || pi0.iter().any(|x| !(0.0..=1.0).contains(x)) {
                    return bad(format!("pi0 needs {} entries in [0, 1]", k.saturating_sub(1)));
                }
                for c in 0..k - 1 {
                    if conditional_after_miss(p0[c], p0[c + 1], pi0[c]).is_none() {
                        return bad(format!("p0 and pi0 are jointly infeasible at interval {}", c + 1));
                    }
                }
            }
        }
        Ok(())
    }

    /// Marginal per-interval detection probabilities implied by the
    /// configuration, when available in closed form.
    pub fn true_interval_probs(&self) -> Option<Vec<f64>> {
        match &self.generator {
            Generator::MultinomialFirstPresence { law } | Generator::BernoulliPerInterval { law } => {
                let mut p = vec![0.0; self.k()];
                for s in law.strata() {
                    for (acc, q) in p.iter_mut().zip(&s.p0) {
                        *acc += s.weight * q;
                    }
                }
                Some(p)
            }
            Generator::DependentConsecutive { p0, .. } => Some(p0.clone()),
            Generator::PhCovariate { baseline, beta, covariate } => match covariate {
                CovariateModel::Levels {
                    levels,
                    weights,
                    time_varying: false,
                } => {
                    let mut p = vec![0.0; self.k()];
                    for (z, w) in levels.iter().zip(weights) {
                        for (acc, q) in p.iter_mut().zip(ph_interval_probs(baseline, beta, &self.endpoints, z)) {
                            *acc += w * q;
                        }
                    }
                    Some(p)
                }
                _ => None,
            },
            Generator::MarkovTransition { .. } => None,
        }
    }
}

/// `P(δ_{k+1} = 1 | δ_k = 0)` implied by marginals `a = p_k`, `b = p_{k+1}` and
/// `π = P(δ_{k+1} = 1 | δ_k = 1)`; `None` when infeasible.
pub(crate) fn conditional_after_miss(a: f64, b: f64, pi: f64) -> Option<f64> {
    if a >= 1.0 {
        // every individual is detected on k, so π must equal b
        return ((pi - b).abs() <= 1e-12).then_some(0.0);
    }
    let q = (b - pi * a) / (1.0 - a);
    (-1e-12..=1.0 + 1e-12).contains(&q).then(|| q.clamp(0.0, 1.0))
}

/// Per-interval first-presence probabilities for a time-constant covariate `z`:
/// `S(τ_{k−1}|z) − S(τ_k|z)` with `S(τ_k|z) = exp(−Σ_{j≤k} ΔΛ₀_j e^{β_j'z})`.
pub fn ph_interval_probs(baseline: &PiecewiseLinearHazard, beta: &[Vec<f64>], endpoints: &[f64], z: &[f64]) -> Vec<f64> {
    let mut cum = 0.0;
    let mut s_prev = 1.0;
    (0..endpoints.len() - 1)
        .map(|k| {
            let w = beta[k].iter().zip(z).map(|(b, z)| b * z).sum::<f64>().exp();
            cum += w * (baseline.eval(endpoints[k + 1]) - baseline.eval(endpoints[k]));
            let s = (-cum).exp();
            let p = s_prev - s;
            s_prev = s;
            p
        })
        .collect()
}
