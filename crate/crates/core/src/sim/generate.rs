use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{conditional_after_miss, CovariateModel, Generator, PiecewiseLinearHazard, Regime, SimConfig, Stratum};
use crate::error::Result;
use crate::model::{ClassId, CovariatePath, Dataset, DetectionRecord, IntervalPartition};
use crate::parallel::stream_rng;

/// Generator for replicate `r` of a run seeded with `master`.
pub fn replicate_rng(master: u64, r: u64) -> ChaCha8Rng {
    stream_rng(master, r)
}

/// Dataset for replicate 0 of `cfg`.
pub fn generate(cfg: &SimConfig) -> Result<Dataset> {
    generate_with_rng(cfg, &mut replicate_rng(cfg.seed, 0))
}

/// Draws one population of `cfg.nu` individuals from `rng`. Individuals are
/// numbered `0..nu` in draw order; in detected-only mode undetected ones are
/// dropped afterwards, so ids keep their population index.
pub fn generate_with_rng<R: Rng>(cfg: &SimConfig, rng: &mut R) -> Result<Dataset> {
    cfg.validate()?;
    let k = cfg.k();
    let ends = &cfg.endpoints;
    let mut records = Vec::with_capacity(cfg.nu);
    let mut classes = vec![cfg.class_id.clone()];

    match &cfg.generator {
        Generator::MultinomialFirstPresence { law } | Generator::BernoulliPerInterval { law } => {
            let multinomial = matches!(cfg.generator, Generator::MultinomialFirstPresence { .. });
            let strata = law.strata();
            let w: Vec<f64> = strata.iter().map(|s| s.weight).collect();
            for i in 0..cfg.nu {
                let s: &Stratum = &strata[categorical(rng, &w)];
                let deltas = if multinomial {
                    first_presence(rng, &s.p0)
                } else {
                    bernoulli(rng, &s.p0)
                };
                let mut rec = DetectionRecord::new(i.to_string(), cfg.class_id.clone(), deltas);
                if let Some(z) = &s.z {
                    rec = rec.with_covariates(CovariatePath::constant(ends[0], ends[k], z.clone())?);
                }
                records.push(rec);
            }
        }
        Generator::PhCovariate {
            baseline,
            beta,
            covariate,
        } => {
            for i in 0..cfg.nu {
                let per_interval = draw_covariates(rng, covariate, k);
                let path = CovariatePath::from_interval_levels(ends, per_interval.clone())?;
                let t = ph_first_presence(rng, baseline, beta, ends, &per_interval);
                let deltas = (0..k).map(|c| t.is_some_and(|t| t > ends[c] && t <= ends[c + 1])).collect();
                records.push(DetectionRecord::new(i.to_string(), cfg.class_id.clone(), deltas).with_covariates(path));
            }
        }
        Generator::MarkovTransition {
            classes: ids,
            q0,
            p0_cond,
            regime,
        } => {
            classes = ids.clone();
            let l = ids.len();
            let flat = q0.concat();
            for i in 0..cfg.nu {
                let cell = categorical(rng, &flat);
                let (to, from) = (cell / l, cell % l);
                let p = &p0_cond[to][from];
                let deltas = match regime {
                    Regime::Multinomial => first_presence(rng, p),
                    Regime::Bernoulli => bernoulli(rng, p),
                };
                records.push(
                    DetectionRecord::new(i.to_string(), ids[to].clone(), deltas).with_transition(ids[from].clone(), ids[to].clone()),
                );
            }
        }
        Generator::DependentConsecutive { p0, pi0 } => {
            for i in 0..cfg.nu {
                let mut deltas = Vec::with_capacity(k);
                deltas.push(rng.random::<f64>() < p0[0]);
                for c in 1..k {
                    let p = if deltas[c - 1] {
                        pi0[c - 1]
                    } else {
                        conditional_after_miss(p0[c - 1], p0[c], pi0[c - 1]).unwrap_or(0.0)
                    };
                    deltas.push(rng.random::<f64>() < p);
                }
                records.push(DetectionRecord::new(i.to_string(), cfg.class_id.clone(), deltas));
            }
        }
    }

    if !cfg.includes_undetected {
        records.retain(|r| r.detections() > 0);
    }
    let partitions = classes
        .into_iter()
        .map(|c: ClassId| IntervalPartition::new(c, ends.clone()))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(partitions, records, cfg.includes_undetected)
}

/// Index drawn with probabilities `w` (summing to one).
fn categorical<R: Rng>(rng: &mut R, w: &[f64]) -> usize {
    if w.len() == 1 {
        return 0;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &x) in w.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    // round-off: fall back to the last category with positive weight
    w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

fn first_presence<R: Rng>(rng: &mut R, p: &[f64]) -> Vec<bool> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut hit = None;
    for (c, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            hit = Some(c);
            break;
        }
    }
    (0..p.len()).map(|c| hit == Some(c)).collect()
}

fn bernoulli<R: Rng>(rng: &mut R, p: &[f64]) -> Vec<bool> {
    p.iter().map(|&x| rng.random::<f64>() < x).collect()
}

fn draw_covariates<R: Rng>(rng: &mut R, model: &CovariateModel, k: usize) -> Vec<Vec<f64>> {
    match model {
        CovariateModel::Levels {
            levels,
            weights,
            time_varying,
        } => {
            if *time_varying {
                (0..k).map(|_| levels[categorical(rng, weights)].clone()).collect()
            } else {
                vec![levels[categorical(rng, weights)].clone(); k]
            }
        }
        CovariateModel::Uniform { lo, hi } => vec![vec![rng.random_range(*lo..*hi)]; k],
    }
}

/// First-presence time under `λ₀(t) e^{β_k' z_k}` on interval `k`, by exact
/// inversion of the cumulative intensity against a unit exponential draw.
/// `None` when the individual is not present by the last end point.
fn ph_first_presence<R: Rng>(
    rng: &mut R,
    baseline: &PiecewiseLinearHazard,
    beta: &[Vec<f64>],
    ends: &[f64],
    z: &[Vec<f64>],
) -> Option<f64> {
    let target = -(1.0 - rng.random::<f64>()).ln();
    let mut acc = 0.0;
    for c in 0..ends.len() - 1 {
        let w = beta[c].iter().zip(&z[c]).map(|(b, z)| b * z).sum::<f64>().exp();
        // knots inside the interval split it into linear pieces
        let mut cuts = vec![ends[c]];
        cuts.extend(baseline.times.iter().copied().filter(|&t| t > ends[c] && t < ends[c + 1]));
        cuts.push(ends[c + 1]);
        for seg in cuts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let (ha, hb) = (baseline.eval(a), baseline.eval(b));
            let gain = w * (hb - ha);
            if acc + gain >= target && gain > 0.0 {
                let t = a + (b - a) * (target - acc) / gain;
                // keep the draw inside its interval despite round-off
                return Some(t.clamp(f64::from_bits(a.to_bits() + 1), b));
            }
            acc += gain;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::estimate_interval_probs;
    use crate::sim::config::DetectionLaw;

    fn multinomial(p0: Vec<f64>, nu: usize) -> SimConfig {
        SimConfig::new(
            Generator::MultinomialFirstPresence {
                law: DetectionLaw::Homogeneous { p0 },
            },
            vec![0.0, 1.0, 2.0],
            nu,
            11,
        )
    }

    #[test]
    fn same_seed_same_dataset() {
        let cfg = multinomial(vec![0.3, 0.2], 500);
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    }

    #[test]
    fn zero_probabilities() {
        let cfg = multinomial(vec![0.0, 0.0], 50);
        let data = generate(&cfg).unwrap();
        assert_eq!(data.records().len(), 50);
        assert!(data.records().iter().all(|r| r.detections() == 0));
        let cfg = SimConfig {
            includes_undetected: false,
            ..cfg
        };
        assert!(generate(&cfg).unwrap().records().is_empty());
    }

    #[test]
    fn multinomial_marginals_within_binomial_band() {
        let nu = 200_000;
        let cfg = multinomial(vec![0.3, 0.2], nu);
        let est = estimate_interval_probs(&generate(&cfg).unwrap(), &"A".into()).unwrap();
        for (p, p0) in est.p_hat.iter().zip([0.3, 0.2]) {
            let se = (p0 * (1.0 - p0) / nu as f64).sqrt();
            assert!((p - p0).abs() < 4.0 * se, "{p} vs {p0}");
        }
        assert!(generate(&cfg).unwrap().records().iter().all(|r| r.detections() <= 1));
    }

    #[test]
    fn ph_first_presence_lands_in_the_right_interval() {
        let ends = [0.0, 1.0, 2.5, 3.0];
        let h = PiecewiseLinearHazard {
            times: vec![0.0, 0.5, 3.0],
            values: vec![0.0, 0.2, 1.0],
        };
        let beta = vec![vec![0.3], vec![-0.2], vec![0.0]];
        let z = vec![vec![1.0], vec![2.0], vec![0.5]];
        let mut rng = replicate_rng(3, 0);
        for _ in 0..1000 {
            if let Some(t) = ph_first_presence(&mut rng, &h, &beta, &ends, &z) {
                assert!(t > 0.0 && t <= 3.0);
            }
        }
    }
}
