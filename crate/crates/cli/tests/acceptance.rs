//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. All randomness derives from seed 42.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;

use cstatus::covariate::{kernel_grid, ph_decomposition, KernelConfig};
use cstatus::dependence::{consecutive_statistic_forms, markov_independence_test, Scaling};
use cstatus::io::{load_dataset, Format};
use cstatus::parallel::stream_rng;
use cstatus::sim::{
    calibrate_df, generate, generate_with_rng, ph_interval_probs, replicate_rng, run_monte_carlo, size_experiment,
    CalibrationTest, CovariateModel, DetectionLaw, Generator, PiecewiseLinearHazard, Regime, SimConfig, Stratum, Target,
};
use cstatus::size::SizeMethod;
use cstatus::{
    asymptotic_variances, cumulative_hazard, estimate_interval_probs, survival_curve, ClassId, Dataset,
    DetectionRecord, Execution, IntervalPartition,
};

const SEED: u64 = 42;
const DATASETS: u64 = 1_000;

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = fn() -> Outcome;

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn ends(k: usize) -> Vec<f64> {
    (0..=k).map(|i| i as f64).collect()
}

fn multinomial(p0: Vec<f64>, nu: usize, replicates: usize) -> SimConfig {
    let k = p0.len();
    let mut cfg = SimConfig::new(
        Generator::MultinomialFirstPresence {
            law: DetectionLaw::Homogeneous { p0 },
        },
        ends(k),
        nu,
        SEED,
    );
    cfg.replicates = replicates;
    cfg
}

fn consistency() -> Outcome {
    let p0 = [0.3, 0.2, 0.1];
    let cfg = multinomial(p0.to_vec(), 20_000, 200);
    let start = Instant::now();
    let rep = run_monte_carlo(&cfg, Target::IntervalProbs, None, Execution::Parallel).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = rep.summary.mean.iter().zip(p0).map(|(m, p)| (m - p).abs()).fold(0.0, f64::max);
    outcome(
        worst < 0.01 && secs < 30.0 && rep.summary.failures == 0,
        format!("max |mean(p_hat) - p0| = {worst:.2e} (< 1e-2), runtime {secs:.2} s (< 30 s)"),
    )
}

fn gaussian_variance() -> Outcome {
    let p0 = [0.3, 0.2, 0.1];
    let n = 20_000f64;
    let cfg = multinomial(p0.to_vec(), 20_000, 200);
    let probs = run_monte_carlo(&cfg, Target::IntervalProbs, None, Execution::Parallel).unwrap();
    let hazard = run_monte_carlo(&cfg, Target::CumulativeHazard, None, Execution::Parallel).unwrap();
    let p_ratio: Vec<f64> = probs
        .summary
        .empirical_sd
        .iter()
        .zip(p0)
        .map(|(sd, p)| sd * n.sqrt() / (p * (1.0 - p)).sqrt())
        .collect();
    let formula = hazard.summary.formula_sd.as_ref().unwrap();
    let l_ratio: Vec<f64> = hazard.summary.empirical_sd.iter().zip(formula).map(|(e, f)| e / f).collect();
    // Delta-method variance of -ln(1 - F_k), shown for diagnosis only.
    let mut cum = 0.0;
    let delta_ratio: Vec<f64> = hazard
        .summary
        .empirical_sd
        .iter()
        .zip(p0)
        .map(|(e, p)| {
            cum += p;
            e * n.sqrt() / (cum / (1.0 - cum)).sqrt()
        })
        .collect();
    let p_ok = p_ratio.iter().all(|r| (r - 1.0).abs() <= 0.05);
    let l_ok = l_ratio.iter().all(|r| (r - 1.0).abs() <= 0.10);
    let fmt = |v: &[f64]| v.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(", ");
    outcome(
        p_ok && l_ok,
        format!(
            "sd ratio p_hat [{}] (within 5%: {p_ok}); sd ratio Lambda_hat [{}] (within 10%: {l_ok}); \
             Lambda_hat vs F/(1-F) delta method [{}] (diagnostic)",
            fmt(&p_ratio),
            fmt(&l_ratio),
            fmt(&delta_ratio)
        ),
    )
}

/// Random first-presence dataset: each individual is detected on at most one
/// interval; some datasets detect everyone.
fn random_first_presence(stream: u64) -> Dataset {
    let mut rng = stream_rng(SEED, stream);
    let k = rng.random_range(1..=6);
    let n = rng.random_range(1..=60);
    let mut w: Vec<f64> = (0..=k).map(|_| rng.random::<f64>()).collect();
    if rng.random_bool(0.2) {
        w[k] = 0.0;
    }
    let total: f64 = w.iter().sum();
    let records = (0..n)
        .map(|i| {
            let mut u = rng.random::<f64>() * total;
            let mut hit = k;
            for (j, wj) in w.iter().enumerate() {
                if u < *wj {
                    hit = j;
                    break;
                }
                u -= wj;
            }
            DetectionRecord::new(i.to_string(), "A", (0..k).map(|j| j == hit).collect())
        })
        .collect();
    Dataset::new([IntervalPartition::unit("A", k).unwrap()], records, true).unwrap()
}

fn transform_identity() -> Outcome {
    let class = ClassId::from("A");
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut monotone = true;
    for s in 0..DATASETS {
        let data = random_first_presence(s);
        let est = estimate_interval_probs(&data, &class).unwrap();
        let surv = survival_curve(&est).unwrap();
        let haz = cumulative_hazard(&est);
        monotone &= surv.values.windows(2).all(|w| w[1] <= w[0]);
        for (k, l) in haz.values.iter().enumerate() {
            if l.is_finite() {
                worst = worst.max(((-l).exp() - surv.values[k + 1]).abs());
                checked += 1;
            }
        }
    }
    outcome(
        worst <= 1e-12 && monotone,
        format!("max |exp(-Lambda_hat) - S_hat| = {worst:.2e} over {checked} finite points (<= 1e-12); S_hat non-increasing: {monotone}"),
    )
}

fn random_bernoulli(stream: u64) -> Dataset {
    let mut rng = stream_rng(SEED, stream);
    let k = rng.random_range(2..=7);
    let n = rng.random_range(2..=300);
    let p: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
    let records = (0..n)
        .map(|i| DetectionRecord::new(i.to_string(), "A", p.iter().map(|&pk| rng.random_bool(pk)).collect()))
        .collect();
    Dataset::new([IntervalPartition::unit("A", k).unwrap()], records, true).unwrap()
}

fn dual_form_identity() -> Outcome {
    let class = ClassId::from("A");
    let mut worst = 0.0f64;
    for s in 0..DATASETS {
        let data = random_bernoulli(s);
        let (prob, count) = consecutive_statistic_forms(&data, &class).unwrap();
        worst = worst.max((prob - count).abs() / prob.abs().max(1.0));
    }
    outcome(
        worst <= 1e-12,
        format!("max |probability form - count form| / max(1, |stat|) = {worst:.2e} over {DATASETS} datasets (<= 1e-12)"),
    )
}

/// Textbook Pearson statistic on the origin-by-interval table of detections.
fn pearson(table: &[Vec<f64>]) -> f64 {
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..table[0].len()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let total: f64 = rows.iter().sum();
    let mut chi2 = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, o) in r.iter().enumerate() {
            let e = rows[i] * cols[j] / total;
            if e > 0.0 {
                chi2 += (o - e).powi(2) / e;
            }
        }
    }
    chi2
}

fn pearson_equivalence() -> Outcome {
    let class = ClassId::from("A");
    let origins = ["A", "B", "C", "D"];
    let mut worst = 0.0f64;
    let mut evaluated = 0;
    for s in 0..DATASETS {
        let mut rng = stream_rng(SEED, 10_000 + s);
        let k = rng.random_range(2..=6);
        let l = rng.random_range(2..=4);
        let n = rng.random_range(10..=400);
        let mut table = vec![vec![0.0; k]; l];
        let records: Vec<DetectionRecord> = (0..n)
            .map(|i| {
                let from = rng.random_range(0..l);
                let hit = rng.random_range(0..k);
                table[from][hit] += 1.0;
                DetectionRecord::new(i.to_string(), "A", (0..k).map(|j| j == hit).collect()).with_transition(origins[from], "A")
            })
            .collect();
        let data = Dataset::new([IntervalPartition::unit("A", k).unwrap()], records, false).unwrap();
        table.retain(|r| r.iter().sum::<f64>() > 0.0);
        if table.len() < 2 {
            continue;
        }
        let test = markov_independence_test(&data, &class, Scaling::SampleScaled).unwrap();
        let reference = pearson(&table);
        worst = worst.max((test.statistic - reference).abs() / reference.abs().max(1.0));
        evaluated += 1;
    }
    outcome(
        worst <= 1e-10 && evaluated >= 900,
        format!("max |X - Pearson| / max(1, Pearson) = {worst:.2e} over {evaluated} datasets (<= 1e-10)"),
    )
}

fn consecutive_null(seed: u64) -> SimConfig {
    let p0 = vec![0.3, 0.4, 0.35, 0.5, 0.45, 0.4];
    let pi0 = p0[1..].to_vec();
    let mut cfg = SimConfig::new(Generator::DependentConsecutive { p0, pi0 }, ends(6), 5_000, seed);
    cfg.replicates = 2_000;
    cfg
}

fn markov_null(seed: u64) -> SimConfig {
    let classes: Vec<ClassId> = ["A", "B", "C"].into_iter().map(ClassId::from).collect();
    let per_dest = [
        vec![0.1, 0.15, 0.2, 0.15, 0.1, 0.1],
        vec![0.2, 0.2, 0.1, 0.1, 0.1, 0.1],
        vec![0.05, 0.1, 0.15, 0.2, 0.2, 0.1],
    ];
    let p0_cond = per_dest.iter().map(|p| vec![p.clone(); 3]).collect();
    let q0 = vec![vec![0.2, 0.1, 0.05], vec![0.1, 0.2, 0.05], vec![0.1, 0.1, 0.1]];
    let mut cfg = SimConfig::new(
        Generator::MarkovTransition {
            classes,
            q0,
            p0_cond,
            regime: Regime::Multinomial,
        },
        ends(6),
        5_000,
        seed,
    );
    cfg.includes_undetected = false;
    cfg.replicates = 2_000;
    cfg
}

fn chi2_calibration() -> Outcome {
    let z = calibrate_df(&consecutive_null(SEED), CalibrationTest::Z, None, Execution::Parallel).unwrap();
    let z_again = calibrate_df(&consecutive_null(SEED), CalibrationTest::Z, None, Execution::Parallel).unwrap();
    let x = calibrate_df(&markov_null(SEED), CalibrationTest::X, None, Execution::Parallel).unwrap();
    let x_again = calibrate_df(&markov_null(SEED), CalibrationTest::X, None, Execution::Parallel).unwrap();
    let x_other = calibrate_df(&markov_null(SEED + 1), CalibrationTest::X, None, Execution::Parallel).unwrap();
    let deterministic = z == z_again && x == x_again;
    let reproducible = x.best_fit_df.abs_diff(x_other.best_fit_df) <= 1;
    outcome(
        deterministic && reproducible,
        format!(
            "Z: mean {:.3}, stated df {} (KS {:.3}), best df {} (KS {:.3}); X: mean {:.3}, stated df {} (KS {:.3}), best df {} / {} across seeds (KS {:.3}); deterministic: {deterministic}",
            z.mean, z.stated_df, z.ks_stated_df, z.best_fit_df, z.ks_best_fit, x.mean, x.stated_df, x.ks_stated_df,
            x.best_fit_df, x_other.best_fit_df, x.ks_best_fit
        ),
    )
}

fn population_size() -> Outcome {
    let cfg = multinomial(vec![0.3, 0.2, 0.1], 5_000, 100);
    let rep = size_experiment(&cfg, SizeMethod::Plain, 100, Execution::Parallel).unwrap();
    let se_ok = (rep.se_ratio - 1.0).abs() <= 0.25;
    outcome(
        rep.mean_relative_error < 0.03 && se_ok && rep.failures == 0,
        format!(
            "mean relative error {:.4} (< 0.03); bootstrap SE {:.2} vs SD {:.2}, ratio {:.3} (within 25%)",
            rep.mean_relative_error, rep.mean_se_boot, rep.sd_nu_hat, rep.se_ratio
        ),
    )
}

fn kernel_rate() -> Outcome {
    let endpoints = ends(3);
    let baseline = PiecewiseLinearHazard::from_interval_probs(&endpoints, &[0.2, 0.2, 0.2]).unwrap();
    let beta = vec![vec![0.8], vec![-0.5], vec![1.2]];
    let points: Vec<Vec<f64>> = [-0.8, -0.4, 0.0, 0.4, 0.8].iter().map(|&z| vec![z]).collect();
    let truth: Vec<Vec<f64>> = points.iter().map(|z| ph_interval_probs(&baseline, &beta, &endpoints, z)).collect();
    let class = ClassId::from("A");
    let rmse_at = |nu: usize| -> Vec<f64> {
        let cfg = SimConfig::new(
            Generator::PhCovariate {
                baseline: baseline.clone(),
                beta: beta.clone(),
                covariate: CovariateModel::Uniform { lo: -1.0, hi: 1.0 },
            },
            endpoints.clone(),
            nu,
            SEED,
        );
        let mut sq = vec![0.0; points.len()];
        let replicates = 50;
        for r in 0..replicates {
            let data = generate_with_rng(&cfg, &mut replicate_rng(SEED, r)).unwrap();
            let est = kernel_grid(&data, &class, &KernelConfig::default(), &points, Execution::Parallel);
            for (j, e) in est.into_iter().enumerate() {
                let e = e.unwrap();
                sq[j] += e.estimate.p_hat.iter().zip(&truth[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
        }
        sq.iter().map(|s| (s / (replicates as f64 * 3.0)).sqrt()).collect()
    };
    let small = rmse_at(1_000);
    let large = rmse_at(4_000);
    let decreasing = small.iter().zip(&large).all(|(a, b)| b < a);
    let fmt = |v: &[f64]| v.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>().join(", ");
    outcome(
        decreasing,
        format!("RMSE n=1000 [{}] -> n=4000 [{}]; strictly decreasing: {decreasing}", fmt(&small), fmt(&large)),
    )
}

fn ph_ratio() -> Outcome {
    let endpoints = ends(3);
    let two_levels = SimConfig::new(
        Generator::MultinomialFirstPresence {
            law: DetectionLaw::Stratified {
                strata: vec![
                    Stratum {
                        weight: 0.5,
                        p0: vec![0.2, 0.15, 0.1],
                        z: Some(vec![0.0]),
                    },
                    Stratum {
                        weight: 0.5,
                        p0: vec![0.4, 0.3, 0.2],
                        z: Some(vec![1.0]),
                    },
                ],
            },
        },
        endpoints.clone(),
        20_000,
        SEED,
    );
    // Level 1 detects at twice the rate of level 0, so 4/3 of the pooled rate.
    let designed = (4.0f64 / 3.0).ln();
    let class = ClassId::from("A");
    let dec = ph_decomposition(&generate(&two_levels).unwrap(), &class).unwrap();
    let level = dec.levels.iter().find(|l| l.level.values() == [1.0]).unwrap();
    let omega: Vec<f64> = level.omega_hat.iter().map(|w| w.unwrap()).collect();
    let worst = omega.iter().map(|w| (w - designed).abs()).fold(0.0, f64::max);

    let one_level = SimConfig::new(
        Generator::MultinomialFirstPresence {
            law: DetectionLaw::Stratified {
                strata: vec![Stratum {
                    weight: 1.0,
                    p0: vec![0.2, 0.15, 0.1],
                    z: Some(vec![0.0]),
                }],
            },
        },
        endpoints,
        20_000,
        SEED,
    );
    let single = ph_decomposition(&generate(&one_level).unwrap(), &class).unwrap();
    let zero = single.levels.len() == 1 && single.levels[0].omega_hat.iter().all(|w| *w == Some(0.0));
    outcome(
        worst < 0.05 && zero,
        format!("max |omega_hat - ln(4/3)| = {worst:.4} (< 0.05); single-level omega_hat exactly 0: {zero}"),
    )
}

fn cli(args: &[&str]) -> Vec<u8> {
    let o = Command::new(env!("CARGO_BIN_EXE_cstatus")).args(args).output().unwrap();
    assert!(o.status.success(), "cstatus {args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o.stdout
}

fn cli_round_trip() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = multinomial(vec![0.3, 0.2, 0.1], 2_000, 1);
    let cfg_path = dir.path().join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let class = ClassId::from("A");

    let memory = generate(&cfg).unwrap();
    let est = estimate_interval_probs(&memory, &class).unwrap();
    let surv = survival_curve(&est).unwrap();
    let haz = cumulative_hazard(&est);
    let var = asymptotic_variances(&est);

    let run = |dir: &Path, ext: &str| -> (Vec<u8>, Vec<u8>, bool) {
        let data = dir.join(format!("data.{ext}"));
        let (c, d) = (cfg_path.to_str().unwrap(), data.to_str().unwrap());
        cli(&["simulate", "--config", c, "--seed", &SEED.to_string(), "--data", d]);
        let loaded = load_dataset(&data, Format::from_path(&data), None).unwrap();
        let report = cli(&["estimate", "-i", d, "--json"]);
        let v: serde_json::Value = serde_json::from_slice(&report).unwrap();
        let c = &v["classes"][0];
        let floats = |x: &serde_json::Value| -> Vec<f64> { x.as_array().unwrap().iter().map(|f| f.as_f64().unwrap()).collect() };
        let exact = loaded == memory
            && floats(&c["estimate"]["p_hat"]) == est.p_hat
            && floats(&c["estimate"]["p_hat_var"]) == est.p_hat_var
            && floats(&c["survival"]["values"]) == surv.values
            && floats(&c["hazard"]["values"]) == haz.values
            && floats(&c["variances"]["lambda_var"]) == var.lambda_var;
        (std::fs::read(&data).unwrap(), report, exact)
    };
    let mut exact = true;
    let mut identical = true;
    for ext in ["csv", "jsonl"] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let (data_a, report_a, exact_a) = run(a.path(), ext);
        let (data_b, report_b, exact_b) = run(b.path(), ext);
        exact &= exact_a && exact_b;
        identical &= data_a == data_b && report_a == report_b;
    }
    outcome(
        exact && identical,
        format!("csv and jsonl: loaded data and CLI estimates equal in-memory values bit-exactly: {exact}; repeated runs byte-identical: {identical}"),
    )
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("consistency", consistency),
        ("gaussian-limit variance", gaussian_variance),
        ("survival/hazard transform identity", transform_identity),
        ("consecutive statistic dual forms", dual_form_identity),
        ("origin statistic equals Pearson", pearson_equivalence),
        ("chi-square calibration", chi2_calibration),
        ("population size", population_size),
        ("kernel estimator rate", kernel_rate),
        ("proportional-hazards decomposition", ph_ratio),
        ("CLI round trip", cli_round_trip),
    ];
    let mut results = BTreeMap::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        println!(
            "{} [{:>2}] {name}: {} ({:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
        results.insert(i + 1, o.pass);
    }
    let failed: Vec<_> = results.iter().filter(|(_, p)| !**p).map(|(i, _)| *i).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
