use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use cstatus::covariate::{
    combine_marginal_probs, empirical_level_weights, kernel_grid, ph_decomposition, ph_loglik,
    recover_covariate_distribution, stratified_estimates, Bandwidth, KernelConfig, KernelKind, Normalization,
};
use cstatus::dependence::{
    independence_test_consecutive, joint_estimates, markov_estimates, markov_independence_test, Scaling, TestResult,
};
use cstatus::io::{load_dataset, save_dataset, Format};
use cstatus::sim::{calibrate_df, generate, run_monte_carlo, CalibrationTest, SimConfig, Target};
use cstatus::size::{bootstrap_size_se, estimate_size_from_data, estimate_size_plain, SizeMethod, WindowNormalization};
use cstatus::{
    asymptotic_variances, cumulative_hazard, estimate_interval_probs, estimate_never_observed, survival_curve, ClassId,
    Dataset, Error, Execution, Result,
};

use crate::table::{num, nums, opt, pairs, Table};
use crate::{
    Command, FormatArg, InputArgs, KernelArg, NormalizationArg, ScalingArg, SimArgs, SizeMethodArg, TargetArg, TestArg,
    WindowArg,
};

pub struct Report {
    pub text: String,
    pub json: Value,
}

fn to_json<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report types serialize")
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn format_of(arg: Option<FormatArg>, path: &Path) -> Format {
    match arg {
        Some(FormatArg::Csv) => Format::Csv,
        Some(FormatArg::WideCsv) => Format::WideCsv,
        Some(FormatArg::Jsonl) => Format::Jsonl,
        None => Format::from_path(path),
    }
}

fn load(input: &InputArgs) -> Result<Dataset> {
    load_dataset(&input.input, format_of(input.format, &input.input), input.partitions.as_deref())
}

/// The requested class, or every class with at least one record.
fn classes(data: &Dataset, input: &InputArgs) -> Result<Vec<ClassId>> {
    match &input.class {
        Some(c) => {
            let id = ClassId::new(c);
            data.partition(&id)?;
            Ok(vec![id])
        }
        None => {
            let ids: Vec<ClassId> = data
                .class_ids()
                .filter(|c| data.class_records(c).is_ok_and(|r| !r.is_empty()))
                .cloned()
                .collect();
            if ids.is_empty() {
                return Err(Error::EmptyClass("(all)".into()));
            }
            Ok(ids)
        }
    }
}

fn parse_point(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| usage(format!("not a finite number: {x:?}")))
        })
        .collect()
}

fn scaling(s: ScalingArg) -> Scaling {
    match s {
        ScalingArg::SampleScaled => Scaling::SampleScaled,
        ScalingArg::Literal => Scaling::Literal,
    }
}

pub fn run(cmd: &Command) -> Result<Report> {
    match cmd {
        Command::Estimate { input, confidence } => estimate(input, *confidence),
        Command::EstimateCov {
            input,
            normalization,
            distribution_at,
        } => estimate_cov(input, *normalization, distribution_at.as_deref()),
        Command::Kernel {
            input,
            at,
            kernel,
            bandwidth,
            smoothness,
        } => kernel_cmd(input, at, *kernel, bandwidth, *smoothness),
        Command::Ph { input, beta, delta } => ph(input, beta.as_deref(), delta.as_deref()),
        Command::Size {
            input,
            calibration,
            p_hat,
            method,
            window,
            window_normalization,
            bootstrap,
            seed,
        } => size(input, calibration.as_deref(), p_hat, *method, *window, *window_normalization, *bootstrap, *seed),
        Command::TestIndep { input, scaling: s } => test_indep(input, scaling(*s)),
        Command::TestMarkov { input, scaling: s } => test_markov(input, scaling(*s)),
        Command::Simulate {
            config,
            seed,
            nu,
            data,
            format,
        } => simulate(config, *seed, *nu, data, *format),
        Command::MonteCarlo { sim, target } => monte_carlo(sim, *target),
        Command::CalibrateDf { sim, test } => calibrate(sim, *test),
    }
}

fn estimate(input: &InputArgs, confidence: f64) -> Result<Report> {
    let data = load(input)?;
    let mut text = String::new();
    let mut out = Vec::new();
    for class in classes(&data, input)? {
        let est = estimate_interval_probs(&data, &class)?;
        let ci = est.confidence_intervals(confidence)?;
        let surv = survival_curve(&est);
        let haz = cumulative_hazard(&est);
        let var = asymptotic_variances(&est);
        let never = estimate_never_observed(&data, &class).ok();

        let mut t = Table::new(
            format!("class {class} (n = {})", est.n_used),
            &["k", "tau_lower", "tau_upper", "p_hat", "se", "ci_lower", "ci_upper", "S_hat", "se_S", "Lambda_hat", "se_Lambda"],
        );
        for (k, (lo, hi)) in ci.iter().enumerate() {
            t.row(vec![
                (k + 1).to_string(),
                num(est.endpoints[k]),
                num(est.endpoints[k + 1]),
                num(est.p_hat[k]),
                num(est.p_hat_var[k].sqrt()),
                num(*lo),
                num(*hi),
                opt(surv.as_ref().ok().map(|s| s.values[k + 1])),
                num(var.s_var[k + 1].sqrt()),
                num(haz.values[k]),
                num(var.lambda_var[k].sqrt()),
            ]);
        }
        text.push_str(&t.render());
        let mut notes = Vec::new();
        if let Err(e) = &surv {
            notes.push(("survival", format!("unavailable: {e}")));
        }
        if let Some(k) = haz.exhausted_at {
            notes.push(("hazard", format!("infinite from interval {}", k + 1)));
        }
        if let Some(p) = never {
            notes.push(("never_observed", num(p)));
        }
        if !notes.is_empty() {
            text.push_str(&pairs("", &notes));
        }
        text.push('\n');
        out.push(json!({
            "class_id": class,
            "estimate": to_json(&est),
            "confidence_level": confidence,
            "confidence_intervals": ci,
            "survival": surv.as_ref().ok().map(to_json),
            "survival_error": surv.as_ref().err().map(|e| e.code()),
            "hazard": to_json(&haz),
            "variances": to_json(&var),
            "never_observed": never,
        }));
    }
    Ok(Report {
        text,
        json: json!({ "command": "estimate", "classes": out }),
    })
}

fn estimate_cov(input: &InputArgs, norm: NormalizationArg, distribution_at: Option<&str>) -> Result<Report> {
    let data = load(input)?;
    let normalization = match norm {
        NormalizationArg::ClassTotal => Normalization::ClassTotal,
        NormalizationArg::CellCount => Normalization::CellCount,
    };
    let point = distribution_at.map(parse_point).transpose()?;
    let mut text = String::new();
    let mut out = Vec::new();
    for class in classes(&data, input)? {
        let strat = stratified_estimates(&data, &class, normalization)?;
        let mut t = Table::new(
            format!("class {class} by covariate level (n = {})", strat.n),
            &["level", "k", "count", "detections", "p_hat", "se", "S_hat", "Lambda_hat"],
        );
        for l in &strat.levels {
            for k in 0..l.counts.len() {
                t.row(vec![
                    l.level.to_string(),
                    (k + 1).to_string(),
                    l.counts[k].to_string(),
                    l.detections[k].to_string(),
                    opt(l.p_hat[k]),
                    opt(l.p_hat_var[k].map(f64::sqrt)),
                    opt(l.survival.as_ref().map(|s| s.values[k + 1])),
                    opt(l.hazard.as_ref().map(|h| h.values[k])),
                ]);
            }
        }
        text.push_str(&t.render());
        let weights = empirical_level_weights(&strat);
        let combined = combine_marginal_probs(&strat, &weights)?;
        text.push_str(&pairs(
            "",
            &[
                ("combined_p_hat", nums(&combined.p_hat)),
                ("combined_total", num(combined.total)),
                ("empty_cells", strat.empty_cells.len().to_string()),
            ],
        ));
        let dist = point
            .as_ref()
            .map(|z| recover_covariate_distribution(&data, &class, z))
            .transpose()?;
        if let Some(d) = &dist {
            text.push_str(&pairs(
                "",
                &[("P(Z <= z)", num(d.value)), ("raw", num(d.raw)), ("clamped", d.clamped.to_string())],
            ));
        }
        text.push('\n');
        out.push(json!({
            "class_id": class,
            "stratified": to_json(&strat),
            "empirical_weights": weights.iter().map(|(l, w)| json!({"level": l, "weight": w})).collect::<Vec<_>>(),
            "combined": to_json(&combined),
            "distribution": dist.map(|d| json!({"z": point, "estimate": to_json(&d)})),
        }));
    }
    Ok(Report {
        text,
        json: json!({ "command": "estimate-cov", "classes": out }),
    })
}

fn kernel_cmd(input: &InputArgs, at: &[String], kind: KernelArg, bandwidth: &str, smoothness: u32) -> Result<Report> {
    let bandwidth = match bandwidth {
        "auto" => Bandwidth::Auto,
        h => Bandwidth::Fixed(
            h.parse::<f64>()
                .map_err(|_| usage(format!("bandwidth must be `auto` or a number, got {h:?}")))?,
        ),
    };
    let cfg = KernelConfig {
        kernel: match kind {
            KernelArg::Epanechnikov => KernelKind::Epanechnikov,
            KernelArg::Gaussian => KernelKind::Gaussian,
            KernelArg::Uniform => KernelKind::Uniform,
        },
        bandwidth,
        smoothness,
    };
    cfg.validate()?;
    let points = at.iter().map(|s| parse_point(s)).collect::<Result<Vec<_>>>()?;
    let data = load(input)?;
    let mut text = String::new();
    let mut out = Vec::new();
    for class in classes(&data, input)? {
        let results = kernel_grid(&data, &class, &cfg, &points, Execution::Parallel)
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let mut t = Table::new(
            format!("class {class} kernel estimates"),
            &["z", "k", "p_hat", "se", "S_hat", "Lambda_hat", "bandwidth"],
        );
        for r in &results {
            for k in 0..r.estimate.k() {
                t.row(vec![
                    nums(&r.z),
                    (k + 1).to_string(),
                    num(r.estimate.p_hat[k]),
                    num(r.estimate.p_hat_var[k].sqrt()),
                    opt(r.survival.as_ref().map(|s| s.values[k + 1])),
                    num(r.hazard.values[k]),
                    nums(&r.bandwidths[k]),
                ]);
            }
        }
        text.push_str(&t.render());
        text.push('\n');
        out.push(json!({ "class_id": class, "config": to_json(&cfg), "points": to_json(&results) }));
    }
    Ok(Report {
        text,
        json: json!({ "command": "kernel", "classes": out }),
    })
}

fn ph(input: &InputArgs, beta: Option<&str>, delta: Option<&str>) -> Result<Report> {
    let data = load(input)?;
    let coefs: Option<Vec<Vec<f64>>> = beta
        .map(|b| serde_json::from_str(b).map_err(|e| usage(format!("beta must be a JSON array of arrays: {e}"))))
        .transpose()?;
    let increments = delta.map(parse_point).transpose()?;
    let mut text = String::new();
    let mut out = Vec::new();
    for class in classes(&data, input)? {
        let dec = ph_decomposition(&data, &class)?;
        let mut t = Table::new(
            format!("class {class} proportional-hazards decomposition (n = {})", dec.n),
            &["level", "k", "members", "detections", "p_hat", "omega_hat", "S_hat", "Lambda_hat"],
        );
        for l in &dec.levels {
            for k in 0..l.counts.len() {
                t.row(vec![
                    l.level.to_string(),
                    (k + 1).to_string(),
                    l.counts[k].to_string(),
                    l.detections[k].to_string(),
                    opt(l.p_hat[k]),
                    opt(l.omega_hat[k]),
                    opt(l.survival.as_ref().map(|s| s.values[k + 1])),
                    opt(l.hazard.as_ref().map(|h| h.values[k])),
                ]);
            }
        }
        text.push_str(&t.render());
        let mut t = Table::new("", &["k", "mu_hat", "beta_hat"]);
        for (k, mu) in dec.mu_hat.iter().enumerate() {
            t.row(vec![
                (k + 1).to_string(),
                num(*mu),
                dec.beta_hat[k].as_ref().map_or("NA".into(), |b| nums(b)),
            ]);
        }
        text.push_str(&t.render());
        let loglik = match (&coefs, &increments) {
            (Some(b), Some(d)) => Some(ph_loglik(&data, &class, b, d)?),
            _ => None,
        };
        if let Some(ll) = loglik {
            text.push_str(&pairs("", &[("log_likelihood", num(ll))]));
        }
        text.push('\n');
        out.push(json!({ "class_id": class, "decomposition": to_json(&dec), "log_likelihood": loglik }));
    }
    Ok(Report {
        text,
        json: json!({ "command": "ph", "classes": out }),
    })
}

#[allow(clippy::too_many_arguments)]
fn size(
    input: &InputArgs,
    calibration: Option<&Path>,
    p_hat: &[String],
    method: SizeMethodArg,
    window: usize,
    window_norm: WindowArg,
    bootstrap: Option<usize>,
    seed: Option<u64>,
) -> Result<Report> {
    let method = match method {
        SizeMethodArg::Plain => SizeMethod::Plain,
        SizeMethodArg::MovingAverage => SizeMethod::MovingAverage {
            window,
            normalization: match window_norm {
                WindowArg::Mean => WindowNormalization::Mean,
                WindowArg::Literal => WindowNormalization::Literal,
            },
        },
    };
    if bootstrap.is_some() && seed.is_none() {
        return Err(usage("--bootstrap requires --seed"));
    }
    if !p_hat.is_empty() && (calibration.is_some() || bootstrap.is_some() || method != SizeMethod::Plain) {
        return Err(usage("--p-hat supports only the plain method without calibration or bootstrap"));
    }
    let data = load(input)?;
    let est = if !p_hat.is_empty() {
        let mut probs = BTreeMap::new();
        for item in p_hat {
            let (c, p) = item
                .split_once('=')
                .ok_or_else(|| usage(format!("--p-hat expects class=p, got {item:?}")))?;
            let p: f64 = p.parse().map_err(|_| usage(format!("invalid probability {p:?}")))?;
            probs.insert(ClassId::new(c), p);
        }
        let counts: BTreeMap<ClassId, u64> = classes(&data, input)?
            .into_iter()
            .map(|c| {
                let n = data.class_records(&c).map_or(0, |r| r.iter().filter(|r| r.detections() > 0).count());
                (c, n as u64)
            })
            .collect();
        estimate_size_plain(&counts, &probs)?
    } else {
        let calib = calibration
            .map(|p| load_dataset(p, Format::from_path(p), input.partitions.as_deref()))
            .transpose()?;
        match (bootstrap, seed) {
            (Some(b), Some(s)) => bootstrap_size_se(&data, calib.as_ref(), method, b, s, Execution::Parallel)?,
            _ => estimate_size_from_data(&data, calib.as_ref(), method)?,
        }
    };
    let mut t = Table::new("size estimates", &["class", "nu_hat", "se_boot"]);
    for (c, nu) in &est.nu_hat_by_class {
        t.row(vec![c.to_string(), num(*nu), opt(est.se_boot.as_ref().and_then(|s| s.get(c).copied()))]);
    }
    t.row(vec!["total".into(), num(est.nu_hat_total), opt(est.se_boot_total)]);
    Ok(Report {
        text: t.render(),
        json: json!({ "command": "size", "estimate": to_json(&est) }),
    })
}

fn test_rows(t: &mut Table, class: &ClassId, r: &TestResult) {
    t.row(vec![
        class.to_string(),
        num(r.statistic),
        format!("{:?}", r.scaling),
        r.df.to_string(),
        num(r.p_value),
        r.cells_used.to_string(),
        r.cells_excluded.to_string(),
        r.df_anomaly.to_string(),
    ]);
}

const TEST_HEADERS: [&str; 8] = ["class", "statistic", "scaling", "df", "p_value", "cells_used", "cells_excluded", "df_anomaly"];

fn test_indep(input: &InputArgs, scaling: Scaling) -> Result<Report> {
    let data = load(input)?;
    let mut text = String::new();
    let mut tests = Table::new("consecutive-interval independence", &TEST_HEADERS);
    let mut out = Vec::new();
    for class in classes(&data, input)? {
        let je = joint_estimates(&data, &class)?;
        let r = independence_test_consecutive(&data, &class, scaling)?;
        let mut t = Table::new(format!("class {class} joint estimates"), &["k", "p_hat_k", "p_hat_k+1", "p_joint", "pi_hat"]);
        for k in 0..je.p_joint_hat.len() {
            t.row(vec![
                (k + 1).to_string(),
                num(je.p_hat[k]),
                num(je.p_hat[k + 1]),
                num(je.p_joint_hat[k]),
                opt(je.pi_hat[k]),
            ]);
        }
        text.push_str(&t.render());
        text.push('\n');
        test_rows(&mut tests, &class, &r);
        out.push(json!({ "class_id": class, "joint": to_json(&je), "test": to_json(&r) }));
    }
    text.push_str(&tests.render());
    Ok(Report {
        text,
        json: json!({ "command": "test-indep", "classes": out }),
    })
}

fn test_markov(input: &InputArgs, scaling: Scaling) -> Result<Report> {
    let data = load(input)?;
    let m = markov_estimates(&data)?;
    let wanted = classes(&data, input)?;
    let mut t = Table::new("transition estimates", &["to", "from", "members", "q_hat", "k", "p_cond", "p_joint"]);
    for c in m.cells.iter().filter(|c| wanted.contains(&c.to) && c.members > 0) {
        for k in 0..c.detections.len() {
            t.row(vec![
                c.to.to_string(),
                c.from.to_string(),
                c.members.to_string(),
                num(c.q_hat),
                (k + 1).to_string(),
                opt(c.p_cond.as_ref().map(|p| p[k])),
                num(c.p_joint[k]),
            ]);
        }
    }
    let mut text = t.render();
    text.push('\n');
    let mut tests = Table::new("detection by origin class independence", &TEST_HEADERS);
    let mut out = Vec::new();
    for class in &wanted {
        let r = markov_independence_test(&data, class, scaling)?;
        test_rows(&mut tests, class, &r);
        out.push(json!({ "class_id": class, "test": to_json(&r) }));
    }
    text.push_str(&tests.render());
    Ok(Report {
        text,
        json: json!({ "command": "test-markov", "estimates": to_json(&m), "tests": out }),
    })
}

fn read_config(path: &Path, seed: u64) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg: SimConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line() as u64,
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.seed = seed;
    cfg.validate()?;
    Ok(cfg)
}

fn simulate(config: &Path, seed: u64, nu: Option<usize>, data_path: &Path, format: Option<FormatArg>) -> Result<Report> {
    let mut cfg = read_config(config, seed)?;
    if let Some(nu) = nu {
        cfg.nu = nu;
    }
    let data = generate(&cfg)?;
    save_dataset(&data, data_path, format_of(format, data_path))?;
    let mut t = Table::new("simulated dataset", &["class", "records", "detected"]);
    let mut out = Vec::new();
    for c in data.class_ids() {
        let recs = data.class_records(c)?;
        let detected = recs.iter().filter(|r| r.detections() > 0).count();
        t.row(vec![c.to_string(), recs.len().to_string(), detected.to_string()]);
        out.push(json!({ "class_id": c, "records": recs.len(), "detected": detected }));
    }
    Ok(Report {
        text: t.render(),
        json: json!({ "command": "simulate", "config": to_json(&cfg), "path": data_path, "classes": out }),
    })
}

fn sim_setup(sim: &SimArgs) -> Result<(SimConfig, Option<ClassId>, Execution)> {
    let mut cfg = read_config(&sim.config, sim.seed)?;
    if let Some(b) = sim.replicates {
        cfg.replicates = b;
    }
    if let Some(nu) = sim.nu {
        cfg.nu = nu;
    }
    let exec = if sim.sequential { Execution::Sequential } else { Execution::Parallel };
    Ok((cfg, sim.class.as_deref().map(ClassId::new), exec))
}

fn monte_carlo(sim: &SimArgs, target: TargetArg) -> Result<Report> {
    let (cfg, class, exec) = sim_setup(sim)?;
    let target = match target {
        TargetArg::IntervalProbs => Target::IntervalProbs,
        TargetArg::CumulativeHazard => Target::CumulativeHazard,
        TargetArg::ConsecutiveTest => Target::ConsecutiveTest,
        TargetArg::MarkovTest => Target::MarkovTest,
    };
    let rep = run_monte_carlo(&cfg, target, class.as_ref(), exec)?;
    let s = &rep.summary;
    let mut t = Table::new(
        format!("Monte Carlo: {} replicates, {} failed", rep.replicates.len(), s.failures),
        &["quantity", "mean", "truth", "bias", "empirical_sd", "formula_sd"],
    );
    for (j, label) in s.labels.iter().enumerate() {
        t.row(vec![
            label.clone(),
            num(s.mean[j]),
            opt(s.truth.as_ref().map(|v| v[j])),
            opt(s.bias.as_ref().map(|v| v[j])),
            num(s.empirical_sd[j]),
            opt(s.formula_sd.as_ref().map(|v| v[j])),
        ]);
    }
    let mut text = t.render();
    if let (Some(df), Some(ks)) = (s.reference_df, s.ks_reference) {
        text.push_str(&pairs("", &[("reference_df", df.to_string()), ("ks_distance", num(ks))]));
    }
    Ok(Report {
        text,
        json: json!({ "command": "monte-carlo", "report": to_json(&rep) }),
    })
}

fn calibrate(sim: &SimArgs, test: TestArg) -> Result<Report> {
    let (cfg, class, exec) = sim_setup(sim)?;
    let test = match test {
        TestArg::Z => CalibrationTest::Z,
        TestArg::X => CalibrationTest::X,
    };
    let rep = calibrate_df(&cfg, test, class.as_ref(), exec)?;
    let text = pairs(
        &format!("calibration of the {test:?} statistic"),
        &[
            ("replicates", rep.replicates.to_string()),
            ("failures", rep.failures.to_string()),
            ("mean", num(rep.mean)),
            ("variance", num(rep.variance)),
            ("stated_df", rep.stated_df.to_string()),
            ("ks_stated_df", num(rep.ks_stated_df)),
            ("best_fit_df", rep.best_fit_df.to_string()),
            ("ks_best_fit", num(rep.ks_best_fit)),
            ("df_anomaly", rep.df_anomaly.to_string()),
        ],
    );
    Ok(Report {
        text,
        json: json!({ "command": "calibrate-df", "report": to_json(&rep) }),
    })
}
