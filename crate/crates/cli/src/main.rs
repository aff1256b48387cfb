mod commands;
mod table;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cstatus::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "cstatus", version, about = "Estimators and independence tests for interval-censored detection data")]
struct Cli {
    /// Write the report here instead of standard output.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Emit machine-readable JSON instead of a table.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    WideCsv,
    Jsonl,
}

#[derive(Args)]
pub struct InputArgs {
    /// Dataset file.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long)]
    pub format: Option<FormatArg>,
    /// Partition file with columns class_id,k,tau_lower,tau_upper.
    #[arg(long)]
    pub partitions: Option<PathBuf>,
    /// Restrict the report to one class.
    #[arg(long)]
    pub class: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ScalingArg {
    SampleScaled,
    Literal,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum NormalizationArg {
    ClassTotal,
    CellCount,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum KernelArg {
    Epanechnikov,
    Gaussian,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SizeMethodArg {
    Plain,
    MovingAverage,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum WindowArg {
    Mean,
    Literal,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum TargetArg {
    IntervalProbs,
    CumulativeHazard,
    ConsecutiveTest,
    MarkovTest,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum TestArg {
    Z,
    X,
}

#[derive(Args)]
pub struct SimArgs {
    /// Simulation configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; overrides the configuration's seed.
    #[arg(long)]
    pub seed: u64,
    /// Override the replicate count.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Override the population size.
    #[arg(long)]
    pub nu: Option<usize>,
    /// Class to analyse; defaults to the configuration's class.
    #[arg(long)]
    pub class: Option<String>,
    /// Run replicates on one thread.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Subcommand)]
pub enum Command {
    /// Per-interval probabilities, survival, cumulative hazard and variances.
    Estimate {
        #[command(flatten)]
        input: InputArgs,
        /// Confidence level of the normal intervals.
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
    },
    /// Estimates stratified by covariate level.
    EstimateCov {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum, default_value = "class-total")]
        normalization: NormalizationArg,
        /// Also estimate P(Z <= z) at this covariate value (comma separated).
        #[arg(long)]
        distribution_at: Option<String>,
    },
    /// Kernel-smoothed probabilities at covariate values.
    Kernel {
        #[command(flatten)]
        input: InputArgs,
        /// Query point, comma separated for vector covariates; repeatable.
        #[arg(long = "at", required = true)]
        at: Vec<String>,
        #[arg(long, value_enum, default_value = "epanechnikov")]
        kernel: KernelArg,
        /// Bandwidth: `auto` or a positive number.
        #[arg(long, default_value = "auto")]
        bandwidth: String,
        #[arg(long, default_value_t = 2)]
        smoothness: u32,
    },
    /// Proportional-hazards decomposition over covariate levels.
    Ph {
        #[command(flatten)]
        input: InputArgs,
        /// Coefficients for log-likelihood evaluation, as JSON `[[b11,..],..]`.
        #[arg(long, requires = "delta")]
        beta: Option<String>,
        /// Baseline hazard increments per interval, comma separated.
        #[arg(long, requires = "beta")]
        delta: Option<String>,
    },
    /// Class and population size.
    Size {
        #[command(flatten)]
        input: InputArgs,
        /// Roster sample supplying detection probabilities.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Known detection probability `class=p`; repeatable.
        #[arg(long = "p-hat")]
        p_hat: Vec<String>,
        #[arg(long, value_enum, default_value = "plain")]
        method: SizeMethodArg,
        #[arg(long, default_value_t = 1)]
        window: usize,
        #[arg(long, value_enum, default_value = "mean")]
        window_normalization: WindowArg,
        /// Bootstrap replicates for standard errors.
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Independence of detection on consecutive intervals.
    TestIndep {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum, default_value = "sample-scaled")]
        scaling: ScalingArg,
    },
    /// Independence of detection and origin class.
    TestMarkov {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum, default_value = "sample-scaled")]
        scaling: ScalingArg,
    },
    /// Draw one dataset from a simulation configuration.
    Simulate {
        /// Simulation configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        nu: Option<usize>,
        /// Dataset file to write.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        format: Option<FormatArg>,
    },
    /// Repeated simulation and estimation.
    MonteCarlo {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, value_enum, default_value = "interval-probs")]
        target: TargetArg,
    },
    /// Empirical law of a test statistic under its null hypothesis.
    CalibrateDf {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, value_enum)]
        test: TestArg,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Usage => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return ExitCode::from(if e.kind() == K::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 });
            }
            let msg = e.to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{first}");
            return ExitCode::from(2);
        }
    };
    let report = match commands::run(&cli.command) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            return ExitCode::from(exit_code(&e));
        }
    };
    let text = if cli.json {
        let mut s = serde_json::to_string_pretty(&report.json).expect("reports serialize");
        s.push('\n');
        s
    } else {
        report.text
    };
    let written = match &cli.output {
        Some(path) => std::fs::write(path, text).map_err(Error::from),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(Error::from),
    };
    match written {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(exit_code(&e))
        }
    }
}
