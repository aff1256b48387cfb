//! Synthetic populations from the model families, a seeded Monte Carlo
//! engine, and calibration experiments for the asymptotic claims.

mod config;
mod generate;
mod monte_carlo;

pub use config::{
    ph_interval_probs, CovariateModel, DetectionLaw, Generator, PiecewiseLinearHazard, Regime, SimConfig, Stratum,
};
pub use generate::{generate, generate_with_rng, replicate_rng};
pub use monte_carlo::{
    calibrate_df, run_monte_carlo, size_experiment, CalibrationReport, CalibrationTest, MonteCarloReport,
    MonteCarloSummary, ReplicateOutcome, SizeExperimentReport, Target,
};
