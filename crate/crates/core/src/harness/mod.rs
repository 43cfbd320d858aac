//! Monte-Carlo experiment driver: configuration, per-trial simulation and
//! estimation, aggregate metrics and CSV export.

mod config;
pub mod metrics;
mod sweep;

pub use config::{ExperimentConfig, Scenario};
pub use sweep::{
    derive_seed, estimate, run_sweep, run_trial, scene_seed, simulate_trial, write_nmse_csv, write_outputs,
    write_rmse_csv, SimulatedTrial, SweepPoint, SweepResult, TrialRecord, CSV_VERSION_HEADER,
};
