//! Scenario files, Monte Carlo trials, baselines and result files.

pub mod baselines;
pub mod config;
pub mod output;
pub mod runner;

pub use config::{Method, Scenario, ScenarioConfig, Sweep};
pub use output::{emit_results, summary_path, write_scaling, write_summaries, write_trials, Format};
pub use runner::{run_scenario, run_sweep, run_trial, RunOptions, RunReport, Stats, Summary, TrialFailure, TrialResult};
