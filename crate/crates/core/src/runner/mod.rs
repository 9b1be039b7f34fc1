//! Scenario construction, trial integration and multi-trial experiments.

mod config;
mod experiment;
mod output;
mod phenotype;
mod scenario;
mod trial;

pub use config::{
    apply_override, ConfigDocument, ExperimentConfig, OutputConfig, ResolvedConfig, SweepEntry, TrajectoryOutput,
    CONFIG_SCHEMA_VERSION,
};
pub use experiment::{
    mean_std, run_experiment, trial_config, trial_seed, Experiment, ExperimentOptions, ExperimentSummary, TrialOutcome,
};
pub use output::{format_table, read_trial_result, summary_csv, trajectory_csv, trials_csv, write_atomic, SummaryRow};
pub use phenotype::{
    classify_spikes, plant_voltage, spike_times, window_phenotype, IsiStats, Phenotype, PhenotypeThresholds,
};
pub use scenario::{generate_input, ramp_eval, validate_ramps, InputPhase, InputSpec, Ramp, Scenario};
pub use trial::{
    integrate_trial, integrate_trial_with, rms_from_errors, rms_from_sum, ObserverConfig, ObserverKind, Trajectory,
    TrialConfig, TrialHooks, TrialResult,
};
