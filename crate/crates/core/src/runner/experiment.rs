//! Seeded multi-trial experiments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trial::{integrate_trial, TrialConfig, TrialResult};
use crate::error::{Error, Result};
use crate::model::NeuronModel;

/// SplitMix64 output function.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of trial `index` under `base`.
pub fn trial_seed(base: u64, index: usize) -> u64 {
    mix(mix(base) ^ index as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentOptions {
    /// Draw a fresh input realization per trial instead of sharing one.
    pub vary_input: bool,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub index: usize,
    pub trial_seed: u64,
    /// `None` when the trial aborted.
    pub rms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub label: String,
    pub base_seed: u64,
    pub trials: usize,
    pub completed: usize,
    /// Mean rms over completed trials.
    pub mean: Option<f64>,
    /// Sample standard deviation; 0 for a single completed trial.
    pub std: Option<f64>,
    /// Fewer than two completed trials.
    pub degenerate: bool,
    /// Some trials aborted and were left out of the statistics.
    pub has_aborted: bool,
    pub outcomes: Vec<TrialOutcome>,
}

impl ExperimentSummary {
    pub fn aborted(&self) -> impl Iterator<Item = &TrialOutcome> {
        self.outcomes.iter().filter(|o| o.rms.is_none())
    }
}

pub struct Experiment {
    pub summary: ExperimentSummary,
    /// Per-trial results in index order; `Err` for aborted trials.
    pub results: Vec<Result<TrialResult>>,
}

/// Configuration of trial `index`: per-trial mismatch seed and, with
/// `vary_input`, per-trial input seed.
pub fn trial_config(base: &TrialConfig, base_seed: u64, index: usize, vary_input: bool) -> TrialConfig {
    let seed = trial_seed(base_seed, index);
    let mut c = base.clone();
    c.trial_seed = seed;
    c.mismatch.seed = seed;
    if vary_input {
        c.scenario.input.seed = mix(seed);
    }
    c
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some((mean, std))
}

pub fn run_experiment(
    model: &NeuronModel,
    base: &TrialConfig,
    base_seed: u64,
    n_trials: usize,
    options: ExperimentOptions,
) -> Result<Experiment> {
    if n_trials == 0 {
        return Err(Error::config("the number of trials must be >= 1"));
    }
    let errs = base.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let configs: Vec<TrialConfig> = (0..n_trials)
        .map(|i| trial_config(base, base_seed, i, options.vary_input))
        .collect();
    let run = || -> Vec<Result<TrialResult>> { configs.par_iter().map(|c| integrate_trial(model, c)).collect() };
    let results = match options.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::config(format!("cannot start {n} worker threads: {e}")))?
            .install(run),
        None => run(),
    };

    let outcomes: Vec<TrialOutcome> = results
        .iter()
        .zip(&configs)
        .enumerate()
        .map(|(index, (r, c))| match r {
            Ok(t) => TrialOutcome {
                index,
                trial_seed: c.trial_seed,
                rms: Some(t.rms_voltage_error),
                error: None,
            },
            Err(e) => {
                log::warn!("trial {index} aborted: {e}");
                TrialOutcome {
                    index,
                    trial_seed: c.trial_seed,
                    rms: None,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect();
    let rms: Vec<f64> = outcomes.iter().filter_map(|o| o.rms).collect();
    let stats = mean_std(&rms);
    let summary = ExperimentSummary {
        label: base.label(),
        base_seed,
        trials: n_trials,
        completed: rms.len(),
        mean: stats.map(|s| s.0),
        std: stats.map(|s| s.1),
        degenerate: rms.len() < 2,
        has_aborted: rms.len() < n_trials,
        outcomes,
    };
    Ok(Experiment { summary, results })
}
