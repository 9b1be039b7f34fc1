//! Experiment configuration files.
//!
//! ```toml
//! schema_version = 1
//! model = "../models/default.toml"   # optional, relative to this file
//! seed = 1
//! trials = 20
//! vary_input = false
//! log_decimation = 10
//!
//! [output]
//! trajectories = "first"             # "none", "first" or "all"
//!
//! [scenario]                         # duration, dt, v0, scheme, input, ramps
//! [observer]                         # kind, centralized, distributed, init
//! [mismatch]                         # r, s, kca_shift_range
//! [redundancy]                       # N, beta (redundant observer only)
//!
//! [[sweep]]
//! label = "redundant N=3"
//! overrides = ["observer.kind=redundant", "redundancy.N=3"]
//! ```
//!
//! Overrides are `dotted.key=value` pairs applied to the parsed document.
//! Values are read as TOML and fall back to plain strings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::trial::{ObserverConfig, TrialConfig};
use crate::error::{Error, Result};
use crate::mismatch::MismatchConfig;
use crate::model::NeuronModel;
use crate::observers::RedundancyGains;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryOutput {
    None,
    #[default]
    First,
    All,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub trajectories: TrajectoryOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepEntry {
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub vary_input: bool,
    #[serde(default = "default_decimation")]
    pub log_decimation: usize,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub scenario: Scenario,
    #[serde(default)]
    pub observer: ObserverConfig,
    /// `seed` is replaced by the per-trial seed.
    #[serde(default)]
    pub mismatch: MismatchConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub redundancy: Option<RedundancyGains>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepEntry>,
}

fn default_seed() -> u64 {
    1
}

fn default_trials() -> usize {
    20
}

fn default_decimation() -> usize {
    10
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            model: None,
            seed: default_seed(),
            trials: default_trials(),
            vary_input: false,
            log_decimation: default_decimation(),
            output: OutputConfig::default(),
            scenario: Scenario::default(),
            observer: ObserverConfig::default(),
            mismatch: MismatchConfig::default(),
            redundancy: None,
            sweep: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn trial_config(&self) -> TrialConfig {
        TrialConfig {
            scenario: self.scenario.clone(),
            observer: self.observer,
            mismatch: self.mismatch,
            redundancy: self.redundancy,
            trial_seed: self.seed,
            log_decimation: self.log_decimation,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            errs.push(format!(
                "schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.trials == 0 {
            errs.push("trials must be >= 1".into());
        }
        errs.extend(self.trial_config().validate());
        errs
    }
}

/// A parsed configuration document plus where it came from.
#[derive(Debug, Clone)]
pub struct ConfigDocument {
    pub table: toml::Table,
    /// Directory used to resolve relative paths.
    pub base_dir: PathBuf,
    /// Overrides applied so far, in order.
    pub overrides: Vec<String>,
}

/// One fully resolved configuration.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub label: String,
    pub config: ExperimentConfig,
    pub overrides: Vec<String>,
}

impl ConfigDocument {
    pub fn from_str(text: &str, base_dir: &Path) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        Ok(Self {
            table,
            base_dir: base_dir.to_path_buf(),
            overrides: Vec::new(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config file {}: {e}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, &dir).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Document with every field at its default.
    pub fn defaults() -> Self {
        let text = toml::to_string(&ExperimentConfig::default()).expect("default config serializes");
        Self::from_str(&text, Path::new(".")).expect("default config parses")
    }

    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        apply_override(&mut self.table, spec)?;
        self.overrides.push(spec.to_string());
        Ok(())
    }

    fn decode(table: &toml::Table) -> Result<ExperimentConfig> {
        toml::Value::Table(table.clone())
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))
    }

    /// The base configuration (ignoring any sweep list), validated.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let mut config = Self::decode(&self.table)?;
        self.finish(&mut config)?;
        Ok(ResolvedConfig {
            label: config.trial_config().label(),
            config,
            overrides: self.overrides.clone(),
        })
    }

    /// One configuration per sweep entry, in file order. Entry overrides
    /// apply after those already on the document.
    pub fn resolve_sweep(&self) -> Result<Vec<ResolvedConfig>> {
        let base = Self::decode(&self.table)?;
        if base.sweep.is_empty() {
            return Err(Error::config("the configuration has no [[sweep]] entries"));
        }
        let mut out = Vec::new();
        let mut errs = Vec::new();
        for (i, entry) in base.sweep.iter().enumerate() {
            let mut table = self.table.clone();
            table.remove("sweep");
            let mut overrides = self.overrides.clone();
            for o in &entry.overrides {
                if let Err(e) = apply_override(&mut table, o) {
                    errs.push(format!("sweep entry {i}: {e}"));
                }
                overrides.push(o.clone());
            }
            match Self::decode(&table).and_then(|mut c| self.finish(&mut c).map(|_| c)) {
                Ok(config) => out.push(ResolvedConfig {
                    label: entry.label.clone().unwrap_or_else(|| config.trial_config().label()),
                    config,
                    overrides,
                }),
                Err(Error::Config(list)) => errs.extend(list.into_iter().map(|m| format!("sweep entry {i}: {m}"))),
                Err(e) => errs.push(format!("sweep entry {i}: {e}")),
            }
        }
        if errs.is_empty() {
            Ok(out)
        } else {
            Err(Error::Config(errs))
        }
    }

    fn finish(&self, config: &mut ExperimentConfig) -> Result<()> {
        if let Some(p) = &config.model {
            if p.is_relative() {
                config.model = Some(self.base_dir.join(p));
            }
        }
        let errs = config.validate();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

impl ResolvedConfig {
    pub fn load_model(&self) -> Result<NeuronModel> {
        match &self.config.model {
            Some(p) => NeuronModel::load(p),
            None => Ok(NeuronModel::default_model()),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `dotted.key` in `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, value) = spec
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override '{spec}' is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Usage(format!("override '{spec}' has an empty key segment")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Usage(format!("override '{spec}': '{part}' is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(value));
    Ok(())
}
