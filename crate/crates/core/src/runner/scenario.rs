//! Input signal and conductance ramps of the reference scenario.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::Scheme;
use crate::model::{param_index, N_PARAMS};

/// Input statistics from `start` until the next phase begins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPhase {
    /// ms
    pub start: f64,
    /// Mean current over the phase.
    pub mean: f64,
    /// Standard deviation of the current over the phase.
    pub amplitude: f64,
    /// Correlation time of the fluctuations (ms).
    pub correlation_time: f64,
}

/// Piecewise-stationary Ornstein-Uhlenbeck input. Each phase is rescaled so
/// its sample mean and standard deviation equal `mean` and `amplitude`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputSpec {
    pub phases: Vec<InputPhase>,
    /// Resolution of the generated signal (ms). The signal is held constant
    /// between grid points, so refining `dt` leaves it unchanged.
    pub input_dt: f64,
    pub seed: u64,
}

fn default_input_dt() -> f64 {
    0.1
}

impl Default for InputSpec {
    fn default() -> Self {
        Self {
            phases: vec![
                InputPhase {
                    start: 0.0,
                    mean: 1.0,
                    amplitude: 1.0,
                    correlation_time: 5.0,
                },
                InputPhase {
                    start: 5000.0,
                    mean: 1.2,
                    amplitude: 1.5,
                    correlation_time: 5.0,
                },
            ],
            input_dt: default_input_dt(),
            seed: 20,
        }
    }
}

fn near_integer(x: f64) -> bool {
    (x - x.round()).abs() < 1e-9 * x.abs().max(1.0)
}

impl InputSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.input_dt > 0.0) || !self.input_dt.is_finite() {
            errs.push(format!("input.input_dt must be > 0 (got {})", self.input_dt));
            return errs;
        }
        if self.phases.is_empty() {
            errs.push("input.phases must not be empty".into());
            return errs;
        }
        if self.phases[0].start != 0.0 {
            errs.push("the first input phase must start at 0".into());
        }
        for (i, ph) in self.phases.iter().enumerate() {
            if i > 0 && !(ph.start > self.phases[i - 1].start) {
                errs.push(format!("input phase {i} must start after phase {}", i - 1));
            }
            if !near_integer(ph.start / self.input_dt) {
                errs.push(format!("input phase {i} start must be a multiple of input_dt"));
            }
            if !ph.mean.is_finite() {
                errs.push(format!("input phase {i} mean must be finite"));
            }
            if !(ph.amplitude >= 0.0) || !ph.amplitude.is_finite() {
                errs.push(format!("input phase {i} amplitude must be >= 0"));
            }
            if !(ph.correlation_time > 0.0) || !ph.correlation_time.is_finite() {
                errs.push(format!("input phase {i} correlation_time must be > 0"));
            }
        }
        errs
    }

    /// Phase boundaries after the first phase start.
    pub fn phase_boundaries(&self) -> Vec<f64> {
        self.phases.iter().skip(1).map(|p| p.start).collect()
    }

    fn phase_of(&self, t: f64) -> usize {
        self.phases.iter().rposition(|p| p.start <= t + 1e-9).unwrap_or(0)
    }
}

/// Input samples at `t_k = k dt`, `k = 0..n_steps`, held constant over
/// `[t_k, t_k + dt)`.
pub fn generate_input(spec: &InputSpec, dt: f64, n_steps: usize) -> Result<Vec<f64>> {
    let errs = spec.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let ratio = spec.input_dt / dt;
    if !(dt > 0.0) || ratio < 1.0 - 1e-9 || !near_integer(ratio) {
        return Err(Error::config(format!(
            "input_dt ({}) must be a positive integer multiple of dt ({dt})",
            spec.input_dt
        )));
    }
    let hold = ratio.round() as usize;
    let n_input = n_steps.div_ceil(hold);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut raw = Vec::with_capacity(n_input);
    let mut phase_idx = Vec::with_capacity(n_input);
    let mut x: f64 = StandardNormal.sample(&mut rng);
    for k in 0..n_input {
        let t = k as f64 * spec.input_dt;
        let ph = spec.phase_of(t);
        if k > 0 {
            let decay = (-spec.input_dt / spec.phases[ph].correlation_time).exp();
            let xi: f64 = StandardNormal.sample(&mut rng);
            x = x * decay + (1.0 - decay * decay).sqrt() * xi;
        }
        raw.push(x);
        phase_idx.push(ph);
    }

    let mut out = vec![0.0; n_input];
    for (p, phase) in spec.phases.iter().enumerate() {
        let idx: Vec<usize> = (0..n_input).filter(|&k| phase_idx[k] == p).collect();
        if idx.is_empty() {
            continue;
        }
        let n = idx.len() as f64;
        let m = idx.iter().map(|&k| raw[k]).sum::<f64>() / n;
        let var = idx.iter().map(|&k| (raw[k] - m).powi(2)).sum::<f64>() / n;
        let scale = if var > 0.0 { phase.amplitude / var.sqrt() } else { 0.0 };
        for &k in &idx {
            out[k] = phase.mean + scale * (raw[k] - m);
        }
    }
    Ok((0..n_steps).map(|k| out[k / hold]).collect())
}

/// Linear ramp of one maximal conductance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ramp {
    /// Parameter name (`Na`, `K`, `CaT`, `CaL`, `KCa`, `leak`).
    pub param: String,
    pub start: f64,
    pub end: f64,
    pub from: f64,
    pub to: f64,
}

impl Ramp {
    pub fn index(&self) -> Option<usize> {
        param_index(&self.param)
    }

    pub fn value(&self, t: f64) -> f64 {
        if t <= self.start {
            self.from
        } else if t >= self.end {
            self.to
        } else {
            self.from + (self.to - self.from) * (t - self.start) / (self.end - self.start)
        }
    }
}

pub fn validate_ramps(ramps: &[Ramp]) -> Vec<String> {
    let mut errs = Vec::new();
    for (i, r) in ramps.iter().enumerate() {
        if r.index().is_none() {
            errs.push(format!("ramp {i}: unknown parameter '{}'", r.param));
        }
        if !(r.end > r.start) || !r.start.is_finite() || !r.end.is_finite() {
            errs.push(format!("ramp {i}: end must be after start"));
        }
        if !(r.from > 0.0) || !(r.to > 0.0) || !r.from.is_finite() || !r.to.is_finite() {
            errs.push(format!("ramp {i}: endpoint values must be positive"));
        }
        for (k, other) in ramps.iter().enumerate().take(i) {
            if other.param == r.param && r.start < other.end && other.start < r.end {
                errs.push(format!("ramps {k} and {i} overlap on parameter '{}'", r.param));
            }
        }
    }
    errs
}

/// Maximal conductances at time `t`: `base` with ramped entries replaced.
/// A parameter with several disjoint ramps follows the latest one started,
/// or the earliest one before any has started.
pub fn ramp_eval(base: &[f64; N_PARAMS], ramps: &[Ramp], t: f64) -> Result<[f64; N_PARAMS]> {
    let errs = validate_ramps(ramps);
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    Ok(ramp_eval_unchecked(base, ramps, t))
}

pub(crate) fn ramp_eval_unchecked(base: &[f64; N_PARAMS], ramps: &[Ramp], t: f64) -> [f64; N_PARAMS] {
    let mut out = *base;
    for j in 0..N_PARAMS {
        let on_j = || ramps.iter().filter(|r| r.index() == Some(j));
        let active = on_j()
            .filter(|r| r.start <= t)
            .max_by(|a, b| a.start.total_cmp(&b.start))
            .or_else(|| on_j().min_by(|a, b| a.start.total_cmp(&b.start)));
        if let Some(r) = active {
            out[j] = r.value(t);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    /// ms
    pub duration: f64,
    /// ms
    pub dt: f64,
    pub input: InputSpec,
    pub ramps: Vec<Ramp>,
    /// Initial membrane potential; gates start at steady state.
    pub v0: f64,
    pub scheme: Scheme,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            duration: 10_000.0,
            dt: 0.1,
            input: InputSpec::default(),
            ramps: vec![
                Ramp {
                    param: "CaL".into(),
                    start: 3000.0,
                    end: 7000.0,
                    from: 0.1,
                    to: 0.4,
                },
                Ramp {
                    param: "KCa".into(),
                    start: 3000.0,
                    end: 7000.0,
                    from: 0.05,
                    to: 1.0,
                },
            ],
            v0: -70.0,
            scheme: Scheme::SemiImplicit,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            errs.push(format!("scenario.duration must be > 0 (got {})", self.duration));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            errs.push(format!("scenario.dt must be > 0 (got {})", self.dt));
        } else if self.duration.is_finite() && self.dt > self.duration {
            errs.push("scenario.dt must not exceed the duration".into());
        }
        if !self.v0.is_finite() {
            errs.push("scenario.v0 must be finite".into());
        }
        errs.extend(self.input.validate());
        errs.extend(validate_ramps(&self.ramps));
        errs
    }

    pub fn n_steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn phase_boundaries(&self) -> Vec<f64> {
        self.input.phase_boundaries()
    }

    /// Windows where no ramp is active: before the first start and after the
    /// last end.
    pub fn constant_windows(&self) -> Vec<(f64, f64)> {
        if self.ramps.is_empty() {
            return vec![(0.0, self.duration)];
        }
        let first = self.ramps.iter().map(|r| r.start).fold(f64::INFINITY, f64::min);
        let last = self.ramps.iter().map(|r| r.end).fold(f64::NEG_INFINITY, f64::max);
        vec![(0.0, first), (last, self.duration)]
    }
}
