//! One coupled simulation of the true neuron and an observer.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::scenario::{generate_input, ramp_eval_unchecked, Scenario};
use crate::error::{Error, Result};
use crate::integrate::{euler_step, rk4_step_t, Joint, Scheme};
use crate::mismatch::{MismatchConfig, MismatchSample};
use crate::model::{FullState, NeuronModel, N_PARAMS};
use crate::observers::{
    sample_block_mismatch, CentralizedGains, CentralizedObserver, DistributedGains, DistributedObserver, Observer,
    ObserverInit, RedundancyGains, RedundantObserver, StateVector, StepSample,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObserverKind {
    #[default]
    Centralized,
    Distributed,
    Redundant,
}

impl ObserverKind {
    pub fn name(self) -> &'static str {
        match self {
            ObserverKind::Centralized => "centralized",
            ObserverKind::Distributed => "distributed",
            ObserverKind::Redundant => "redundant",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObserverConfig {
    pub kind: ObserverKind,
    pub centralized: CentralizedGains,
    pub distributed: DistributedGains,
    pub init: ObserverInit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    pub scenario: Scenario,
    pub observer: ObserverConfig,
    pub mismatch: MismatchConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub redundancy: Option<RedundancyGains>,
    pub trial_seed: u64,
    /// Keep every `log_decimation`-th step in the trajectory.
    pub log_decimation: usize,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::default(),
            observer: ObserverConfig::default(),
            mismatch: MismatchConfig::default(),
            redundancy: None,
            trial_seed: 0,
            log_decimation: 10,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.scenario.validate();
        errs.extend(self.mismatch.validate());
        errs.extend(self.observer.init.validate());
        match self.observer.kind {
            ObserverKind::Centralized => errs.extend(self.observer.centralized.validate()),
            _ => {
                errs.extend(self.observer.distributed.validate());
                let g = &self.observer.distributed;
                if g.alpha.iter().any(|a| a * self.scenario.dt >= 1.0) {
                    errs.push("observer.distributed.alpha * dt must be < 1".into());
                }
            }
        }
        if self.observer.kind == ObserverKind::Centralized && self.observer.centralized.alpha * self.scenario.dt >= 1.0
        {
            errs.push("observer.centralized.alpha * dt must be < 1".into());
        }
        match (self.observer.kind, &self.redundancy) {
            (ObserverKind::Redundant, Some(r)) => errs.extend(r.validate()),
            (ObserverKind::Redundant, None) => {
                errs.push("observer.kind = redundant requires a redundancy section".into())
            }
            (_, Some(_)) => errs.push("a redundancy section is only valid with observer.kind = redundant".into()),
            _ => {}
        }
        if self.log_decimation == 0 {
            errs.push("log_decimation must be >= 1".into());
        }
        errs
    }

    /// Short human-readable label, e.g. `redundant N=3`.
    pub fn label(&self) -> String {
        match (self.observer.kind, &self.redundancy) {
            (ObserverKind::Redundant, Some(r)) => format!("redundant N={}", r.n),
            (kind, _) => kind.name().to_string(),
        }
    }

    pub fn particles(&self) -> usize {
        self.redundancy.map_or(1, |r| r.n)
    }
}

/// Decimated time series of a trial.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
    pub v_hat: Vec<f64>,
    pub abs_err: Vec<f64>,
    /// Parameter estimates (block means for the redundant observer).
    pub estimates: Vec<[f64; N_PARAMS]>,
    pub mu_cal: Vec<f64>,
    pub mu_kca: Vec<f64>,
    pub u: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn push(&mut self, t: f64, v: f64, v_hat: f64, est: [f64; N_PARAMS], mu: &[f64; N_PARAMS], u: f64) {
        self.t.push(t);
        self.v.push(v);
        self.v_hat.push(v_hat);
        self.abs_err.push((v - v_hat).abs());
        self.estimates.push(est);
        self.mu_cal.push(mu[CAL]);
        self.mu_kca.push(mu[KCA]);
        self.u.push(u);
    }
}

const CAL: usize = 3;
const KCA: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub rms_voltage_error: f64,
    /// Number of squared errors accumulated into the rms.
    pub steps: usize,
    pub trajectory: Trajectory,
    /// Realized perturbations, indexed `[block][particle]`. The centralized
    /// observer has a single block.
    pub mismatch_echo: Vec<Vec<MismatchSample>>,
    pub config_echo: TrialConfig,
    /// Largest per-block consensus sum seen, when tracked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_consensus_residual: Option<f64>,
    /// Undecimated errors `v - v_hat`, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_dump: Option<Vec<f64>>,
    /// Seconds. Left out of serialized output so files are reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

/// Debug and test instrumentation. All off by default.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrialHooks {
    /// Added to every error sample before it enters the accumulator.
    pub error_offset: f64,
    /// Keep every accumulated error sample.
    pub dump_errors: bool,
    /// Evaluate the consensus residual after every step.
    pub track_consensus: bool,
}

/// Runs one trial with default hooks.
pub fn integrate_trial(model: &NeuronModel, config: &TrialConfig) -> Result<TrialResult> {
    integrate_trial_with(model, config, TrialHooks::default())
}

pub fn integrate_trial_with(model: &NeuronModel, config: &TrialConfig, hooks: TrialHooks) -> Result<TrialResult> {
    let errs = config.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let init = config.observer.init;
    match config.observer.kind {
        ObserverKind::Centralized => {
            let sample = config.mismatch.sample_stream(0, model.n_gates());
            let obs = CentralizedObserver::new(model, &sample, config.observer.centralized, init)?;
            simulate(model, config, &obs, vec![vec![sample]], hooks)
        }
        ObserverKind::Distributed => {
            let blocks = sample_block_mismatch(model, &config.mismatch, 1);
            let flat: Vec<MismatchSample> = blocks.iter().map(|b| b[0].clone()).collect();
            let obs = DistributedObserver::new(model, &flat, config.observer.distributed, init)?;
            simulate(model, config, &obs, blocks, hooks)
        }
        ObserverKind::Redundant => {
            let red = config.redundancy.unwrap_or_default();
            let blocks = sample_block_mismatch(model, &config.mismatch, red.n);
            let obs = RedundantObserver::new(model, &blocks, config.observer.distributed, red, init)?;
            simulate(model, config, &obs, blocks, hooks)
        }
    }
}

fn plant_ok(model: &NeuronModel, x: &FullState) -> bool {
    x.is_finite() && {
        let ng = model.n_gates();
        x.w[..ng].iter().all(|g| (-1e-9..=1.0 + 1e-9).contains(g)) && x.w[ng..].iter().all(|c| *c >= -1e-9)
    }
}

fn diverged(t: f64, v: f64, v_hat: f64, est: &[f64; N_PARAMS], why: &str) -> Error {
    Error::Divergence {
        time: t,
        detail: format!("{why}; last state v = {v}, v_hat = {v_hat}, estimates = {est:?}"),
    }
}

fn simulate<O: Observer>(
    model: &NeuronModel,
    config: &TrialConfig,
    obs: &O,
    mismatch_echo: Vec<Vec<MismatchSample>>,
    hooks: TrialHooks,
) -> Result<TrialResult> {
    let started = Instant::now();
    let sc = &config.scenario;
    let dt = sc.dt;
    let n = sc.n_steps();
    let input = generate_input(&sc.input, dt, n)?;
    let base = model.maximal_conductances;
    let ramps = &sc.ramps;
    let mu_at = |t: f64| ramp_eval_unchecked(&base, ramps, t);
    let decim = config.log_decimation;

    let mut x = model.steady_state(sc.v0);
    let mut o = obs.initial_state(sc.v0);
    let mut traj = Trajectory::default();
    let mut dw = vec![0.0; x.w.len()];
    let mut sum_sq = 0.0;
    let mut dump = hooks.dump_errors.then(|| Vec::with_capacity(n));
    let mut max_consensus: Option<f64> = None;

    traj.push(
        0.0,
        x.v,
        obs.v_hat(&o),
        obs.estimates(&o),
        &mu_at(0.0),
        input.first().copied().unwrap_or(0.0),
    );

    for k in 0..n {
        let t = k as f64 * dt;
        let u = input[k];
        let mu = mu_at(t);
        let v = x.v;
        match sc.scheme {
            Scheme::SemiImplicit => {
                let dv = model.vector_field_into(&mu, x.v, &x.w, u, &mut dw);
                x.v += dt * dv;
                for (w, d) in x.w.iter_mut().zip(&dw) {
                    *w += dt * d;
                }
                let sample = StepSample { v, v_next: x.v, u, dt };
                if let Err(e) = obs.step(&mut o, &sample) {
                    return Err(diverged(t, v, obs.v_hat(&o), &obs.estimates(&o), &e.to_string()));
                }
            }
            Scheme::Euler | Scheme::Rk4 => {
                let f = |tt: f64, s: &Joint<FullState, O::State>| -> Result<Joint<FullState, O::State>> {
                    let mu = mu_at(tt);
                    Ok(Joint(model.vector_field(&mu, &s.0, u)?, obs.rhs(&s.1, s.0.v, u)?))
                };
                let joint = Joint(x, o);
                let next = if sc.scheme == Scheme::Euler {
                    euler_step(&joint, dt, |s| f(t, s))
                } else {
                    rk4_step_t(&joint, t, dt, f)
                };
                match next {
                    Ok(Joint(nx, no)) => {
                        x = nx;
                        o = no;
                    }
                    Err(e) => {
                        return Err(diverged(
                            t,
                            v,
                            obs.v_hat(&joint.1),
                            &obs.estimates(&joint.1),
                            &e.to_string(),
                        ));
                    }
                }
            }
        }
        let t_next = (k + 1) as f64 * dt;
        let v_hat = obs.v_hat(&o);
        if !plant_ok(model, &x) {
            return Err(diverged(
                t_next,
                x.v,
                v_hat,
                &obs.estimates(&o),
                "true neuron left its state bounds",
            ));
        }
        if !o.is_finite() {
            return Err(diverged(
                t_next,
                x.v,
                v_hat,
                &obs.estimates(&o),
                "observer state is not finite",
            ));
        }
        if let Err(e) = obs.check_invariants(&o) {
            return Err(diverged(t_next, x.v, v_hat, &obs.estimates(&o), &e.to_string()));
        }
        let e = x.v - v_hat + hooks.error_offset;
        sum_sq += e * e;
        if let Some(d) = dump.as_mut() {
            d.push(e);
        }
        if hooks.track_consensus {
            if let Some(r) = obs.consensus_residual(&o) {
                max_consensus = Some(max_consensus.map_or(r, |m: f64| m.max(r)));
            }
        }
        if (k + 1) % decim == 0 || k + 1 == n {
            let u_log = input.get(k + 1).copied().unwrap_or(u);
            traj.push(t_next, x.v, v_hat, obs.estimates(&o), &mu_at(t_next), u_log);
        }
    }

    let rms = rms_from_sum(sum_sq, n);
    if !rms.is_finite() {
        return Err(Error::Divergence {
            time: sc.duration,
            detail: "rms error is not finite".into(),
        });
    }
    Ok(TrialResult {
        rms_voltage_error: rms,
        steps: n,
        trajectory: traj,
        mismatch_echo,
        config_echo: config.clone(),
        max_consensus_residual: max_consensus,
        error_dump: dump,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

/// `sqrt(sum / n)`, the rms over `n` accumulated samples.
pub fn rms_from_sum(sum_sq: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        (sum_sq / n as f64).sqrt()
    }
}

/// Recomputes the rms from an undecimated error dump with the accumulator's
/// summation order.
pub fn rms_from_errors(errors: &[f64]) -> f64 {
    let mut s = 0.0;
    for e in errors {
        s += e * e;
    }
    rms_from_sum(s, errors.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::scenario::{InputPhase, InputSpec};

    fn short(kind: ObserverKind, mismatch: MismatchConfig) -> TrialConfig {
        let model = NeuronModel::default_model();
        TrialConfig {
            scenario: Scenario {
                duration: 300.0,
                ramps: vec![],
                ..Scenario::default()
            },
            observer: ObserverConfig {
                kind,
                init: ObserverInit {
                    theta0: Some(model.maximal_conductances),
                    p0: 1.0,
                },
                ..ObserverConfig::default()
            },
            mismatch,
            redundancy: (kind == ObserverKind::Redundant).then(RedundancyGains::default),
            trial_seed: 0,
            log_decimation: 7,
        }
    }

    #[test]
    fn fixed_point_for_every_observer() {
        let model = NeuronModel::default_model();
        for kind in [
            ObserverKind::Centralized,
            ObserverKind::Distributed,
            ObserverKind::Redundant,
        ] {
            let r = integrate_trial(&model, &short(kind, MismatchConfig::none())).unwrap();
            assert!(r.rms_voltage_error <= 1e-6, "{kind:?}: {}", r.rms_voltage_error);
        }
    }

    #[test]
    fn synthetic_constant_error() {
        let model = NeuronModel::default_model();
        let hooks = TrialHooks {
            error_offset: 2.0,
            ..TrialHooks::default()
        };
        let r = integrate_trial_with(&model, &short(ObserverKind::Centralized, MismatchConfig::none()), hooks).unwrap();
        assert!((r.rms_voltage_error - 2.0).abs() < 1e-9);
    }

    #[test]
    fn rms_matches_undecimated_dump() {
        let model = NeuronModel::default_model();
        let hooks = TrialHooks {
            dump_errors: true,
            ..TrialHooks::default()
        };
        let r = integrate_trial_with(
            &model,
            &short(ObserverKind::Distributed, MismatchConfig::default()),
            hooks,
        )
        .unwrap();
        let dump = r.error_dump.as_ref().unwrap();
        assert_eq!(dump.len(), r.steps);
        assert_eq!(rms_from_errors(dump), r.rms_voltage_error);
        assert!(r.rms_voltage_error > 0.0);
    }

    #[test]
    fn trajectory_logging() {
        let model = NeuronModel::default_model();
        let r = integrate_trial(&model, &short(ObserverKind::Centralized, MismatchConfig::default())).unwrap();
        // 3000 steps, every 7th plus t = 0 and the final step.
        assert_eq!(r.trajectory.len(), 1 + 3000 / 7 + 1);
        assert_eq!(*r.trajectory.t.last().unwrap(), 300.0);
        assert_eq!(r.mismatch_echo.len(), 1);
        assert_eq!(r.mismatch_echo[0][0].len(), model.n_gates());
    }

    #[test]
    fn redundancy_must_match_kind() {
        let mut c = short(ObserverKind::Distributed, MismatchConfig::none());
        c.redundancy = Some(RedundancyGains::default());
        assert!(!c.validate().is_empty());
        let mut c = short(ObserverKind::Redundant, MismatchConfig::none());
        c.redundancy = None;
        assert!(!c.validate().is_empty());
    }

    #[test]
    fn divergence_reports_time() {
        let model = NeuronModel::default_model();
        let mut c = short(ObserverKind::Centralized, MismatchConfig::none());
        c.scenario.input = InputSpec {
            phases: vec![InputPhase {
                start: 0.0,
                mean: 1e308,
                amplitude: 0.0,
                correlation_time: 1.0,
            }],
            input_dt: 0.1,
            seed: 0,
        };
        match integrate_trial(&model, &c) {
            Err(Error::Divergence { time, .. }) => assert!(time <= 300.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn wall_time_not_serialized() {
        let model = NeuronModel::default_model();
        let r = integrate_trial(&model, &short(ObserverKind::Centralized, MismatchConfig::none())).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(!json.contains("wall_time"));
        let back: TrialResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back.rms_voltage_error, r.rms_voltage_error);
    }
}
