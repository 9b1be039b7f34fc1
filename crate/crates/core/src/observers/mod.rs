//! Adaptive observers for the maximal conductances.
//!
//! All three estimators are written two ways:
//!
//! * `rhs` returns the continuous-time vector field of the observer state,
//!   given the measured voltage `v` and input `u`. The generic integrators in
//!   [`crate::integrate`] step it with forward Euler or RK4.
//! * `step` advances one fixed step with the scheme the runner uses by
//!   default. It works in the filter coordinate `eta = v_hat - Psi^T theta_hat`,
//!   which obeys `d eta/dt = a + gamma_0 (v - eta)` plus terms that vanish
//!   for equal gains. `eta` and `Psi` are propagated exactly over the step
//!   (regressor and input held, `v` linear between samples), the Riccati flow
//!   is stepped in information form (`d/dt P^-1 = -alpha P^-1 + k Psi Psi^T`),
//!   and `theta_hat` takes an implicit step of the regression
//!   `v - eta = Psi^T theta`, whose denominator is at least one. The step is
//!   stable for any `dt` and, with zero mismatch and exact initialization,
//!   reproduces a forward-Euler plant up to rounding.
//!
//! Every filter and regressor consumes the measured `v`, never `v_hat`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mismatch::{copy_stream, CopyScope, MismatchConfig, MismatchSample};
use crate::model::{CurrentKind, FullState, NeuronModel, N_PARAMS};

mod centralized;
mod distributed;
mod redundant;

pub use centralized::{centralized_rhs, CentralizedGains, CentralizedObserver, CentralizedObserverState};
pub use distributed::{
    distributed_rhs, DistributedGains, DistributedObserver, DistributedObserverState, ParticleState, RiccatiForm,
};
pub use redundant::{empirical_mean, redundant_rhs, RedundancyGains, RedundantObserver, RedundantObserverState};

/// Minimal vector-space operations for fixed-step integration.
pub trait StateVector: Clone {
    /// `self += a * x`.
    fn axpy(&mut self, a: f64, x: &Self);
    fn is_finite(&self) -> bool;
}

impl StateVector for FullState {
    fn axpy(&mut self, a: f64, x: &Self) {
        self.v += a * x.v;
        for (s, d) in self.w.iter_mut().zip(&x.w) {
            *s += a * d;
        }
    }

    fn is_finite(&self) -> bool {
        self.v.is_finite() && self.w.iter().all(|x| x.is_finite())
    }
}

/// Measurements over one step `[t_n, t_n + dt]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSample {
    /// Measured voltage at `t_n`.
    pub v: f64,
    /// Measured voltage at `t_n + dt`.
    pub v_next: f64,
    /// Input held over the step.
    pub u: f64,
    pub dt: f64,
}

/// Initial-condition choices shared by all observers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverInit {
    /// Initial conductance estimates; zero when absent. Redundant blocks
    /// start every particle at `theta0_j / N`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<[f64; N_PARAMS]>,
    /// `P(0) = p0 I` (centralized) or `P_j(0) = p0` (distributed/redundant).
    #[serde(default = "one")]
    pub p0: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for ObserverInit {
    fn default() -> Self {
        Self { theta0: None, p0: 1.0 }
    }
}

impl ObserverInit {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.p0 > 0.0) || !self.p0.is_finite() {
            errs.push(format!("observer.init.p0 must be > 0 (got {})", self.p0));
        }
        if let Some(t) = &self.theta0 {
            if t.iter().any(|x| !x.is_finite()) {
                errs.push("observer.init.theta0 must be finite".into());
            }
        }
        errs
    }

    pub(crate) fn theta0(&self) -> [f64; N_PARAMS] {
        self.theta0.unwrap_or([0.0; N_PARAMS])
    }
}

/// Common interface the runner drives.
pub trait Observer: Sync {
    type State: StateVector + Send;

    /// Default initial state: `v_hat = v0`, internal states at their
    /// (perturbed) steady state at `v0`, filters at zero.
    fn initial_state(&self, v0: f64) -> Self::State;

    /// Continuous-time vector field.
    fn rhs(&self, state: &Self::State, v: f64, u: f64) -> Result<Self::State>;

    /// One semi-implicit step (see module docs).
    fn step(&self, state: &mut Self::State, sample: &StepSample) -> Result<()>;

    fn v_hat(&self, state: &Self::State) -> f64;

    /// One estimate per maximal conductance. Redundant observers report the
    /// block means, which estimate `mu_j / N`.
    fn estimates(&self, state: &Self::State) -> [f64; N_PARAMS];

    /// Checks positivity of the covariance-like matrices.
    fn check_invariants(&self, state: &Self::State) -> Result<()>;

    /// Largest per-block magnitude of the summed consensus contribution,
    /// when the observer has one.
    fn consensus_residual(&self, _state: &Self::State) -> Option<f64> {
        None
    }

    /// Number of particles per ionic-current block (1 unless redundant).
    fn particles(&self) -> usize {
        1
    }
}

/// Parameter block `j` of the distributed layouts: one per ionic current,
/// then the leak.
pub(crate) fn block_scope(j: usize) -> CopyScope {
    if j < CurrentKind::ALL.len() {
        CopyScope::Current(CurrentKind::ALL[j])
    } else {
        CopyScope::Leak
    }
}

/// Draws one mismatch sample per (block, particle). The leak block always has
/// a single copy with no gates.
pub fn sample_block_mismatch(
    model: &NeuronModel,
    config: &MismatchConfig,
    particles: usize,
) -> Vec<Vec<MismatchSample>> {
    (0..N_PARAMS)
        .map(|j| {
            let scope = block_scope(j);
            let count = scope.gate_count(model);
            let n = if scope == CopyScope::Leak { 1 } else { particles };
            (0..n)
                .map(|i| {
                    if count == 0 {
                        return MismatchSample::identity(0);
                    }
                    let mut s = config.sample_stream(copy_stream(j, i), count);
                    if scope != CopyScope::Current(CurrentKind::KCa) {
                        s.kca_shift = None;
                    }
                    s
                })
                .collect()
        })
        .collect()
}

/// Exact step of `d eta/dt = f + gamma (v(t) - eta)` with `f` held and `v`
/// linear between the two samples.
pub(crate) fn filter_step(eta: f64, f: f64, gamma: f64, m: &StepSample) -> f64 {
    let x = gamma * m.dt;
    let one_minus = -(-x).exp_m1();
    eta * (1.0 - one_minus) + one_minus * (f / gamma + m.v) + (m.v_next - m.v) * (1.0 - one_minus / x)
}

pub(crate) fn non_finite(what: &str) -> Error {
    Error::Contract(format!("{what} is not finite"))
}
