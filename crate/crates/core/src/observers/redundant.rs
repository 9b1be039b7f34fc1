//! Redundant observer: `N` particles per ionic-current block, each with its
//! own mismatched internal copy, coupled through a consensus term.
//!
//! ```text
//! dv_hat/dt       = sum_j sum_i Phi_j^i theta_j^i + a
//!                   + (gamma_0 + sum_j sum_i gamma_j Psi_j^i P_j^i Psi_j^i)(v - v_hat)
//! dtheta_j^i/dt   = gamma_j P_j^i Psi_j^i (v - v_hat) - beta (theta_j^i - theta_bar_j)
//! ```
//!
//! Filters and Riccati flows are per particle and identical to the
//! distributed observer. The leak block keeps a single particle. Each
//! particle estimates `mu_j / N`; [`Observer::estimates`] reports the block
//! means `theta_bar_j`.

use serde::{Deserialize, Serialize};

use super::distributed::{check_positive, project, ParticleModel};
use super::{
    filter_step, non_finite, DistributedGains, Observer, ObserverInit, ParticleState, StateVector, StepSample,
};
use crate::error::{Error, Result};
use crate::mismatch::MismatchSample;
use crate::model::{NeuronModel, LEAK, N_PARAMS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedundancyGains {
    /// Particles per ionic-current block.
    #[serde(rename = "N")]
    pub n: usize,
    /// Consensus gain.
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_beta() -> f64 {
    5e-5
}

impl Default for RedundancyGains {
    fn default() -> Self {
        Self {
            n: 3,
            beta: default_beta(),
        }
    }
}

impl RedundancyGains {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.n < 1 {
            errs.push("redundancy N must be >= 1".into());
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            errs.push(format!("redundancy beta must be >= 0 (got {})", self.beta));
        }
        errs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RedundantObserverState {
    pub v_hat: f64,
    /// `blocks[j][i]` is particle `i` of block `j`.
    pub blocks: Vec<Vec<ParticleState>>,
}

impl StateVector for RedundantObserverState {
    fn axpy(&mut self, a: f64, x: &Self) {
        self.v_hat += a * x.v_hat;
        for (sb, db) in self.blocks.iter_mut().zip(&x.blocks) {
            for (s, d) in sb.iter_mut().zip(db) {
                s.axpy(a, d);
            }
        }
    }

    fn is_finite(&self) -> bool {
        self.v_hat.is_finite() && self.blocks.iter().flatten().all(ParticleState::is_finite)
    }
}

/// Arithmetic mean of a non-empty slice.
pub fn empirical_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Contract("mean of an empty set".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

fn block_mean(particles: &[ParticleState]) -> f64 {
    particles.iter().map(|p| p.theta).sum::<f64>() / particles.len() as f64
}

#[derive(Debug, Clone)]
pub struct RedundantObserver {
    capacitance: f64,
    blocks: Vec<Vec<ParticleModel>>,
    gains: DistributedGains,
    redundancy: RedundancyGains,
    init: ObserverInit,
}

impl RedundantObserver {
    /// `mismatch[j][i]` perturbs particle `i` of block `j`. Every ionic block
    /// needs `N` samples and the leak block exactly one.
    pub fn new(
        model: &NeuronModel,
        mismatch: &[Vec<MismatchSample>],
        gains: DistributedGains,
        redundancy: RedundancyGains,
        init: ObserverInit,
    ) -> Result<Self> {
        let mut errs = gains.validate();
        errs.extend(redundancy.validate());
        errs.extend(init.validate());
        if mismatch.len() != N_PARAMS {
            errs.push(format!("need {N_PARAMS} blocks of samples, got {}", mismatch.len()));
        } else {
            for (j, b) in mismatch.iter().enumerate() {
                let want = if j == LEAK { 1 } else { redundancy.n };
                if b.len() != want {
                    errs.push(format!("block {j} needs {want} samples, got {}", b.len()));
                }
            }
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let blocks = mismatch
            .iter()
            .enumerate()
            .map(|(j, b)| {
                b.iter()
                    .map(|s| ParticleModel::new(model, j, s))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            capacitance: model.capacitance,
            blocks,
            gains,
            redundancy,
            init,
        })
    }

    pub fn redundancy(&self) -> RedundancyGains {
        self.redundancy
    }

    fn check_state(&self, s: &RedundantObserverState) -> Result<()> {
        if s.blocks.len() != self.blocks.len() {
            return Err(Error::Contract("redundant state has the wrong block count".into()));
        }
        for (j, (sb, mb)) in s.blocks.iter().zip(&self.blocks).enumerate() {
            if sb.len() != mb.len() {
                return Err(Error::Contract(format!("block {j} has the wrong particle count")));
            }
            for (p, m) in sb.iter().zip(mb) {
                if p.w_hat.len() != m.internal.dim() {
                    return Err(Error::Contract(format!(
                        "block {j} internal state has the wrong length"
                    )));
                }
                check_positive(p.p, j)?;
            }
        }
        Ok(())
    }
}

impl Observer for RedundantObserver {
    type State = RedundantObserverState;

    fn initial_state(&self, v0: f64) -> RedundantObserverState {
        let theta0 = self.init.theta0();
        RedundantObserverState {
            v_hat: v0,
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(j, mb)| {
                    let share = theta0[j] / mb.len() as f64;
                    mb.iter().map(|m| m.initial(v0, share, self.init.p0)).collect()
                })
                .collect(),
        }
    }

    fn rhs(&self, s: &RedundantObserverState, v: f64, u: f64) -> Result<RedundantObserverState> {
        self.check_state(s)?;
        let g = &self.gains;
        let beta = self.redundancy.beta;
        let c = self.capacitance;
        let err = v - s.v_hat;
        let mut drift = 0.0;
        let mut injection = g.gamma0;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (j, (mb, sb)) in self.blocks.iter().zip(&s.blocks).enumerate() {
            let mean = block_mean(sb);
            let mut out = Vec::with_capacity(sb.len());
            for (m, b) in mb.iter().zip(sb) {
                let phi = m.regressor(v, &b.w_hat, c);
                drift += phi * b.theta;
                injection += g.gamma[j] * b.psi * b.p * b.psi;
                let mut d = m.rhs(b, phi, v, err, g.gamma[j], g.alpha[j], g.quadratic(j));
                d.theta = project(b.theta, d.theta - beta * (b.theta - mean), g.project_nonnegative);
                out.push(d);
            }
            blocks.push(out);
        }
        Ok(RedundantObserverState {
            v_hat: drift + u / c + injection * err,
            blocks,
        })
    }

    fn step(&self, s: &mut RedundantObserverState, m: &StepSample) -> Result<()> {
        let g = &self.gains;
        let beta = self.redundancy.beta;
        let c = self.capacitance;
        let h = m.dt;
        let mut eta = s.v_hat;
        let mut forcing = m.u / c;
        let mut phis: Vec<Vec<f64>> = Vec::with_capacity(self.blocks.len());
        for (j, (mb, sb)) in self.blocks.iter().zip(s.blocks.iter_mut()).enumerate() {
            let mean = block_mean(sb);
            let mut row = Vec::with_capacity(sb.len());
            for (pm, b) in mb.iter().zip(sb.iter_mut()) {
                row.push(pm.regressor(m.v, &b.w_hat, c));
                eta -= b.psi * b.theta;
                let drift = -beta * (b.theta - mean);
                forcing += (g.gamma[j] - g.gamma0) * b.psi * b.theta - b.psi * drift;
                b.theta += h * drift;
            }
            phis.push(row);
        }
        let eta = filter_step(eta, forcing, g.gamma0, m);
        for (j, (mb, sb)) in self.blocks.iter().zip(s.blocks.iter_mut()).enumerate() {
            for ((pm, b), phi) in mb.iter().zip(sb.iter_mut()).zip(&phis[j]) {
                pm.advance_filters(b, *phi, m.v, h, g.gamma[j], g.alpha[j], g.quadratic(j));
                check_positive(b.p, j)?;
            }
        }
        let mut predicted = eta;
        let mut weight = 0.0;
        for (j, sb) in s.blocks.iter().enumerate() {
            for b in sb {
                predicted += b.psi * b.theta;
                weight += g.gamma[j] * b.p * b.psi * b.psi;
            }
        }
        let k = h * (m.v_next - predicted) / (1.0 + h * weight);
        let mut v_hat = eta;
        for (j, sb) in s.blocks.iter_mut().enumerate() {
            for b in sb.iter_mut() {
                b.theta += g.gamma[j] * b.p * b.psi * k;
                if g.project_nonnegative && b.theta < 0.0 {
                    b.theta = 0.0;
                }
                v_hat += b.psi * b.theta;
            }
        }
        s.v_hat = v_hat;
        if !s.v_hat.is_finite() || !s.blocks.iter().flatten().all(|b| b.theta.is_finite()) {
            return Err(non_finite("redundant estimate"));
        }
        Ok(())
    }

    fn v_hat(&self, s: &RedundantObserverState) -> f64 {
        s.v_hat
    }

    fn estimates(&self, s: &RedundantObserverState) -> [f64; N_PARAMS] {
        std::array::from_fn(|j| block_mean(&s.blocks[j]))
    }

    fn check_invariants(&self, s: &RedundantObserverState) -> Result<()> {
        for (j, b) in s.blocks.iter().enumerate() {
            for p in b {
                check_positive(p.p, j)?;
            }
        }
        Ok(())
    }

    fn consensus_residual(&self, s: &RedundantObserverState) -> Option<f64> {
        let beta = self.redundancy.beta;
        let worst = s
            .blocks
            .iter()
            .map(|b| {
                let mean = block_mean(b);
                b.iter().map(|p| -beta * (p.theta - mean)).sum::<f64>().abs()
            })
            .fold(0.0, f64::max);
        Some(worst)
    }

    fn particles(&self) -> usize {
        self.redundancy.n
    }
}

/// Vector field of the redundant observer.
pub fn redundant_rhs(
    model: &NeuronModel,
    mismatch: &[Vec<MismatchSample>],
    state: &RedundantObserverState,
    gains: DistributedGains,
    redundancy: RedundancyGains,
    v: f64,
    u: f64,
) -> Result<RedundantObserverState> {
    RedundantObserver::new(model, mismatch, gains, redundancy, ObserverInit::default())?.rhs(state, v, u)
}
