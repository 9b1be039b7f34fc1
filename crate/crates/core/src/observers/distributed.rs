//! Distributed observer: one scalar filter pair `(Psi_j, P_j)` and one
//! private copy of the internal dynamics per conductance.
//!
//! ```text
//! dv_hat/dt    = sum_j Phi_j(v, w_hat^j, u) theta_j + a
//!                + (gamma_0 + sum_j gamma_j Psi_j P_j Psi_j)(v - v_hat)
//! dw_hat^j/dt  = g_j(v, w_hat^j; p_j, q_j)
//! dtheta_j/dt  = gamma_j P_j Psi_j (v - v_hat)
//! dPsi_j/dt    = -gamma_j Psi_j + Phi_j
//! dP_j/dt      = alpha_j P_j - k_j P_j Psi_j Psi_j P_j
//! ```
//!
//! with `k_j = alpha_j` ([`RiccatiForm::Literal`], the default) or
//! `k_j = gamma_j` ([`RiccatiForm::GammaQuadratic`], the centralized form).

use serde::{Deserialize, Serialize};

use super::{block_scope, filter_step, non_finite, Observer, ObserverInit, StateVector, StepSample};
use crate::error::{Error, Result};
use crate::mismatch::{InternalCopy, MismatchSample};
use crate::model::{CurrentKind, NeuronModel, LEAK, N_PARAMS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiccatiForm {
    #[default]
    Literal,
    GammaQuadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistributedGains {
    pub gamma0: f64,
    /// One value per block; a scalar in configuration files applies to all.
    #[serde(deserialize_with = "per_block")]
    pub gamma: [f64; N_PARAMS],
    #[serde(deserialize_with = "per_block")]
    pub alpha: [f64; N_PARAMS],
    pub riccati: RiccatiForm,
    /// Clamp conductance estimates at zero. Off by default.
    pub project_nonnegative: bool,
}

fn per_block<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<[f64; N_PARAMS], D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Gain {
        Uniform(f64),
        Each([f64; N_PARAMS]),
    }
    Ok(match Gain::deserialize(d)? {
        Gain::Uniform(x) => [x; N_PARAMS],
        Gain::Each(v) => v,
    })
}

impl Default for DistributedGains {
    fn default() -> Self {
        Self {
            gamma0: 8.0,
            gamma: [8.0; N_PARAMS],
            alpha: [2e-4; N_PARAMS],
            riccati: RiccatiForm::Literal,
            project_nonnegative: false,
        }
    }
}

impl DistributedGains {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.gamma0 > 0.0) || !self.gamma0.is_finite() {
            errs.push(format!("gamma0 must be > 0 (got {})", self.gamma0));
        }
        for j in 0..N_PARAMS {
            if !(self.gamma[j] > 0.0) || !self.gamma[j].is_finite() {
                errs.push(format!("gamma[{j}] must be > 0 (got {})", self.gamma[j]));
            }
            if !(self.alpha[j] > 0.0) || !self.alpha[j].is_finite() {
                errs.push(format!("alpha[{j}] must be > 0 (got {})", self.alpha[j]));
            }
        }
        errs
    }

    #[inline]
    pub(crate) fn quadratic(&self, j: usize) -> f64 {
        match self.riccati {
            RiccatiForm::Literal => self.alpha[j],
            RiccatiForm::GammaQuadratic => self.gamma[j],
        }
    }
}

/// Estimator state attached to one copy of a block's internal dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub w_hat: Vec<f64>,
    pub theta: f64,
    pub psi: f64,
    pub p: f64,
}

impl ParticleState {
    pub(crate) fn axpy(&mut self, a: f64, x: &Self) {
        for (s, d) in self.w_hat.iter_mut().zip(&x.w_hat) {
            *s += a * d;
        }
        self.theta += a * x.theta;
        self.psi += a * x.psi;
        self.p += a * x.p;
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.theta.is_finite() && self.psi.is_finite() && self.p.is_finite() && self.w_hat.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributedObserverState {
    pub v_hat: f64,
    /// One entry per conductance, leak last (its `w_hat` is empty).
    pub blocks: Vec<ParticleState>,
}

impl StateVector for DistributedObserverState {
    fn axpy(&mut self, a: f64, x: &Self) {
        self.v_hat += a * x.v_hat;
        for (s, d) in self.blocks.iter_mut().zip(&x.blocks) {
            s.axpy(a, d);
        }
    }

    fn is_finite(&self) -> bool {
        self.v_hat.is_finite() && self.blocks.iter().all(ParticleState::is_finite)
    }
}

/// Internal-dynamics copy plus the constants needed for its regressor.
#[derive(Debug, Clone)]
pub(crate) struct ParticleModel {
    pub current: Option<CurrentKind>,
    pub reversal: f64,
    pub internal: InternalCopy,
}

impl ParticleModel {
    pub fn new(model: &NeuronModel, block: usize, sample: &MismatchSample) -> Result<Self> {
        Ok(Self {
            current: (block != LEAK).then(|| CurrentKind::ALL[block]),
            reversal: model.reversal(block),
            internal: InternalCopy::new(model, block_scope(block), sample)?,
        })
    }

    #[inline]
    pub fn regressor(&self, v: f64, w_hat: &[f64], capacitance: f64) -> f64 {
        let gate = match self.current {
            Some(kind) => self.internal.factor(kind, w_hat),
            None => 1.0,
        };
        -gate * (v - self.reversal) / capacitance
    }

    pub fn initial(&self, v0: f64, theta: f64, p0: f64) -> ParticleState {
        ParticleState {
            w_hat: self.internal.steady_state(v0),
            theta,
            psi: 0.0,
            p: p0,
        }
    }

    /// Derivative of everything but `theta`'s consensus part.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    pub fn rhs(
        &self,
        s: &ParticleState,
        phi: f64,
        v: f64,
        err: f64,
        gamma: f64,
        alpha: f64,
        quad: f64,
    ) -> ParticleState {
        ParticleState {
            w_hat: self.internal.rhs(v, &s.w_hat),
            theta: gamma * s.p * s.psi * err,
            psi: -gamma * s.psi + phi,
            p: alpha * s.p - quad * s.p * s.psi * s.psi * s.p,
        }
    }

    /// Advances `P` (information form), `Psi` (exact for a held regressor)
    /// and the internal copy. `theta` is left to the caller.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    pub fn advance_filters(&self, s: &mut ParticleState, phi: f64, v: f64, h: f64, gamma: f64, alpha: f64, quad: f64) {
        let info = (1.0 - alpha * h) / s.p + quad * h * s.psi * s.psi;
        s.p = 1.0 / info;
        let decay = (-gamma * h).exp();
        s.psi = s.psi * decay + phi * ((1.0 - decay) / gamma);
        self.internal.euler_step(v, &mut s.w_hat, h);
    }
}

pub(crate) fn check_positive(p: f64, block: usize) -> Result<()> {
    if p > 0.0 {
        Ok(())
    } else {
        Err(Error::Contract(format!("P of block {block} is not positive ({p})")))
    }
}

#[inline]
pub(crate) fn project(theta: f64, rate: f64, on: bool) -> f64 {
    if on && theta <= 0.0 && rate < 0.0 {
        0.0
    } else {
        rate
    }
}

#[derive(Debug, Clone)]
pub struct DistributedObserver {
    capacitance: f64,
    blocks: Vec<ParticleModel>,
    gains: DistributedGains,
    init: ObserverInit,
}

impl DistributedObserver {
    /// `mismatch[j]` perturbs block `j`'s private internal copy.
    pub fn new(
        model: &NeuronModel,
        mismatch: &[MismatchSample],
        gains: DistributedGains,
        init: ObserverInit,
    ) -> Result<Self> {
        let mut errs = gains.validate();
        errs.extend(init.validate());
        if mismatch.len() != N_PARAMS {
            errs.push(format!("need {N_PARAMS} block samples, got {}", mismatch.len()));
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let blocks = mismatch
            .iter()
            .enumerate()
            .map(|(j, s)| ParticleModel::new(model, j, s))
            .collect::<Result<_>>()?;
        Ok(Self {
            capacitance: model.capacitance,
            blocks,
            gains,
            init,
        })
    }

    pub fn gains(&self) -> &DistributedGains {
        &self.gains
    }

    fn check_state(&self, s: &DistributedObserverState) -> Result<()> {
        if s.blocks.len() != self.blocks.len() {
            return Err(Error::Contract("distributed state has the wrong block count".into()));
        }
        for (j, (b, m)) in s.blocks.iter().zip(&self.blocks).enumerate() {
            if b.w_hat.len() != m.internal.dim() {
                return Err(Error::Contract(format!(
                    "block {j} internal state has the wrong length"
                )));
            }
            check_positive(b.p, j)?;
        }
        Ok(())
    }
}

impl Observer for DistributedObserver {
    type State = DistributedObserverState;

    fn initial_state(&self, v0: f64) -> DistributedObserverState {
        let theta0 = self.init.theta0();
        DistributedObserverState {
            v_hat: v0,
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(j, m)| m.initial(v0, theta0[j], self.init.p0))
                .collect(),
        }
    }

    fn rhs(&self, s: &DistributedObserverState, v: f64, u: f64) -> Result<DistributedObserverState> {
        self.check_state(s)?;
        let g = &self.gains;
        let c = self.capacitance;
        let err = v - s.v_hat;
        let mut drift = 0.0;
        let mut injection = g.gamma0;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (j, (m, b)) in self.blocks.iter().zip(&s.blocks).enumerate() {
            let phi = m.regressor(v, &b.w_hat, c);
            drift += phi * b.theta;
            injection += g.gamma[j] * b.psi * b.p * b.psi;
            let mut d = m.rhs(b, phi, v, err, g.gamma[j], g.alpha[j], g.quadratic(j));
            d.theta = project(b.theta, d.theta, g.project_nonnegative);
            blocks.push(d);
        }
        Ok(DistributedObserverState {
            v_hat: drift + u / c + injection * err,
            blocks,
        })
    }

    fn step(&self, s: &mut DistributedObserverState, m: &StepSample) -> Result<()> {
        let g = &self.gains;
        let c = self.capacitance;
        let h = m.dt;
        let mut eta = s.v_hat;
        let mut forcing = m.u / c;
        let mut phis = [0.0; N_PARAMS];
        for (j, (pm, b)) in self.blocks.iter().zip(&s.blocks).enumerate() {
            phis[j] = pm.regressor(m.v, &b.w_hat, c);
            eta -= b.psi * b.theta;
            forcing += (g.gamma[j] - g.gamma0) * b.psi * b.theta;
        }
        let eta = filter_step(eta, forcing, g.gamma0, m);
        for (j, (pm, b)) in self.blocks.iter().zip(s.blocks.iter_mut()).enumerate() {
            pm.advance_filters(b, phis[j], m.v, h, g.gamma[j], g.alpha[j], g.quadratic(j));
            check_positive(b.p, j)?;
        }
        let mut predicted = eta;
        let mut weight = 0.0;
        for (j, b) in s.blocks.iter().enumerate() {
            predicted += b.psi * b.theta;
            weight += g.gamma[j] * b.p * b.psi * b.psi;
        }
        let k = h * (m.v_next - predicted) / (1.0 + h * weight);
        let mut v_hat = eta;
        for (j, b) in s.blocks.iter_mut().enumerate() {
            b.theta += g.gamma[j] * b.p * b.psi * k;
            if g.project_nonnegative && b.theta < 0.0 {
                b.theta = 0.0;
            }
            v_hat += b.psi * b.theta;
        }
        s.v_hat = v_hat;
        if !s.v_hat.is_finite() || !s.blocks.iter().all(|b| b.theta.is_finite()) {
            return Err(non_finite("distributed estimate"));
        }
        Ok(())
    }

    fn v_hat(&self, s: &DistributedObserverState) -> f64 {
        s.v_hat
    }

    fn estimates(&self, s: &DistributedObserverState) -> [f64; N_PARAMS] {
        std::array::from_fn(|j| s.blocks[j].theta)
    }

    fn check_invariants(&self, s: &DistributedObserverState) -> Result<()> {
        for (j, b) in s.blocks.iter().enumerate() {
            check_positive(b.p, j)?;
        }
        Ok(())
    }
}

/// Vector field of the distributed observer.
pub fn distributed_rhs(
    model: &NeuronModel,
    mismatch: &[MismatchSample],
    state: &DistributedObserverState,
    gains: DistributedGains,
    v: f64,
    u: f64,
) -> Result<DistributedObserverState> {
    DistributedObserver::new(model, mismatch, gains, ObserverInit::default())?.rhs(state, v, u)
}
