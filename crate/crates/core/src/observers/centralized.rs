//! Centralized RLS-type observer:
//!
//! ```text
//! dv_hat/dt   = Phi^T theta_hat + a + gamma (1 + Psi^T P Psi)(v - v_hat)
//! dw_hat/dt   = g(v, w_hat; p, q)
//! dtheta/dt   = gamma P Psi (v - v_hat)
//! dPsi/dt     = -gamma Psi + Phi
//! dP/dt       = alpha P - gamma P Psi Psi^T P
//! ```
//!
//! `Phi` and `a` are evaluated at `(v, w_hat, u)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{filter_step, non_finite, Observer, ObserverInit, StateVector, StepSample};
use crate::error::{Error, Result};
use crate::mismatch::{CopyScope, InternalCopy, MismatchSample};
use crate::model::{CurrentKind, NeuronModel, LEAK, N_PARAMS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentralizedGains {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_gamma() -> f64 {
    8.0
}

fn default_alpha() -> f64 {
    0.005
}

impl Default for CentralizedGains {
    fn default() -> Self {
        Self {
            gamma: default_gamma(),
            alpha: default_alpha(),
        }
    }
}

impl CentralizedGains {
    pub fn validate(&self) -> Vec<String> {
        if self.gamma > self.alpha && self.alpha > 0.0 && self.gamma.is_finite() {
            Vec::new()
        } else {
            vec![format!(
                "centralized gains need gamma > alpha > 0 (got gamma = {}, alpha = {})",
                self.gamma, self.alpha
            )]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedObserverState {
    pub v_hat: f64,
    pub w_hat: Vec<f64>,
    pub theta_hat: DVector<f64>,
    pub psi: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl StateVector for CentralizedObserverState {
    fn axpy(&mut self, a: f64, x: &Self) {
        self.v_hat += a * x.v_hat;
        for (s, d) in self.w_hat.iter_mut().zip(&x.w_hat) {
            *s += a * d;
        }
        self.theta_hat.axpy(a, &x.theta_hat, 1.0);
        self.psi.axpy(a, &x.psi, 1.0);
        self.p += &x.p * a;
    }

    fn is_finite(&self) -> bool {
        self.v_hat.is_finite()
            && self.w_hat.iter().all(|x| x.is_finite())
            && self.theta_hat.iter().all(|x| x.is_finite())
            && self.psi.iter().all(|x| x.is_finite())
            && self.p.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct CentralizedObserver {
    capacitance: f64,
    reversals: [f64; N_PARAMS],
    internal: InternalCopy,
    gains: CentralizedGains,
    init: ObserverInit,
}

impl CentralizedObserver {
    pub fn new(
        model: &NeuronModel,
        mismatch: &MismatchSample,
        gains: CentralizedGains,
        init: ObserverInit,
    ) -> Result<Self> {
        let mut errs = gains.validate();
        errs.extend(init.validate());
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        Ok(Self {
            capacitance: model.capacitance,
            reversals: std::array::from_fn(|j| model.reversal(j)),
            internal: InternalCopy::new(model, CopyScope::All, mismatch)?,
            gains,
            init,
        })
    }

    pub fn gains(&self) -> CentralizedGains {
        self.gains
    }

    pub fn internal(&self) -> &InternalCopy {
        &self.internal
    }

    /// Regressor `Phi(v, w_hat)` and `a = u / c`.
    pub fn regressor(&self, v: f64, w_hat: &[f64], u: f64) -> (DVector<f64>, f64) {
        let phi = DVector::from_fn(N_PARAMS, |j, _| {
            let gate = if j == LEAK {
                1.0
            } else {
                self.internal.factor(CurrentKind::ALL[j], w_hat)
            };
            -gate * (v - self.reversals[j]) / self.capacitance
        });
        (phi, u / self.capacitance)
    }

    fn check_state(&self, state: &CentralizedObserverState) -> Result<()> {
        if state.w_hat.len() != self.internal.dim()
            || state.theta_hat.len() != N_PARAMS
            || state.psi.len() != N_PARAMS
            || state.p.shape() != (N_PARAMS, N_PARAMS)
        {
            return Err(Error::Contract("centralized state has inconsistent dimensions".into()));
        }
        let scale = state.p.amax().max(f64::MIN_POSITIVE);
        for i in 0..N_PARAMS {
            for j in 0..i {
                if (state.p[(i, j)] - state.p[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::Contract(format!("P is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }

    /// Smallest eigenvalue of `P`.
    pub fn min_eigenvalue(p: &DMatrix<f64>) -> f64 {
        p.clone().symmetric_eigenvalues().min()
    }
}

impl Observer for CentralizedObserver {
    type State = CentralizedObserverState;

    fn initial_state(&self, v0: f64) -> CentralizedObserverState {
        CentralizedObserverState {
            v_hat: v0,
            w_hat: self.internal.steady_state(v0),
            theta_hat: DVector::from_column_slice(&self.init.theta0()),
            psi: DVector::zeros(N_PARAMS),
            p: DMatrix::identity(N_PARAMS, N_PARAMS) * self.init.p0,
        }
    }

    fn rhs(&self, s: &CentralizedObserverState, v: f64, u: f64) -> Result<CentralizedObserverState> {
        self.check_state(s)?;
        let CentralizedGains { gamma, alpha } = self.gains;
        let (phi, a) = self.regressor(v, &s.w_hat, u);
        let err = v - s.v_hat;
        let p_psi = &s.p * &s.psi;
        let injection = gamma * (1.0 + s.psi.dot(&p_psi));
        let v_hat = phi.dot(&s.theta_hat) + a + injection * err;
        let theta_hat = &p_psi * (gamma * err);
        let psi = &phi - &s.psi * gamma;
        let p = &s.p * alpha - (&p_psi * p_psi.transpose()) * gamma;
        Ok(CentralizedObserverState {
            v_hat,
            w_hat: self.internal.rhs(v, &s.w_hat),
            theta_hat,
            psi,
            p,
        })
    }

    fn step(&self, s: &mut CentralizedObserverState, m: &StepSample) -> Result<()> {
        let CentralizedGains { gamma, alpha } = self.gains;
        let h = m.dt;
        let (phi, a) = self.regressor(m.v, &s.w_hat, m.u);
        let eta = filter_step(s.v_hat - s.psi.dot(&s.theta_hat), a, gamma, m);

        // Information form: P_next^-1 = (1 - alpha h) P^-1 + gamma h Psi Psi^T,
        // inverted with Sherman-Morrison.
        let forget = 1.0 / (1.0 - alpha * h);
        let scaled_p_psi = &s.p * &s.psi * forget;
        let denom = 1.0 + gamma * h * s.psi.dot(&scaled_p_psi);
        s.p *= forget;
        s.p -= (&scaled_p_psi * scaled_p_psi.transpose()) * (gamma * h / denom);
        let sym = (&s.p + s.p.transpose()) * 0.5;
        s.p = sym;

        let decay = (-gamma * h).exp();
        s.psi = &s.psi * decay + &phi * ((1.0 - decay) / gamma);

        let p_psi = &s.p * &s.psi;
        let residual = m.v_next - eta - s.psi.dot(&s.theta_hat);
        let k = h * gamma * residual / (1.0 + h * gamma * s.psi.dot(&p_psi));
        s.theta_hat.axpy(k, &p_psi, 1.0);
        s.v_hat = eta + s.psi.dot(&s.theta_hat);

        self.internal.euler_step(m.v, &mut s.w_hat, h);

        if !s.v_hat.is_finite() || !s.theta_hat.iter().all(|x| x.is_finite()) {
            return Err(non_finite("centralized estimate"));
        }
        Ok(())
    }

    fn v_hat(&self, s: &CentralizedObserverState) -> f64 {
        s.v_hat
    }

    fn estimates(&self, s: &CentralizedObserverState) -> [f64; N_PARAMS] {
        std::array::from_fn(|j| s.theta_hat[j])
    }

    fn check_invariants(&self, s: &CentralizedObserverState) -> Result<()> {
        let lambda = Self::min_eigenvalue(&s.p);
        if lambda > 0.0 {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "P lost positive definiteness (min eigenvalue {lambda})"
            )))
        }
    }
}

/// Vector field of the centralized observer.
pub fn centralized_rhs(
    model: &NeuronModel,
    mismatch: &MismatchSample,
    state: &CentralizedObserverState,
    gains: CentralizedGains,
    v: f64,
    u: f64,
) -> Result<CentralizedObserverState> {
    CentralizedObserver::new(model, mismatch, gains, ObserverInit::default())?.rhs(state, v, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::rk4_step;
    use crate::model::neuron_rhs;

    fn observer(model: &NeuronModel) -> CentralizedObserver {
        CentralizedObserver::new(
            model,
            &MismatchSample::identity(model.n_gates()),
            CentralizedGains::default(),
            ObserverInit::default(),
        )
        .unwrap()
    }

    #[test]
    fn default_gains() {
        let g = CentralizedGains::default();
        assert_eq!((g.gamma, g.alpha), (8.0, 0.005));
        assert!(CentralizedGains { gamma: 1.0, alpha: 2.0 }.validate().len() == 1);
        assert!(CentralizedGains { gamma: 1.0, alpha: 0.0 }.validate().len() == 1);
    }

    #[test]
    fn zero_innovation_fixed_point() {
        let model = NeuronModel::default_model();
        let obs = observer(&model);
        let x = model.steady_state(-52.0);
        let mut s = obs.initial_state(x.v);
        s.theta_hat = DVector::from_column_slice(&model.maximal_conductances);
        s.psi = DVector::from_element(N_PARAMS, 0.3);
        let u = 1.7;
        let d = obs.rhs(&s, x.v, u).unwrap();
        let plant = neuron_rhs(&model, &x, u).unwrap();
        assert!((d.v_hat - plant.v).abs() <= 1e-12 * plant.v.abs().max(1.0));
        assert!(d.theta_hat.iter().all(|t| *t == 0.0));
        assert_eq!(d.w_hat, plant.w);
    }

    #[test]
    fn asymmetric_p_rejected() {
        let model = NeuronModel::default_model();
        let obs = observer(&model);
        let mut s = obs.initial_state(-60.0);
        s.p[(0, 1)] = 0.5;
        assert!(matches!(obs.rhs(&s, -60.0, 0.0), Err(Error::Contract(_))));
        let mut t = obs.initial_state(-60.0);
        t.p[(0, 1)] = 0.5;
        t.p[(1, 0)] = 0.5;
        assert!(obs.rhs(&t, -60.0, 0.0).is_ok());
    }

    #[test]
    fn output_injection_uses_measured_voltage() {
        let model = NeuronModel::default_model();
        let obs = observer(&model);
        let mut s = obs.initial_state(-60.0);
        s.v_hat = -55.0;
        let with_v = obs.rhs(&s, -60.0, 0.0).unwrap();
        let with_vhat = obs.rhs(&s, s.v_hat, 0.0).unwrap();
        assert_ne!(with_v.psi, with_vhat.psi);
        assert_ne!(with_v.w_hat, with_vhat.w_hat);
    }

    #[test]
    fn step_keeps_p_symmetric_positive() {
        let model = NeuronModel::default_model();
        let obs = observer(&model);
        let mut s = obs.initial_state(-60.0);
        let mut v = -60.0;
        for k in 0..2000 {
            let v_next = -60.0 + 30.0 * (0.05 * k as f64).sin();
            obs.step(
                &mut s,
                &StepSample {
                    v,
                    v_next,
                    u: 0.0,
                    dt: 0.1,
                },
            )
            .unwrap();
            v = v_next;
        }
        obs.check_invariants(&s).unwrap();
        assert_eq!(s.p, s.p.transpose());
    }

    #[test]
    fn step_matches_vector_field_for_small_steps() {
        // One step with a tiny dt agrees with an RK4 step of the vector field.
        let model = NeuronModel::default_model();
        let obs = observer(&model);
        let mut s = obs.initial_state(-60.0);
        s.psi = DVector::from_fn(N_PARAMS, |j, _| 0.1 * (j as f64 + 1.0));
        s.theta_hat = DVector::from_fn(N_PARAMS, |j, _| 0.5 + j as f64);
        s.v_hat = -58.0;
        let dt = 1e-6;
        let mut a = s.clone();
        obs.step(
            &mut a,
            &StepSample {
                v: -60.0,
                v_next: -60.0,
                u: 0.3,
                dt,
            },
        )
        .unwrap();
        let b = rk4_step(&s, dt, |x| obs.rhs(x, -60.0, 0.3)).unwrap();
        assert!((&a.p - &b.p).amax() < 1e-8);
        assert!((&a.psi - &b.psi).amax() < 1e-8);
        let d = (&a.theta_hat - &b.theta_hat).amax();
        assert!(d < 1e-8, "{d}");
        assert!((a.v_hat - b.v_hat).abs() < 1e-8);
    }
}
