//! Generic fixed-step integrators over [`StateVector`] types.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::observers::StateVector;

/// Stepping scheme for the coupled plant and observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Forward Euler plant; observer stepped with its semi-implicit update.
    #[default]
    SemiImplicit,
    /// Forward Euler on the joint vector field.
    Euler,
    /// Classical fourth-order Runge-Kutta on the joint vector field.
    Rk4,
}

/// `x + h f(x)`.
pub fn euler_step<S, F>(x: &S, h: f64, mut f: F) -> Result<S>
where
    S: StateVector,
    F: FnMut(&S) -> Result<S>,
{
    let k = f(x)?;
    let mut out = x.clone();
    out.axpy(h, &k);
    Ok(out)
}

/// One classical RK4 step of an autonomous field.
pub fn rk4_step<S, F>(x: &S, h: f64, mut f: F) -> Result<S>
where
    S: StateVector,
    F: FnMut(&S) -> Result<S>,
{
    rk4_step_t(x, 0.0, h, |_, s| f(s))
}

/// One classical RK4 step of `dx/dt = f(t, x)` from `t`.
pub fn rk4_step_t<S, F>(x: &S, t: f64, h: f64, mut f: F) -> Result<S>
where
    S: StateVector,
    F: FnMut(f64, &S) -> Result<S>,
{
    let k1 = f(t, x)?;
    let mut x2 = x.clone();
    x2.axpy(0.5 * h, &k1);
    let k2 = f(t + 0.5 * h, &x2)?;
    let mut x3 = x.clone();
    x3.axpy(0.5 * h, &k2);
    let k3 = f(t + 0.5 * h, &x3)?;
    let mut x4 = x.clone();
    x4.axpy(h, &k3);
    let k4 = f(t + h, &x4)?;
    let mut out = x.clone();
    out.axpy(h / 6.0, &k1);
    out.axpy(h / 3.0, &k2);
    out.axpy(h / 3.0, &k3);
    out.axpy(h / 6.0, &k4);
    Ok(out)
}

/// Pairs two states so plant and observer can be stepped jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct Joint<A, B>(pub A, pub B);

impl<A: StateVector, B: StateVector> StateVector for Joint<A, B> {
    fn axpy(&mut self, a: f64, x: &Self) {
        self.0.axpy(a, &x.0);
        self.1.axpy(a, &x.1);
    }

    fn is_finite(&self) -> bool {
        self.0.is_finite() && self.1.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scalar(pub f64);

impl StateVector for Scalar {
    fn axpy(&mut self, a: f64, x: &Self) {
        self.0 += a * x.0;
    }

    fn is_finite(&self) -> bool {
        self.0.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_exponential_decay() {
        let mut x = Scalar(1.0);
        let h = 0.01;
        for _ in 0..100 {
            x = rk4_step(&x, h, |s| Ok(Scalar(-s.0))).unwrap();
        }
        assert!((x.0 - (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn euler_is_first_order() {
        let run = |n: usize| {
            let h = 1.0 / n as f64;
            let mut x = Scalar(1.0);
            for _ in 0..n {
                x = euler_step(&x, h, |s| Ok(Scalar(-s.0))).unwrap();
            }
            (x.0 - (-1.0f64).exp()).abs()
        };
        let ratio = run(100) / run(200);
        assert!((ratio - 2.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn rk4_time_dependent() {
        // dx/dt = t, x(0) = 0 -> x(1) = 0.5 exactly for RK4.
        let mut x = Scalar(0.0);
        let mut t = 0.0;
        for _ in 0..10 {
            x = rk4_step_t(&x, t, 0.1, |t, _| Ok(Scalar(t))).unwrap();
            t += 0.1;
        }
        assert!((x.0 - 0.5).abs() < 1e-14);
    }
}
