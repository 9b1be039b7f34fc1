//! Randomized internal dynamics.
//!
//! Each voltage-gated equation of an observer copy gets its own time-constant
//! scale `p ~ U(1 - r, 1 + r)` and activation shift `q ~ U(-s, s)`:
//!
//! ```text
//! p tau(v) dx/dt = -x + sigma(v - q)
//! ```
//!
//! The plant keeps its nominal kinetics. Samples are drawn from ChaCha8
//! streams keyed by `(seed, copy)`, so the draws of one copy never depend on
//! how many other copies exist. Within a stream the order is `p_0, q_0, p_1,
//! q_1, ...` over the copy's gates (model layout order), followed by the
//! optional KCa shift.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CurrentKind, GateId, GateKind, GatingKinetics, NeuronModel, SigmoidParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MismatchConfig {
    /// Half-range of the time-constant scale factor.
    #[serde(default = "default_r")]
    pub r: f64,
    /// Half-range of the activation shift (mV).
    #[serde(default = "default_s")]
    pub s: f64,
    #[serde(default)]
    pub seed: u64,
    /// When set, the calcium activation of KCa is also shifted by
    /// `U(-h, h)` (calcium units). Off by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kca_shift_range: Option<f64>,
}

fn default_r() -> f64 {
    0.04
}

fn default_s() -> f64 {
    4.0
}

impl Default for MismatchConfig {
    fn default() -> Self {
        Self {
            r: default_r(),
            s: default_s(),
            seed: 0,
            kca_shift_range: None,
        }
    }
}

impl MismatchConfig {
    pub fn none() -> Self {
        Self {
            r: 0.0,
            s: 0.0,
            seed: 0,
            kca_shift_range: None,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.r >= 0.0 && self.r < 1.0) {
            errs.push(format!("mismatch.r must lie in [0, 1) (got {})", self.r));
        }
        if !(self.s >= 0.0) || !self.s.is_finite() {
            errs.push(format!("mismatch.s must be >= 0 (got {})", self.s));
        }
        if let Some(h) = self.kca_shift_range {
            if !(h >= 0.0) || !h.is_finite() {
                errs.push(format!("mismatch.kca_shift_range must be >= 0 (got {h})"));
            }
        }
        errs
    }

    /// Draws `count` (scale, shift) pairs from the stream of one copy.
    pub fn sample_stream(&self, stream: u64, count: usize) -> MismatchSample {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let mut p = Vec::with_capacity(count);
        let mut q = Vec::with_capacity(count);
        for _ in 0..count {
            let a: f64 = rng.random();
            let b: f64 = rng.random();
            p.push(1.0 - self.r + 2.0 * self.r * a);
            q.push(-self.s + 2.0 * self.s * b);
        }
        let kca_shift = self.kca_shift_range.map(|h| {
            let c: f64 = rng.random();
            -h + 2.0 * h * c
        });
        MismatchSample { p, q, kca_shift }
    }

    /// Sample for the `particle`-th copy of parameter block `block`.
    pub fn sample_copy(&self, block: usize, particle: usize, count: usize) -> MismatchSample {
        self.sample_stream(copy_stream(block, particle), count)
    }
}

/// Stream id for block `block`, particle `particle`. Stream 0 is the single
/// copy of the centralized observer.
pub fn copy_stream(block: usize, particle: usize) -> u64 {
    ((block as u64 + 1) << 32) | particle as u64
}

/// Realized perturbation for one copy of the internal dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchSample {
    /// Time-constant scale factors, one per gating equation.
    pub p: Vec<f64>,
    /// Activation shifts (mV), one per gating equation.
    pub q: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kca_shift: Option<f64>,
}

impl MismatchSample {
    /// Identity perturbation for `count` gates.
    pub fn identity(count: usize) -> Self {
        Self {
            p: vec![1.0; count],
            q: vec![0.0; count],
            kca_shift: None,
        }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Samples `count` gate perturbations from the configuration's base stream.
pub fn sample_mismatch(config: &MismatchConfig, count: usize) -> Result<MismatchSample> {
    if count == 0 {
        return Err(Error::Contract("mismatch sample count must be >= 1".into()));
    }
    Ok(config.sample_stream(0, count))
}

/// `dx/dt` of the perturbed gating equation `scale tau(v) dx/dt = -x + sigma(v - shift)`.
pub fn perturbed_gating_rhs(kinetics: &GatingKinetics, scale: f64, shift: f64, v: f64, x: f64) -> Result<f64> {
    if !(scale > 0.0) {
        return Err(Error::config(format!("time-constant scale must be > 0 (got {scale})")));
    }
    Ok(perturbed_rhs(kinetics, scale, shift, v, x))
}

#[inline]
fn perturbed_rhs(kinetics: &GatingKinetics, scale: f64, shift: f64, v: f64, x: f64) -> f64 {
    (kinetics.activation.eval(v - shift) - x) / (scale * kinetics.time_constant.eval(v))
}

/// Which part of the internal dynamics an observer copy carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CopyScope {
    /// Every gate plus the calcium pool (centralized observer).
    All,
    /// The gates a single current needs. KCa needs the calcium pool and the
    /// calcium-carrying gates that feed it.
    Current(CurrentKind),
    /// No internal state.
    Leak,
}

impl CopyScope {
    fn includes(self, g: GateId) -> bool {
        match self {
            CopyScope::All => true,
            CopyScope::Leak => false,
            CopyScope::Current(CurrentKind::KCa) => {
                matches!(g.current, CurrentKind::CaT | CurrentKind::CaL)
            }
            CopyScope::Current(k) => g.current == k,
        }
    }

    fn has_calcium(self) -> bool {
        matches!(self, CopyScope::All | CopyScope::Current(CurrentKind::KCa))
    }

    /// Number of gating equations in this scope.
    pub fn gate_count(self, model: &NeuronModel) -> usize {
        model.gate_layout().into_iter().filter(|g| self.includes(*g)).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateSlot {
    pub id: GateId,
    pub kinetics: GatingKinetics,
    pub scale: f64,
    pub shift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct CalciumCoupling {
    cat_m: Option<usize>,
    cat_h: Option<usize>,
    cal_m: Option<usize>,
    e_ca: f64,
    tau: f64,
    cat_coeff: f64,
    cal_coeff: f64,
}

/// One (possibly perturbed) copy of the internal dynamics `dw/dt = g(v, w; p, q)`.
///
/// State layout: the scoped gates in model order, then `[Ca]` if present.
#[derive(Debug, Clone, PartialEq)]
pub struct InternalCopy {
    slots: Vec<GateSlot>,
    calcium: Option<CalciumCoupling>,
    kca_activation: SigmoidParams,
    kca_shift: f64,
    /// Slot indices contributing to each ionic current's gating factor.
    members: [Vec<usize>; 5],
}

impl InternalCopy {
    pub fn new(model: &NeuronModel, scope: CopyScope, sample: &MismatchSample) -> Result<Self> {
        let ids: Vec<GateId> = model.gate_layout().into_iter().filter(|g| scope.includes(*g)).collect();
        if sample.p.len() != ids.len() || sample.q.len() != ids.len() {
            return Err(Error::config(format!(
                "mismatch sample has {} entries, copy needs {}",
                sample.p.len(),
                ids.len()
            )));
        }
        if let Some(bad) = sample.p.iter().find(|p| !(**p > 0.0)) {
            return Err(Error::config(format!("time-constant scale must be > 0 (got {bad})")));
        }
        let slots: Vec<GateSlot> = ids
            .iter()
            .zip(sample.p.iter().zip(&sample.q))
            .map(|(id, (p, q))| GateSlot {
                id: *id,
                kinetics: *model.gate_kinetics(*id),
                scale: *p,
                shift: *q,
            })
            .collect();
        let find = |current, gate| slots.iter().position(|s| s.id.current == current && s.id.gate == gate);
        let calcium = scope.has_calcium().then(|| CalciumCoupling {
            cat_m: find(CurrentKind::CaT, GateKind::M),
            cat_h: find(CurrentKind::CaT, GateKind::H),
            cal_m: find(CurrentKind::CaL, GateKind::M),
            e_ca: model.calcium_reversal(),
            tau: model.tau_ca,
            cat_coeff: model.ca_cat_coeff,
            cal_coeff: model.ca_cal_coeff,
        });
        let mut members: [Vec<usize>; 5] = Default::default();
        for (i, s) in slots.iter().enumerate() {
            members[s.id.current.index()].push(i);
        }
        Ok(Self {
            slots,
            calcium,
            kca_activation: model.kca_activation(),
            kca_shift: sample.kca_shift.unwrap_or(0.0),
            members,
        })
    }

    /// Unperturbed copy.
    pub fn nominal(model: &NeuronModel, scope: CopyScope) -> Self {
        let n = scope.gate_count(model);
        Self::new(model, scope, &MismatchSample::identity(n)).expect("identity sample fits scope")
    }

    pub fn slots(&self) -> &[GateSlot] {
        &self.slots
    }

    pub fn dim(&self) -> usize {
        self.slots.len() + usize::from(self.calcium.is_some())
    }

    pub fn has_calcium(&self) -> bool {
        self.calcium.is_some()
    }

    /// Steady state at `v` under this copy's kinetics.
    pub fn steady_state(&self, v: f64) -> Vec<f64> {
        let mut x: Vec<f64> = self
            .slots
            .iter()
            .map(|s| s.kinetics.activation.eval(v - s.shift))
            .collect();
        if let Some(ca) = &self.calcium {
            let drive = Self::calcium_drive(ca, &x, v);
            x.push(drive.max(0.0));
        }
        x
    }

    #[inline]
    fn calcium_drive(ca: &CalciumCoupling, x: &[f64], v: f64) -> f64 {
        let get = |i: Option<usize>| i.map(|i| x[i]).unwrap_or(0.0);
        -ca.cat_coeff * get(ca.cat_m) * get(ca.cat_h) * (v - ca.e_ca) - ca.cal_coeff * get(ca.cal_m) * (v - ca.e_ca)
    }

    /// Writes `dx/dt` for state `x` driven by voltage `v`.
    #[inline]
    pub fn rhs_into(&self, v: f64, x: &[f64], dx: &mut [f64]) {
        for (i, s) in self.slots.iter().enumerate() {
            dx[i] = perturbed_rhs(&s.kinetics, s.scale, s.shift, v, x[i]);
        }
        if let Some(ca) = &self.calcium {
            let n = self.slots.len();
            dx[n] = (Self::calcium_drive(ca, x, v) - x[n]) / ca.tau;
        }
    }

    pub fn rhs(&self, v: f64, x: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; x.len()];
        self.rhs_into(v, x, &mut dx);
        dx
    }

    /// Forward Euler step of the internal dynamics.
    #[inline]
    pub fn euler_step(&self, v: f64, x: &mut [f64], h: f64) {
        let n = self.slots.len();
        let ca_rate = self
            .calcium
            .as_ref()
            .map(|ca| (Self::calcium_drive(ca, x, v) - x[n]) / ca.tau);
        for (i, s) in self.slots.iter().enumerate() {
            x[i] += h * perturbed_rhs(&s.kinetics, s.scale, s.shift, v, x[i]);
        }
        if let Some(rate) = ca_rate {
            x[n] += h * rate;
        }
    }

    /// Conductance factor of `current` (gate product, or calcium activation for KCa).
    #[inline]
    pub fn factor(&self, current: CurrentKind, x: &[f64]) -> f64 {
        if current == CurrentKind::KCa {
            let ca = x[self.slots.len()];
            return self.kca_activation.eval(ca - self.kca_shift);
        }
        self.members[current.index()].iter().map(|&i| x[i]).product()
    }

    /// True when every gate of `x` lies in `[0, 1]` and `[Ca]` is non-negative.
    pub fn in_bounds(&self, x: &[f64]) -> bool {
        let n = self.slots.len();
        x[..n].iter().all(|g| (0.0..=1.0).contains(g)) && x[n..].iter().all(|c| *c >= 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{neuron_rhs, FullState};

    #[test]
    fn degenerate_ranges_are_exact() {
        let s = sample_mismatch(&MismatchConfig::none().with_seed(9), 50).unwrap();
        assert!(s.p.iter().all(|p| *p == 1.0));
        assert!(s.q.iter().all(|q| *q == 0.0));
    }

    #[test]
    fn default_ranges() {
        let cfg = MismatchConfig::default();
        assert_eq!((cfg.r, cfg.s), (0.04, 4.0));
        let s = sample_mismatch(&cfg.with_seed(3), 100_000).unwrap();
        assert!(s.p.iter().all(|p| (0.96..=1.04).contains(p)));
        assert!(s.q.iter().all(|q| (-4.0..=4.0).contains(q)));
    }

    #[test]
    fn uniform_mean() {
        // Mean of U(0.96, 1.04) is 1; Monte-Carlo standard error at 1e6 draws ~2.3e-5.
        let s = sample_mismatch(&MismatchConfig::default().with_seed(17), 1_000_000).unwrap();
        let mean = s.p.iter().sum::<f64>() / s.p.len() as f64;
        assert!((mean - 1.0).abs() < 1e-3, "mean {mean}");
        let qmean = s.q.iter().sum::<f64>() / s.q.len() as f64;
        assert!(qmean.abs() < 1e-2);
    }

    #[test]
    fn reproducible_and_prefix_stable() {
        let cfg = MismatchConfig::default().with_seed(42);
        let a = sample_mismatch(&cfg, 10).unwrap();
        let b = sample_mismatch(&cfg, 10).unwrap();
        assert_eq!(a, b);
        let longer = cfg.sample_copy(2, 0, 20);
        let shorter = cfg.sample_copy(2, 0, 10);
        assert_eq!(&longer.p[..10], &shorter.p[..]);
        // Other copies have independent draws.
        assert_ne!(cfg.sample_copy(2, 1, 10), shorter);
        assert_ne!(cfg.with_seed(43).sample_copy(2, 0, 10), shorter);
    }

    #[test]
    fn zero_count_rejected() {
        assert!(sample_mismatch(&MismatchConfig::default(), 0).is_err());
    }

    #[test]
    fn identity_perturbation_matches_nominal() {
        let model = NeuronModel::default_model();
        for id in model.gate_layout() {
            let kin = model.gate_kinetics(id);
            for v in [-90.0, -60.0, -35.0, 10.0] {
                for x in [0.0, 0.3, 1.0] {
                    assert_eq!(perturbed_gating_rhs(kin, 1.0, 0.0, v, x).unwrap(), kin.rhs(v, x));
                }
            }
        }
        // Whole internal vector field too.
        let copy = InternalCopy::nominal(&model, CopyScope::All);
        let st = model.steady_state(-50.0);
        let x: Vec<f64> = st.w.iter().map(|w| 0.5 * w + 0.1).collect();
        let full = neuron_rhs(&model, &FullState { v: -42.0, w: x.clone() }, 0.0).unwrap();
        assert_eq!(copy.rhs(-42.0, &x), full.w);
    }

    #[test]
    fn perturbed_fixed_point_and_scaling() {
        let model = NeuronModel::default_model();
        let kin = model.gate_kinetics(model.gate_layout()[0]);
        let (v, shift) = (-45.0, 3.0);
        let x_star = kin.activation.eval(v - shift);
        assert_eq!(perturbed_gating_rhs(kin, 1.02, shift, v, x_star).unwrap(), 0.0);
        let a = perturbed_gating_rhs(kin, 0.5, shift, v, 0.2).unwrap();
        let b = perturbed_gating_rhs(kin, 1.0, shift, v, 0.2).unwrap();
        assert!((a - 2.0 * b).abs() <= 1e-15 * a.abs());
        assert!(perturbed_gating_rhs(kin, 0.0, 0.0, v, 0.2).is_err());
        assert!(perturbed_gating_rhs(kin, -1.0, 0.0, v, 0.2).is_err());
    }

    #[test]
    fn scopes() {
        let model = NeuronModel::default_model();
        assert_eq!(CopyScope::All.gate_count(&model), 6);
        assert_eq!(CopyScope::Current(CurrentKind::Na).gate_count(&model), 2);
        assert_eq!(CopyScope::Current(CurrentKind::K).gate_count(&model), 1);
        assert_eq!(CopyScope::Current(CurrentKind::KCa).gate_count(&model), 3);
        assert_eq!(CopyScope::Leak.gate_count(&model), 0);
        let kca = InternalCopy::nominal(&model, CopyScope::Current(CurrentKind::KCa));
        assert_eq!(kca.dim(), 4);
        let leak = InternalCopy::nominal(&model, CopyScope::Leak);
        assert_eq!(leak.dim(), 0);
    }

    #[test]
    fn wrong_sample_length_rejected() {
        let model = NeuronModel::default_model();
        let s = MismatchSample::identity(3);
        assert!(InternalCopy::new(&model, CopyScope::Current(CurrentKind::Na), &s).is_err());
    }
}
