//! Conductance-based bursting neuron: five ionic currents, a leak and a
//! calcium pool.
//!
//! The membrane equation is
//!
//! ```text
//! c dv/dt = - sum_ion mu_ion * gate_ion * (v - E_ion) - mu_leak (v - E_leak) + u
//! ```
//!
//! where `gate_ion` is `m*h` for Na and CaT, `m` for K and CaL, and the
//! calcium activation `sigma_KCa([Ca])` for KCa. Every gating variable obeys
//! `tau(v) dx/dt = -x + sigma(v)` and the calcium pool obeys
//!
//! ```text
//! tau_Ca d[Ca]/dt = -k_T m_CaT h_CaT (v - E_Ca) - k_L m_CaL (v - E_Ca) - [Ca]
//! ```
//!
//! The maximal conductances `theta = (mu_Na, mu_K, mu_CaT, mu_CaL, mu_KCa,
//! mu_leak)` enter the voltage equation linearly, which gives the regressor
//! form `dv/dt = Phi(v, w, u)^T theta + a(v, w, u)` used by the observers.
//!
//! Current ordering is fixed: Na, K, CaT, CaL, KCa, then leak. Parameter
//! indices in every vector of length [`N_PARAMS`] follow that order.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of maximal conductances (five ionic currents plus leak).
pub const N_PARAMS: usize = 6;
/// Index of the leak conductance in `theta`.
pub const LEAK: usize = 5;
/// Schema version accepted by [`NeuronModel::from_toml_str`].
pub const MODEL_SCHEMA_VERSION: u32 = 1;

const DEFAULT_MODEL: &str = include_str!("../models/default.toml");

/// Ionic current identifiers, in parameter order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CurrentKind {
    Na,
    K,
    CaT,
    CaL,
    KCa,
}

impl CurrentKind {
    pub const ALL: [CurrentKind; 5] = [
        CurrentKind::Na,
        CurrentKind::K,
        CurrentKind::CaT,
        CurrentKind::CaL,
        CurrentKind::KCa,
    ];

    /// Position of this current's conductance in `theta`.
    pub fn index(self) -> usize {
        match self {
            CurrentKind::Na => 0,
            CurrentKind::K => 1,
            CurrentKind::CaT => 2,
            CurrentKind::CaL => 3,
            CurrentKind::KCa => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CurrentKind::Na => "Na",
            CurrentKind::K => "K",
            CurrentKind::CaT => "CaT",
            CurrentKind::CaL => "CaL",
            CurrentKind::KCa => "KCa",
        }
    }
}

impl fmt::Display for CurrentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Names of the entries of `theta`, in order.
pub const PARAM_NAMES: [&str; N_PARAMS] = ["Na", "K", "CaT", "CaL", "KCa", "leak"];

/// Parameter index from its name (`"Na"`, ..., `"leak"`).
pub fn param_index(name: &str) -> Option<usize> {
    PARAM_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Activation,
    Inactivation,
}

/// Logistic steady-state curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidParams {
    pub v_half: f64,
    pub slope: f64,
    pub direction: Direction,
}

impl SigmoidParams {
    pub fn activation(v_half: f64, slope: f64) -> Self {
        Self {
            v_half,
            slope,
            direction: Direction::Activation,
        }
    }

    pub fn inactivation(v_half: f64, slope: f64) -> Self {
        Self {
            v_half,
            slope,
            direction: Direction::Inactivation,
        }
    }

    #[inline]
    pub fn eval(&self, v: f64) -> f64 {
        let x = (v - self.v_half) / self.slope;
        match self.direction {
            Direction::Activation => 1.0 / (1.0 + (-x).exp()),
            Direction::Inactivation => 1.0 / (1.0 + x.exp()),
        }
    }
}

/// Evaluates a logistic activation or inactivation curve at `v`.
pub fn sigmoid_eval(params: &SigmoidParams, v: f64) -> f64 {
    params.eval(v)
}

/// Bell-shaped time constant `base + amplitude * exp(-((v - center) / width)^2)`.
///
/// Bounded in `[base, base + amplitude]`; the maximum is attained at `center`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeConstantParams {
    pub base: f64,
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
}

impl TimeConstantParams {
    pub fn constant(tau: f64) -> Self {
        Self {
            base: tau,
            amplitude: 0.0,
            center: 0.0,
            width: 1.0,
        }
    }

    #[inline]
    pub fn eval(&self, v: f64) -> f64 {
        let z = (v - self.center) / self.width;
        self.base + self.amplitude * (-z * z).exp()
    }

    pub fn lower(&self) -> f64 {
        self.base
    }

    pub fn upper(&self) -> f64 {
        self.base + self.amplitude
    }
}

pub fn tau_eval(params: &TimeConstantParams, v: f64) -> f64 {
    params.eval(v)
}

fn default_exponent() -> u32 {
    1
}

/// First-order kinetics of one gating variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatingKinetics {
    pub activation: SigmoidParams,
    pub time_constant: TimeConstantParams,
    #[serde(default = "default_exponent")]
    pub exponent: u32,
}

impl GatingKinetics {
    pub fn new(activation: SigmoidParams, time_constant: TimeConstantParams) -> Self {
        Self {
            activation,
            time_constant,
            exponent: 1,
        }
    }

    #[inline]
    pub fn steady_state(&self, v: f64) -> f64 {
        self.activation.eval(v)
    }

    /// `dx/dt = (sigma(v) - x) / tau(v)`.
    #[inline]
    pub fn rhs(&self, v: f64, x: f64) -> f64 {
        (self.activation.eval(v) - x) / self.time_constant.eval(v)
    }
}

/// Gate slot inside a current: activation (`m`) or inactivation (`h`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    M,
    H,
}

/// Identifies one gating equation of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GateId {
    pub current: CurrentKind,
    pub gate: GateKind,
}

impl fmt::Display for GateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = match self.gate {
            GateKind::M => "m",
            GateKind::H => "h",
        };
        write!(f, "{}_{}", g, self.current)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IonicCurrentSpec {
    pub kind: CurrentKind,
    pub reversal: f64,
    pub m_kinetics: Option<GatingKinetics>,
    pub h_kinetics: Option<GatingKinetics>,
    /// Only KCa is gated by calcium; its factor is `sigma_KCa([Ca])`.
    pub calcium_gated: bool,
    pub calcium_activation: Option<SigmoidParams>,
}

impl IonicCurrentSpec {
    pub fn gate(&self, gate: GateKind) -> Option<&GatingKinetics> {
        match gate {
            GateKind::M => self.m_kinetics.as_ref(),
            GateKind::H => self.h_kinetics.as_ref(),
        }
    }
}

/// Full parameter set of the single-compartment neuron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronModel {
    pub capacitance: f64,
    /// Always Na, K, CaT, CaL, KCa in that order.
    pub currents: Vec<IonicCurrentSpec>,
    pub maximal_conductances: [f64; N_PARAMS],
    pub leak_reversal: f64,
    pub tau_ca: f64,
    pub ca_cat_coeff: f64,
    pub ca_cal_coeff: f64,
}

/// Membrane voltage plus internal state `w = (gates..., [Ca])`.
///
/// Gates are stored in [`NeuronModel::gate_layout`] order with the calcium
/// concentration last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullState {
    pub v: f64,
    pub w: Vec<f64>,
}

impl NeuronModel {
    /// The model shipped in `models/default.toml`.
    pub fn default_model() -> Self {
        Self::from_toml_str(DEFAULT_MODEL).expect("bundled model file is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ModelFile = toml::from_str(text).map_err(|e| Error::Parse(format!("model file: {e}")))?;
        file.into_model()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("cannot read model file {}: {e}", path.display())]))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(&ModelFile::from_model(self)).expect("model serializes")
    }

    pub fn current(&self, kind: CurrentKind) -> &IonicCurrentSpec {
        &self.currents[kind.index()]
    }

    /// Reversal potential for parameter `j` (leak included).
    pub fn reversal(&self, j: usize) -> f64 {
        if j == LEAK {
            self.leak_reversal
        } else {
            self.currents[j].reversal
        }
    }

    pub fn calcium_reversal(&self) -> f64 {
        self.current(CurrentKind::CaT).reversal
    }

    pub fn kca_activation(&self) -> SigmoidParams {
        self.current(CurrentKind::KCa)
            .calcium_activation
            .expect("validated model has a KCa calcium activation")
    }

    /// Voltage-gated equations in storage order: for each current, `m` then `h`.
    pub fn gate_layout(&self) -> Vec<GateId> {
        let mut out = Vec::new();
        for c in &self.currents {
            for g in [GateKind::M, GateKind::H] {
                if c.gate(g).is_some() {
                    out.push(GateId {
                        current: c.kind,
                        gate: g,
                    });
                }
            }
        }
        out
    }

    pub fn gate_kinetics(&self, id: GateId) -> &GatingKinetics {
        self.current(id.current)
            .gate(id.gate)
            .expect("gate id comes from the layout")
    }

    pub fn n_gates(&self) -> usize {
        self.gate_layout().len()
    }

    /// Internal-state dimension: all gates plus the calcium pool.
    pub fn n_internal(&self) -> usize {
        self.n_gates() + 1
    }

    /// Smallest time constant over all gates; forward Euler keeps gates in
    /// `[0, 1]` when the step does not exceed it.
    pub fn min_time_constant(&self) -> f64 {
        self.gate_layout()
            .iter()
            .map(|g| self.gate_kinetics(*g).time_constant.lower())
            .fold(f64::INFINITY, f64::min)
    }

    /// Steady state of every gate at `v`, with the calcium pool at the level
    /// those gates would sustain.
    pub fn steady_state(&self, v: f64) -> FullState {
        let layout = self.gate_layout();
        let mut w: Vec<f64> = layout.iter().map(|g| self.gate_kinetics(*g).steady_state(v)).collect();
        let ca = self.calcium_drive(&layout, &w, v);
        w.push(ca.max(0.0));
        FullState { v, w }
    }

    fn calcium_drive(&self, layout: &[GateId], w: &[f64], v: f64) -> f64 {
        let find = |current, gate| {
            layout
                .iter()
                .position(|g| g.current == current && g.gate == gate)
                .map(|i| w[i])
                .unwrap_or(0.0)
        };
        let e_ca = self.calcium_reversal();
        let cat = find(CurrentKind::CaT, GateKind::M) * find(CurrentKind::CaT, GateKind::H);
        let cal = find(CurrentKind::CaL, GateKind::M);
        -self.ca_cat_coeff * cat * (v - e_ca) - self.ca_cal_coeff * cal * (v - e_ca)
    }

    fn check_dims(&self, w: &[f64]) -> Result<()> {
        let expected = self.n_internal();
        if w.len() != expected {
            return Err(Error::Config(vec![format!(
                "internal state has length {}, model expects {expected}",
                w.len()
            )]));
        }
        Ok(())
    }

    /// Vector field with an explicit conductance vector (used when the
    /// conductances are ramped).
    pub fn vector_field(&self, theta: &[f64; N_PARAMS], state: &FullState, u: f64) -> Result<FullState> {
        self.check_dims(&state.w)?;
        let mut dw = vec![0.0; state.w.len()];
        let dv = self.vector_field_into(theta, state.v, &state.w, u, &mut dw);
        Ok(FullState { v: dv, w: dw })
    }

    /// Allocation-free vector field; returns `dv/dt` and writes `dw/dt`.
    /// Dimensions must already be checked.
    pub(crate) fn vector_field_into(&self, theta: &[f64; N_PARAMS], v: f64, w: &[f64], u: f64, dw: &mut [f64]) -> f64 {
        let mut k = 0;
        let mut ionic = 0.0;
        let mut m_cat = 0.0;
        let mut h_cat = 0.0;
        let mut m_cal = 0.0;
        let ca = w[w.len() - 1];
        for spec in &self.currents {
            let mut factor = 1.0;
            if let Some(kin) = &spec.m_kinetics {
                let x = w[k];
                dw[k] = kin.rhs(v, x);
                factor *= x;
                if spec.kind == CurrentKind::CaT {
                    m_cat = x;
                } else if spec.kind == CurrentKind::CaL {
                    m_cal = x;
                }
                k += 1;
            }
            if let Some(kin) = &spec.h_kinetics {
                let x = w[k];
                dw[k] = kin.rhs(v, x);
                factor *= x;
                if spec.kind == CurrentKind::CaT {
                    h_cat = x;
                }
                k += 1;
            }
            if spec.calcium_gated {
                factor = spec.calcium_activation.expect("validated KCa").eval(ca);
            }
            ionic += theta[spec.kind.index()] * factor * (v - spec.reversal);
        }
        let e_ca = self.calcium_reversal();
        dw[k] = (-self.ca_cat_coeff * m_cat * h_cat * (v - e_ca) - self.ca_cal_coeff * m_cal * (v - e_ca) - ca)
            / self.tau_ca;
        let leak = theta[LEAK] * (v - self.leak_reversal);
        (-ionic - leak + u) / self.capacitance
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.capacitance > 0.0) {
            errs.push(format!("capacitance must be > 0 (got {})", self.capacitance));
        }
        if !(self.tau_ca > 0.0) {
            errs.push(format!("calcium.tau must be > 0 (got {})", self.tau_ca));
        }
        for (name, mu) in PARAM_NAMES.iter().zip(self.maximal_conductances.iter()) {
            if !(*mu > 0.0) {
                errs.push(format!("maximal conductance {name} must be > 0 (got {mu})"));
            }
        }
        if self.currents.len() != CurrentKind::ALL.len() {
            errs.push(format!("expected 5 ionic currents, got {}", self.currents.len()));
        }
        if self.currents.len() == CurrentKind::ALL.len()
            && self.currents[CurrentKind::CaT.index()].reversal != self.currents[CurrentKind::CaL.index()].reversal
        {
            errs.push("CaT and CaL must share the calcium reversal potential".to_string());
        }
        for (spec, kind) in self.currents.iter().zip(CurrentKind::ALL) {
            if spec.kind != kind {
                errs.push(format!("current slot {} holds {}", kind, spec.kind));
                continue;
            }
            let (need_m, need_h) = match kind {
                CurrentKind::Na | CurrentKind::CaT => (true, true),
                CurrentKind::K | CurrentKind::CaL => (true, false),
                CurrentKind::KCa => (false, false),
            };
            if spec.m_kinetics.is_some() != need_m {
                errs.push(format!("{kind}: activation kinetics must be {}", presence(need_m)));
            }
            if spec.h_kinetics.is_some() != need_h {
                errs.push(format!("{kind}: inactivation kinetics must be {}", presence(need_h)));
            }
            let ca_gated = kind == CurrentKind::KCa;
            if spec.calcium_gated != ca_gated || spec.calcium_activation.is_some() != ca_gated {
                errs.push(format!("{kind}: calcium gating must be {}", presence(ca_gated)));
            }
            for (label, kin) in [("m", spec.m_kinetics), ("h", spec.h_kinetics)] {
                let Some(kin) = kin else { continue };
                if kin.exponent != 1 {
                    errs.push(format!("{kind}.{label}: exponent must be 1 (got {})", kin.exponent));
                }
                if !(kin.activation.slope > 0.0) {
                    errs.push(format!("{kind}.{label}: slope must be > 0"));
                }
                let expected = if label == "m" {
                    Direction::Activation
                } else {
                    Direction::Inactivation
                };
                if kin.activation.direction != expected {
                    errs.push(format!("{kind}.{label}: direction must be {expected:?}"));
                }
                let tc = kin.time_constant;
                if !(tc.base > 0.0) || !(tc.amplitude >= 0.0) || !(tc.width > 0.0) {
                    errs.push(format!(
                        "{kind}.{label}: time constant needs base > 0, amplitude >= 0, width > 0"
                    ));
                }
            }
            if let Some(act) = spec.calcium_activation {
                if !(act.slope > 0.0) || act.direction != Direction::Activation {
                    errs.push(format!(
                        "{kind}: calcium activation needs slope > 0 and activation direction"
                    ));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

fn presence(required: bool) -> &'static str {
    if required {
        "present"
    } else {
        "absent"
    }
}

/// Evaluates `(dv/dt, dw/dt)` with the model's own conductances.
pub fn neuron_rhs(model: &NeuronModel, state: &FullState, u: f64) -> Result<FullState> {
    model.vector_field(&model.maximal_conductances, state, u)
}

/// Splits the voltage equation into `Phi^T theta + a`.
///
/// `Phi_j = -gate_j (v - E_j) / c` for each ionic current,
/// `Phi_leak = -(v - E_leak) / c` and `a = u / c`.
pub fn regressor_decompose(model: &NeuronModel, v: f64, w: &[f64], u: f64) -> Result<([f64; N_PARAMS], f64)> {
    model.check_dims(w)?;
    let layout = model.gate_layout();
    let ca = w[w.len() - 1];
    let mut phi = [0.0; N_PARAMS];
    for spec in &model.currents {
        let gate = if spec.calcium_gated {
            model.kca_activation().eval(ca)
        } else {
            layout
                .iter()
                .zip(w)
                .filter(|(g, _)| g.current == spec.kind)
                .map(|(_, x)| *x)
                .product()
        };
        phi[spec.kind.index()] = -gate * (v - spec.reversal) / model.capacitance;
    }
    phi[LEAK] = -(v - model.leak_reversal) / model.capacitance;
    Ok((phi, u / model.capacitance))
}

// ---------------------------------------------------------------------------
// File schema

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    schema_version: u32,
    capacitance: f64,
    leak_reversal: f64,
    maximal_conductances: ConductanceTable,
    calcium: CalciumTable,
    currents: CurrentTable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConductanceTable {
    #[serde(rename = "Na")]
    na: f64,
    #[serde(rename = "K")]
    k: f64,
    #[serde(rename = "CaT")]
    cat: f64,
    #[serde(rename = "CaL")]
    cal: f64,
    #[serde(rename = "KCa")]
    kca: f64,
    leak: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalciumTable {
    tau: f64,
    cat_coeff: f64,
    cal_coeff: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CurrentEntry {
    reversal: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    m: Option<GatingKinetics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    h: Option<GatingKinetics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    calcium_activation: Option<CalciumActivation>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalciumActivation {
    half: f64,
    slope: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CurrentTable {
    #[serde(rename = "Na")]
    na: CurrentEntry,
    #[serde(rename = "K")]
    k: CurrentEntry,
    #[serde(rename = "CaT")]
    cat: CurrentEntry,
    #[serde(rename = "CaL")]
    cal: CurrentEntry,
    #[serde(rename = "KCa")]
    kca: CurrentEntry,
}

impl ModelFile {
    fn into_model(self) -> Result<NeuronModel> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Config(vec![format!(
                "model schema_version {} is not supported (expected {MODEL_SCHEMA_VERSION})",
                self.schema_version
            )]));
        }
        let entries = [
            (CurrentKind::Na, self.currents.na),
            (CurrentKind::K, self.currents.k),
            (CurrentKind::CaT, self.currents.cat),
            (CurrentKind::CaL, self.currents.cal),
            (CurrentKind::KCa, self.currents.kca),
        ];
        let currents = entries
            .into_iter()
            .map(|(kind, e)| IonicCurrentSpec {
                kind,
                reversal: e.reversal,
                m_kinetics: e.m,
                h_kinetics: e.h,
                calcium_gated: e.calcium_activation.is_some(),
                calcium_activation: e.calcium_activation.map(|a| SigmoidParams::activation(a.half, a.slope)),
            })
            .collect();
        let g = self.maximal_conductances;
        let model = NeuronModel {
            capacitance: self.capacitance,
            currents,
            maximal_conductances: [g.na, g.k, g.cat, g.cal, g.kca, g.leak],
            leak_reversal: self.leak_reversal,
            tau_ca: self.calcium.tau,
            ca_cat_coeff: self.calcium.cat_coeff,
            ca_cal_coeff: self.calcium.cal_coeff,
        };
        model.validate()?;
        Ok(model)
    }

    fn from_model(model: &NeuronModel) -> Self {
        let entry = |kind: CurrentKind| {
            let c = model.current(kind);
            CurrentEntry {
                reversal: c.reversal,
                m: c.m_kinetics,
                h: c.h_kinetics,
                calcium_activation: c.calcium_activation.map(|a| CalciumActivation {
                    half: a.v_half,
                    slope: a.slope,
                }),
            }
        };
        let g = model.maximal_conductances;
        ModelFile {
            schema_version: MODEL_SCHEMA_VERSION,
            capacitance: model.capacitance,
            leak_reversal: model.leak_reversal,
            maximal_conductances: ConductanceTable {
                na: g[0],
                k: g[1],
                cat: g[2],
                cal: g[3],
                kca: g[4],
                leak: g[5],
            },
            calcium: CalciumTable {
                tau: model.tau_ca,
                cat_coeff: model.ca_cat_coeff,
                cal_coeff: model.ca_cal_coeff,
            },
            currents: CurrentTable {
                na: entry(CurrentKind::Na),
                k: entry(CurrentKind::K),
                cat: entry(CurrentKind::CaT),
                cal: entry(CurrentKind::CaL),
                kca: entry(CurrentKind::KCa),
            },
        }
    }
}
