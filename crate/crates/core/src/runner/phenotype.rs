//! Firing-pattern classification from inter-spike intervals.
//!
//! Spikes are upward threshold crossings. Log-ISIs are split in two classes
//! by Otsu's criterion. A window is bursting when the split is strong (high
//! between-class variance share) and the long class is several times the
//! short one; it is tonic when the split is weak and ISIs are regular.

use serde::{Deserialize, Serialize};

use super::scenario::{generate_input, ramp_eval_unchecked, Scenario};
use crate::error::Result;
use crate::model::NeuronModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeThresholds {
    /// Spike detection level (mV).
    pub spike_threshold: f64,
    /// Minimum share of log-ISI variance explained by the two-class split.
    pub min_separation: f64,
    /// Minimum ratio of class means (long over short).
    pub min_ratio: f64,
    /// Maximum ISI coefficient of variation for tonic firing.
    pub max_tonic_cv: f64,
}

impl Default for PhenotypeThresholds {
    fn default() -> Self {
        Self {
            spike_threshold: -20.0,
            min_separation: 0.8,
            min_ratio: 4.0,
            max_tonic_cv: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phenotype {
    Silent,
    Tonic,
    Bursting,
    Irregular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsiStats {
    pub spikes: usize,
    pub mean_isi: f64,
    pub cv: f64,
    /// Between-class share of log-ISI variance at the Otsu split.
    pub separation: f64,
    /// Mean of the long class over mean of the short class.
    pub class_ratio: f64,
    /// Mean spikes per burst (runs of short ISIs plus one).
    pub spikes_per_burst: f64,
    pub phenotype: Phenotype,
}

/// Times of upward crossings of `threshold`, linearly interpolated.
pub fn spike_times(t0: f64, dt: f64, v: &[f64], threshold: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 1..v.len() {
        if v[k - 1] < threshold && v[k] >= threshold {
            let frac = (threshold - v[k - 1]) / (v[k] - v[k - 1]);
            out.push(t0 + (k as f64 - 1.0 + frac) * dt);
        }
    }
    out
}

/// Otsu split of sorted values: returns (index of first long element,
/// between-class variance share).
fn otsu(sorted: &[f64]) -> (usize, f64) {
    let n = sorted.len();
    let total: f64 = sorted.iter().sum();
    let mean = total / n as f64;
    let var_t = sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if var_t <= 0.0 {
        return (n, 0.0);
    }
    let mut best = (n, 0.0);
    let mut left = 0.0;
    for k in 1..n {
        left += sorted[k - 1];
        let w0 = k as f64 / n as f64;
        let m0 = left / k as f64;
        let m1 = (total - left) / (n - k) as f64;
        let between = w0 * (1.0 - w0) * (m0 - m1).powi(2);
        if between > best.1 {
            best = (k, between);
        }
    }
    (best.0, best.1 / var_t)
}

pub fn classify_spikes(spikes: &[f64], th: &PhenotypeThresholds) -> IsiStats {
    let isis: Vec<f64> = spikes.windows(2).map(|w| w[1] - w[0]).collect();
    if isis.len() < 3 {
        return IsiStats {
            spikes: spikes.len(),
            mean_isi: f64::NAN,
            cv: f64::NAN,
            separation: 0.0,
            class_ratio: 1.0,
            spikes_per_burst: 1.0,
            phenotype: Phenotype::Silent,
        };
    }
    let n = isis.len() as f64;
    let mean = isis.iter().sum::<f64>() / n;
    let sd = (isis.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let cv = sd / mean;
    let mut logs: Vec<f64> = isis.iter().map(|x| x.ln()).collect();
    logs.sort_by(f64::total_cmp);
    let (split, separation) = otsu(&logs);
    let (class_ratio, cut) = if split < logs.len() {
        let short = logs[..split].iter().sum::<f64>() / split as f64;
        let long = logs[split..].iter().sum::<f64>() / (logs.len() - split) as f64;
        ((long - short).exp(), (0.5 * (logs[split - 1] + logs[split])).exp())
    } else {
        (1.0, f64::INFINITY)
    };
    let bimodal = separation >= th.min_separation && class_ratio >= th.min_ratio;
    let spikes_per_burst = if bimodal {
        let mut bursts = 1usize;
        for &isi in &isis {
            if isi >= cut {
                bursts += 1;
            }
        }
        spikes.len() as f64 / bursts as f64
    } else {
        1.0
    };
    let phenotype = if bimodal && spikes_per_burst >= 2.0 {
        Phenotype::Bursting
    } else if !bimodal && cv <= th.max_tonic_cv {
        Phenotype::Tonic
    } else {
        Phenotype::Irregular
    };
    IsiStats {
        spikes: spikes.len(),
        mean_isi: mean,
        cv,
        separation,
        class_ratio,
        spikes_per_burst,
        phenotype,
    }
}

/// Membrane potential of the true neuron over the scenario at every step.
pub fn plant_voltage(model: &NeuronModel, scenario: &Scenario) -> Result<Vec<f64>> {
    let n = scenario.n_steps();
    let input = generate_input(&scenario.input, scenario.dt, n)?;
    let mut x = model.steady_state(scenario.v0);
    let mut dw = vec![0.0; x.w.len()];
    let mut out = Vec::with_capacity(n + 1);
    out.push(x.v);
    for (k, &u) in input.iter().enumerate() {
        let mu = ramp_eval_unchecked(&model.maximal_conductances, &scenario.ramps, k as f64 * scenario.dt);
        let dv = model.vector_field_into(&mu, x.v, &x.w, u, &mut dw);
        x.v += scenario.dt * dv;
        for (w, d) in x.w.iter_mut().zip(&dw) {
            *w += scenario.dt * d;
        }
        out.push(x.v);
    }
    Ok(out)
}

/// Classifies the true neuron's firing inside `[from, to)` ms.
pub fn window_phenotype(v: &[f64], dt: f64, from: f64, to: f64, th: &PhenotypeThresholds) -> IsiStats {
    let a = ((from / dt).round() as usize).min(v.len());
    let b = ((to / dt).round() as usize).min(v.len());
    let spikes = spike_times(a as f64 * dt, dt, &v[a..b], th.spike_threshold);
    classify_spikes(&spikes, th)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crossing_interpolated() {
        let v = [-30.0, -10.0, 0.0, -30.0, -25.0, -15.0];
        let s = spike_times(0.0, 1.0, &v, -20.0);
        assert_eq!(s.len(), 2);
        assert!((s[0] - 0.5).abs() < 1e-12);
        assert!((s[1] - 4.5).abs() < 1e-12);
    }

    #[test]
    fn regular_train_is_tonic() {
        let spikes: Vec<f64> = (0..50).map(|k| k as f64 * 12.0 + (k % 3) as f64).collect();
        let s = classify_spikes(&spikes, &PhenotypeThresholds::default());
        assert_eq!(s.phenotype, Phenotype::Tonic);
    }

    #[test]
    fn clustered_train_is_bursting() {
        let mut spikes = Vec::new();
        for b in 0..20 {
            for i in 0..3 {
                spikes.push(b as f64 * 200.0 + i as f64 * 8.0);
            }
        }
        let s = classify_spikes(&spikes, &PhenotypeThresholds::default());
        assert_eq!(s.phenotype, Phenotype::Bursting);
        assert!((s.spikes_per_burst - 3.0).abs() < 1e-12);
    }

    #[test]
    fn few_spikes_are_silent() {
        let s = classify_spikes(&[1.0, 2.0], &PhenotypeThresholds::default());
        assert_eq!(s.phenotype, Phenotype::Silent);
    }
}
