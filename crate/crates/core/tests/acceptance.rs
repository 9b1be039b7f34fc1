//! Acceptance checks, run in order by a plain `main` so that every check
//! prints its `PASS`/`FAIL` line. Hard failures make the target fail;
//! criterion 3 only warns.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use neuroest::integrate::rk4_step;
use neuroest::mismatch::{MismatchConfig, MismatchSample};
use neuroest::model::{neuron_rhs, regressor_decompose, FullState, NeuronModel, N_PARAMS};
use neuroest::observers::{
    sample_block_mismatch, CentralizedGains, CentralizedObserver, DistributedGains, DistributedObserver, Observer,
    ObserverInit, RedundancyGains, RedundantObserver, StepSample,
};
use neuroest::runner::{
    generate_input, integrate_trial, integrate_trial_with, plant_voltage, window_phenotype, ObserverKind, Phenotype,
    PhenotypeThresholds, Scenario, TrialConfig, TrialHooks,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CAL: usize = 3;
const KCA: usize = 4;
const LEAK: usize = 5;

fn report(id: &str, ok: bool, detail: impl std::fmt::Display) {
    println!("criterion {id}: {} {detail}", if ok { "PASS" } else { "FAIL" });
}

fn model() -> NeuronModel {
    NeuronModel::default_model()
}

/// True maximal conductances at `t`, straight from the ramp endpoints.
fn truth_at(model: &NeuronModel, scenario: &Scenario, t: f64) -> [f64; N_PARAMS] {
    let mut mu = model.maximal_conductances;
    for r in &scenario.ramps {
        let j = if r.param == "CaL" { CAL } else { KCA };
        mu[j] = if t <= r.start {
            r.from
        } else if t >= r.end {
            r.to
        } else {
            r.from + (r.to - r.from) * (t - r.start) / (r.end - r.start)
        };
    }
    mu
}

fn criterion_1_no_mismatch_convergence() {
    let model = model();
    let config = TrialConfig {
        mismatch: MismatchConfig::none(),
        ..TrialConfig::default()
    };
    let started = Instant::now();
    let result = integrate_trial(&model, &config).unwrap();
    let elapsed = started.elapsed();
    let sc = &config.scenario;
    let tr = &result.trajectory;
    let windows = [(500.0, 3000.0), (7500.0, sc.duration)];
    let mut worst_err = 0.0f64;
    let mut worst_rel = 0.0f64;
    let mut worst_param = "";
    let mut checked = 0;
    for i in 0..tr.len() {
        let t = tr.t[i];
        if !windows.iter().any(|(a, b)| t >= *a && t <= *b) {
            continue;
        }
        checked += 1;
        worst_err = worst_err.max((tr.v[i] - tr.v_hat[i]).abs());
        let mu = truth_at(&model, sc, t);
        for j in 0..N_PARAMS {
            let rel = (tr.estimates[i][j] - mu[j]).abs() / mu[j];
            if rel > worst_rel {
                worst_rel = rel;
                worst_param = neuroest::model::PARAM_NAMES[j];
            }
        }
    }
    let ok = worst_err < 0.05 && worst_rel < 0.02 && elapsed < Duration::from_secs(60) && checked > 1000;
    report(
        "1",
        ok,
        format!(
            "max |v - v_hat| = {worst_err:.3e} mV (< 0.05), max relative estimate error = {:.3}% on {worst_param} (< 2%), \
             {checked} logged steps, trial time {:.2} s (< 60 s)",
            100.0 * worst_rel,
            elapsed.as_secs_f64()
        ),
    );
    assert!(ok);
}

struct SweepRun {
    rows: Vec<(String, f64)>,
    summary: String,
    elapsed: Duration,
}

fn sweep_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/sweep.toml")
}

fn run_sweep(out: &Path) -> SweepRun {
    let started = Instant::now();
    let code = neuroest::cli::run_cli([
        "neuroest",
        "sweep",
        "--config",
        sweep_config().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let elapsed = started.elapsed();
    assert_eq!(code, 0, "sweep failed");
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut reader = csv::Reader::from_reader(summary.as_bytes());
    let rows = reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[6].parse::<f64>().unwrap())
        })
        .collect();
    SweepRun { rows, summary, elapsed }
}

fn first_sweep() -> &'static SweepRun {
    static RUN: OnceLock<SweepRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        run_sweep(dir.path())
    })
}

fn sweep_means() -> [f64; 4] {
    let rows = &first_sweep().rows;
    let labels: Vec<&str> = rows.iter().map(|r| r.0.as_str()).collect();
    assert_eq!(labels, ["centralized", "distributed", "redundant N=3", "redundant N=9"]);
    [rows[0].1, rows[1].1, rows[2].1, rows[3].1]
}

fn criterion_2_table_ordering() {
    let [c, d, n3, n9] = sweep_means();
    let ok = c > d && d > n3 && n3 >= n9 && c >= 5.0 * d;
    report(
        "2",
        ok,
        format!(
            "mean rms centralized {c:.4} > distributed {d:.4} > N=3 {n3:.4} >= N=9 {n9:.4}; \
             centralized/distributed = {:.1} (>= 5)",
            c / d
        ),
    );
    assert!(ok);
}

fn criterion_3_table_magnitudes() {
    let [c, d, n3, n9] = sweep_means();
    let checks = [
        ("centralized in [0.4, 3.5]", (0.4..=3.5).contains(&c), c),
        ("distributed in [0.02, 0.3]", (0.02..=0.3).contains(&d), d),
        ("N=3 in [0.008, 0.1]", (0.008..=0.1).contains(&n3), n3),
        ("N=9 <= N=3", n9 <= n3, n9),
    ];
    let ok = checks.iter().all(|c| c.1);
    let detail: Vec<String> = checks
        .iter()
        .map(|(what, pass, v)| format!("{what}: {v:.4}{}", if *pass { "" } else { " (outside)" }))
        .collect();
    // Magnitude misses are reported as warnings only.
    report(
        "3",
        ok,
        format!("{}{}", detail.join("; "), if ok { "" } else { " [warning]" }),
    );
}

fn criterion_4_reduction_equivalence() {
    let model = model();
    let base = TrialConfig {
        trial_seed: 11,
        mismatch: MismatchConfig::default().with_seed(11),
        log_decimation: 1,
        ..TrialConfig::default()
    };
    let mut dist = base.clone();
    dist.observer.kind = ObserverKind::Distributed;
    let mut red = base;
    red.observer.kind = ObserverKind::Redundant;
    red.redundancy = Some(RedundancyGains { n: 1, beta: 0.0 });
    let hooks = TrialHooks {
        dump_errors: true,
        ..TrialHooks::default()
    };
    let a = integrate_trial_with(&model, &dist, hooks).unwrap();
    let b = integrate_trial_with(&model, &red, hooks).unwrap();
    let bits = |x: &[f64]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let est_bits = |e: &[[f64; N_PARAMS]]| e.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
    let same = a.rms_voltage_error.to_bits() == b.rms_voltage_error.to_bits()
        && bits(a.error_dump.as_deref().unwrap()) == bits(b.error_dump.as_deref().unwrap())
        && bits(&a.trajectory.v_hat) == bits(&b.trajectory.v_hat)
        && est_bits(&a.trajectory.estimates) == est_bits(&b.trajectory.estimates)
        && a.mismatch_echo == b.mismatch_echo;
    report(
        "4",
        same,
        format!(
            "{} steps, rms distributed {} vs redundant N=1 {} (bit-identical trajectories: {same})",
            a.steps, a.rms_voltage_error, b.rms_voltage_error
        ),
    );
    assert!(same);
}

fn criterion_5_consensus_mean_preservation() {
    let model = model();
    let mut config = TrialConfig {
        trial_seed: 5,
        mismatch: MismatchConfig::default().with_seed(5),
        redundancy: Some(RedundancyGains { n: 9, beta: 5e-5 }),
        ..TrialConfig::default()
    };
    config.observer.kind = ObserverKind::Redundant;
    let hooks = TrialHooks {
        track_consensus: true,
        ..TrialHooks::default()
    };
    let result = integrate_trial_with(&model, &config, hooks).unwrap();
    let runner_max = result.max_consensus_residual.unwrap();

    // Independent route: drive the observer with the plant trace and sum the
    // consensus terms here.
    let sc = &config.scenario;
    let v = plant_voltage(&model, sc).unwrap();
    let u = generate_input(&sc.input, sc.dt, sc.n_steps()).unwrap();
    let blocks = sample_block_mismatch(&model, &config.mismatch, 9);
    let red = config.redundancy.unwrap();
    let obs = RedundantObserver::new(&model, &blocks, config.observer.distributed, red, config.observer.init).unwrap();
    let mut s = obs.initial_state(sc.v0);
    let mut oracle_max = 0.0f64;
    for k in 0..sc.n_steps() {
        obs.step(
            &mut s,
            &StepSample {
                v: v[k],
                v_next: v[k + 1],
                u: u[k],
                dt: sc.dt,
            },
        )
        .unwrap();
        for block in &s.blocks {
            let mean = block.iter().map(|p| p.theta).sum::<f64>() / block.len() as f64;
            let sum: f64 = block.iter().map(|p| -red.beta * (p.theta - mean)).sum();
            oracle_max = oracle_max.max(sum.abs());
        }
    }
    let ok = runner_max <= 1e-14 && oracle_max <= 1e-14;
    report(
        "5",
        ok,
        format!(
            "max per-block consensus sum over {} steps: runner {runner_max:.2e}, test oracle {oracle_max:.2e} (<= 1e-14)",
            sc.n_steps()
        ),
    );
    assert!(ok);
}

fn hold(v: f64, dt: f64) -> StepSample {
    StepSample {
        v,
        v_next: v,
        u: 0.0,
        dt,
    }
}

fn identity_blocks(model: &NeuronModel) -> Vec<MismatchSample> {
    sample_block_mismatch(model, &MismatchConfig::none(), 1)
        .into_iter()
        .map(|mut b| b.remove(0))
        .collect()
}

fn criterion_6_filter_oracles() {
    let model = model();
    let vc = -40.0;
    let gamma = 8.0;
    // The leak regressor depends on v only, so holding v holds Phi.
    let phi_leak = -(vc - model.leak_reversal) / model.capacitance;
    let t_end = 3.0 / gamma;
    let psi_exact = phi_leak / gamma * (1.0 - (-gamma * t_end).exp());

    let dist = DistributedObserver::new(
        &model,
        &identity_blocks(&model),
        DistributedGains::default(),
        ObserverInit::default(),
    )
    .unwrap();
    let n = 100;
    let mut s = dist.initial_state(vc);
    for _ in 0..n {
        dist.step(&mut s, &hold(vc, t_end / n as f64)).unwrap();
    }
    let psi_step = s.blocks[LEAK].psi;
    let mut s = dist.initial_state(vc);
    let h = t_end / 1000.0;
    for _ in 0..1000 {
        s = rk4_step(&s, h, |x| dist.rhs(x, vc, 0.0)).unwrap();
    }
    let psi_rk4 = s.blocks[LEAK].psi;
    let psi_err = ((psi_step - psi_exact) / psi_exact)
        .abs()
        .max(((psi_rk4 - psi_exact) / psi_exact).abs());

    // Distributed: P_j -> 1 / psi^2 with time constant 1 / alpha_j.
    let alpha_d = DistributedGains::default().alpha[LEAK];
    let horizon = 10.0 / alpha_d;
    let psi_inf = phi_leak / gamma;
    let p_dist_exact = 1.0 / (psi_inf * psi_inf);
    let dt = 0.5;
    let mut s = dist.initial_state(vc);
    for _ in 0..(horizon / dt) as usize {
        dist.step(&mut s, &hold(vc, dt)).unwrap();
    }
    let p_dist_step = s.blocks[LEAK].p;
    let mut s = dist.initial_state(vc);
    let h = 0.1;
    for _ in 0..(horizon / h) as usize {
        s = rk4_step(&s, h, |x| dist.rhs(x, vc, 0.0)).unwrap();
    }
    let p_dist_rk4 = s.blocks[LEAK].p;
    let p_dist_err = ((p_dist_step - p_dist_exact) / p_dist_exact)
        .abs()
        .max(((p_dist_rk4 - p_dist_exact) / p_dist_exact).abs());

    // Centralized: along the regressor direction the flow is the scalar
    // p' = alpha p - gamma p^2 psi^2, equilibrium alpha / (gamma psi^2).
    let gains = CentralizedGains::default();
    let cent = CentralizedObserver::new(
        &model,
        &MismatchSample::identity(model.n_gates()),
        gains,
        ObserverInit::default(),
    )
    .unwrap();
    let w = cent.internal().steady_state(vc);
    let (phi, _) = cent.regressor(vc, &w, 0.0);
    let psi = &phi / gains.gamma;
    let psi2 = psi.norm_squared();
    let p_cent_exact = gains.alpha / (gains.gamma * psi2);
    let p_along = |p: &nalgebra::DMatrix<f64>, psi: &DVector<f64>| -> f64 {
        let info = p.clone().try_inverse().unwrap();
        psi.norm_squared() / (psi.transpose() * info * psi)[(0, 0)]
    };
    let horizon = 10.0 / gains.alpha;
    let dt = 0.1;
    let mut s = cent.initial_state(vc);
    for _ in 0..(horizon / dt) as usize {
        cent.step(&mut s, &hold(vc, dt)).unwrap();
    }
    let p_cent_step = p_along(&s.p, &s.psi);
    let mut s = cent.initial_state(vc);
    let h = 0.05;
    for _ in 0..(horizon / h) as usize {
        s = rk4_step(&s, h, |x| cent.rhs(x, vc, 0.0)).unwrap();
    }
    let p_cent_rk4 = p_along(&s.p, &s.psi);
    let p_cent_err = ((p_cent_step - p_cent_exact) / p_cent_exact)
        .abs()
        .max(((p_cent_rk4 - p_cent_exact) / p_cent_exact).abs());

    let ok = psi_err <= 1e-6 && p_dist_err <= 1e-3 && p_cent_err <= 1e-3;
    report(
        "6",
        ok,
        format!(
            "Psi(3/gamma) rel. error {psi_err:.2e} (<= 1e-6); distributed P vs 1/psi^2 = {p_dist_exact:.6}: {p_dist_err:.2e}; \
             centralized P vs alpha/(gamma psi^2) = {p_cent_exact:.3e}: {p_cent_err:.2e} (<= 1e-3)"
        ),
    );
    assert!(ok);
}

fn criterion_7_regressor_consistency() {
    let model = model();
    let cent = CentralizedObserver::new(
        &model,
        &MismatchSample::identity(model.n_gates()),
        CentralizedGains::default(),
        ObserverInit::default(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ng = model.n_gates();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let v = rng.random_range(-90.0..50.0);
        let mut w: Vec<f64> = (0..ng).map(|_| rng.random_range(0.0..1.0)).collect();
        w.push(rng.random_range(0.0..5.0));
        let u = rng.random_range(-5.0..5.0);
        let x = FullState { v, w };
        let target = neuron_rhs(&model, &x, u).unwrap().v;
        let (phi, a) = regressor_decompose(&model, v, &x.w, u).unwrap();
        let via_model: f64 = phi
            .iter()
            .zip(&model.maximal_conductances)
            .map(|(p, m)| p * m)
            .sum::<f64>()
            + a;
        let (phi_obs, a_obs) = cent.regressor(v, &x.w, u);
        let via_observer: f64 = phi_obs
            .iter()
            .zip(&model.maximal_conductances)
            .map(|(p, m)| p * m)
            .sum::<f64>()
            + a_obs;
        let scale = target.abs().max(1e-300);
        worst = worst
            .max((via_model - target).abs() / scale)
            .max((via_observer - target).abs() / scale);
    }
    let ok = worst <= 1e-12;
    report(
        "7",
        ok,
        format!("max relative mismatch over 1000 random states: {worst:.2e} (<= 1e-12)"),
    );
    assert!(ok);
}

fn criterion_8_scenario_phenotype() {
    let model = model();
    let sc = Scenario::default();
    let v = plant_voltage(&model, &sc).unwrap();
    let th = PhenotypeThresholds::default();
    let pre = window_phenotype(&v, sc.dt, 500.0, 3000.0, &th);
    let post = window_phenotype(&v, sc.dt, 7500.0, sc.duration, &th);
    let ok = pre.phenotype == Phenotype::Tonic && post.phenotype == Phenotype::Bursting;
    report(
        "8",
        ok,
        format!(
            "pre-ramp {:?} ({} spikes, ISI cv {:.2}), post-ramp {:?} ({} spikes, {:.1} spikes/burst, class ratio {:.1})",
            pre.phenotype, pre.spikes, pre.cv, post.phenotype, post.spikes, post.spikes_per_burst, post.class_ratio
        ),
    );
    assert!(ok);
}

fn criterion_9_determinism_and_runtime() {
    let first = first_sweep();
    let dir = tempfile::tempdir().unwrap();
    let second = run_sweep(dir.path());
    let identical = first.summary == second.summary;
    let limit = Duration::from_secs(30 * 60);
    let ok = identical && first.elapsed < limit && second.elapsed < limit;
    report(
        "9",
        ok,
        format!(
            "summary files byte-identical: {identical}; sweep times {:.1} s and {:.1} s (< 1800 s)",
            first.elapsed.as_secs_f64(),
            second.elapsed.as_secs_f64()
        ),
    );
    assert!(ok);
}

fn step_size_refinement() {
    let model = model();
    let coarse = TrialConfig {
        mismatch: MismatchConfig::none(),
        ..TrialConfig::default()
    };
    let mut fine = coarse.clone();
    fine.scenario.dt = coarse.scenario.dt / 2.0;
    let a = integrate_trial(&model, &coarse).unwrap().rms_voltage_error;
    let b = integrate_trial(&model, &fine).unwrap().rms_voltage_error;
    let change = (a - b).abs() / a;
    let ok = change < 0.1;
    println!(
        "invariant dt-refinement: {} rms at dt {} = {a:.5}, at dt {} = {b:.5}, change {:.1}% (< 10%)",
        if ok { "PASS" } else { "FAIL" },
        coarse.scenario.dt,
        fine.scenario.dt,
        100.0 * change
    );
    assert!(ok);
}

fn main() {
    let checks: [(&str, fn()); 10] = [
        ("criterion 1", criterion_1_no_mismatch_convergence),
        ("criterion 2", criterion_2_table_ordering),
        ("criterion 3", criterion_3_table_magnitudes),
        ("criterion 4", criterion_4_reduction_equivalence),
        ("criterion 5", criterion_5_consensus_mean_preservation),
        ("criterion 6", criterion_6_filter_oracles),
        ("criterion 7", criterion_7_regressor_consistency),
        ("criterion 8", criterion_8_scenario_phenotype),
        ("criterion 9", criterion_9_determinism_and_runtime),
        ("dt refinement", step_size_refinement),
    ];
    let failed: Vec<&str> = checks
        .iter()
        .filter(|(_, check)| std::panic::catch_unwind(check).is_err())
        .map(|(name, _)| *name)
        .collect();
    if failed.is_empty() {
        println!("acceptance: all hard checks passed");
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        std::process::exit(1);
    }
}
