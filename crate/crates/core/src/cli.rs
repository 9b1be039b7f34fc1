//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 when a trial diverged (or an output could not
//! be written), 2 for configuration and usage errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::model::{NeuronModel, PARAM_NAMES};
use crate::runner::{
    format_table, integrate_trial, plant_voltage, ramp_eval, read_trial_result, run_experiment, summary_csv,
    trajectory_csv, trial_config, trials_csv, window_phenotype, write_atomic, ConfigDocument, Experiment,
    ExperimentOptions, PhenotypeThresholds, ResolvedConfig, SummaryRow, TrajectoryOutput, TrialResult,
};

/// Environment variable selecting the number of worker threads.
pub const THREADS_ENV: &str = "NEUROEST_THREADS";

#[derive(Debug, Parser)]
#[command(name = "neuroest", version, about = "Online conductance estimation experiments")]
pub struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a multi-trial experiment for the base configuration.
    Run(RunArgs),
    /// Run every configuration listed in the file's [[sweep]] section.
    Sweep(RunArgs),
    /// Run a single trial and print a report.
    Inspect(InspectArgs),
    /// Write plot-ready CSV panels from a saved trial result.
    ExportPlotData(ExportArgs),
    /// Check configuration files without running anything.
    ValidateConfig(ValidateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Experiment configuration file; built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Base seed.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,

    /// Number of trials.
    #[arg(long, value_name = "N")]
    pub trials: Option<usize>,

    /// Integration step in ms.
    #[arg(long, value_name = "MS")]
    pub dt: Option<f64>,

    /// Set a configuration value, e.g. `observer.kind=distributed`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,

    /// Exit 0 even if some trials diverged.
    #[arg(long)]
    pub allow_divergence: bool,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Trial index within the experiment.
    #[arg(long, default_value_t = 0)]
    pub trial: usize,

    /// Also write the trial result and trajectory here.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    /// Trial result JSON written by `run`, `sweep` or `inspect`.
    #[arg(long, value_name = "PATH")]
    pub trial: PathBuf,

    /// Figure layout: fig1, fig2, fig3 or fig4.
    #[arg(long, value_name = "ID")]
    pub figure: String,

    #[arg(long, value_name = "DIR", default_value = "plots")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    /// Configuration files to check.
    #[arg(required = true, value_name = "PATH")]
    pub paths: Vec<PathBuf>,

    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
}

pub fn execute(command: &Command) -> Result<i32> {
    match command {
        Command::Run(a) => cmd_run(a, false),
        Command::Sweep(a) => cmd_run(a, true),
        Command::Inspect(a) => cmd_inspect(a),
        Command::ExportPlotData(a) => cmd_export_plot_data(&a.trial, &a.figure, &a.out).map(|_| 0),
        Command::ValidateConfig(a) => cmd_validate(a),
    }
}

/// Loads the document and applies command-line overrides after the file.
fn load_document(args: &ConfigArgs) -> Result<ConfigDocument> {
    let mut doc = match &args.config {
        Some(p) => ConfigDocument::load(p)?,
        None => ConfigDocument::defaults(),
    };
    for o in &args.overrides {
        doc.apply_override(o)?;
    }
    if let Some(s) = args.seed {
        doc.apply_override(&format!("seed={s}"))?;
    }
    if let Some(n) = args.trials {
        doc.apply_override(&format!("trials={n}"))?;
    }
    if let Some(dt) = args.dt {
        doc.apply_override(&format!("scenario.dt={dt:?}"))?;
    }
    Ok(doc)
}

fn thread_count() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(s) if !s.trim().is_empty() => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got '{s}'"
            ))),
        },
        _ => Ok(None),
    }
}

/// File-system friendly form of a configuration label.
pub fn slug(label: &str) -> String {
    let mut out = String::new();
    for c in label.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

struct Completed {
    resolved: ResolvedConfig,
    experiment: Experiment,
}

fn run_one(resolved: ResolvedConfig, threads: Option<usize>) -> Result<Completed> {
    let model = resolved.load_model()?;
    let c = &resolved.config;
    log::info!("running '{}' with {} trials", resolved.label, c.trials);
    let experiment = run_experiment(
        &model,
        &c.trial_config(),
        c.seed,
        c.trials,
        ExperimentOptions {
            vary_input: c.vary_input,
            threads,
        },
    )?;
    Ok(Completed { resolved, experiment })
}

fn summary_row(c: &Completed) -> SummaryRow {
    let tc = c.resolved.config.trial_config();
    let mut summary = c.experiment.summary.clone();
    summary.label = c.resolved.label.clone();
    SummaryRow {
        configuration: c.resolved.label.clone(),
        observer: tc.observer.kind.name().to_string(),
        particles: tc.particles(),
        summary,
        overrides: c.resolved.overrides.clone(),
    }
}

fn trial_json(result: &TrialResult) -> Result<String> {
    serde_json::to_string(result).map_err(|e| Error::Io(std::io::Error::other(e)))
}

/// Trial JSON and trajectory CSV for the selected trials of one configuration.
fn trajectory_files(c: &Completed, dir: &Path, files: &mut Vec<(PathBuf, String)>) -> Result<()> {
    let keep = match c.resolved.config.output.trajectories {
        TrajectoryOutput::None => 0,
        TrajectoryOutput::First => 1,
        TrajectoryOutput::All => c.experiment.results.len(),
    };
    for (i, r) in c.experiment.results.iter().enumerate().take(keep) {
        if let Ok(t) = r {
            files.push((dir.join(format!("trial_{i:04}.json")), trial_json(t)?));
            files.push((dir.join(format!("trajectory_{i:04}.csv")), trajectory_csv(t)?));
        }
    }
    Ok(())
}

fn resolved_toml(c: &Completed) -> Result<String> {
    let mut text = String::new();
    for o in &c.resolved.overrides {
        text.push_str(&format!("# override: {o}\n"));
    }
    text.push_str(&toml::to_string(&c.resolved.config).map_err(|e| Error::Io(std::io::Error::other(e)))?);
    Ok(text)
}

fn cmd_run(args: &RunArgs, sweep: bool) -> Result<i32> {
    let doc = load_document(&args.config)?;
    let configs = if sweep {
        doc.resolve_sweep()?
    } else {
        vec![doc.resolve()?]
    };
    let threads = thread_count()?;
    let completed = configs
        .into_iter()
        .map(|r| run_one(r, threads))
        .collect::<Result<Vec<_>>>()?;

    let rows: Vec<SummaryRow> = completed.iter().map(summary_row).collect();
    let mut files = vec![
        (args.out.join("summary.csv"), summary_csv(&rows)?),
        (args.out.join("summary.txt"), format_table(&rows)),
        (args.out.join("trials.csv"), trials_csv(&rows)?),
    ];
    for c in &completed {
        let dir = if sweep {
            args.out.join(slug(&c.resolved.label))
        } else {
            args.out.clone()
        };
        files.push((dir.join("config.toml"), resolved_toml(c)?));
        trajectory_files(c, &dir, &mut files)?;
    }
    for (path, text) in &files {
        write_atomic(path, text)?;
    }
    print!("{}", format_table(&rows));

    let aborted: Vec<String> = rows
        .iter()
        .flat_map(|r| {
            r.summary
                .aborted()
                .map(|o| {
                    format!(
                        "{} trial {}: {}",
                        r.configuration,
                        o.index,
                        o.error.as_deref().unwrap_or("")
                    )
                })
                .collect::<Vec<_>>()
        })
        .collect();
    if aborted.is_empty() {
        return Ok(0);
    }
    for a in &aborted {
        eprintln!("aborted: {a}");
    }
    if args.allow_divergence {
        Ok(0)
    } else {
        eprintln!(
            "{} trial(s) diverged; rerun with --allow-divergence to accept",
            aborted.len()
        );
        Ok(1)
    }
}

fn cmd_inspect(args: &InspectArgs) -> Result<i32> {
    let doc = load_document(&args.config)?;
    let resolved = doc.resolve()?;
    let model = resolved.load_model()?;
    let c = &resolved.config;
    let tc = trial_config(&c.trial_config(), c.seed, args.trial, c.vary_input);
    let result = integrate_trial(&model, &tc)?;

    println!("configuration   {}", resolved.label);
    for o in &resolved.overrides {
        println!("override        {o}");
    }
    println!("trial           {} (seed {})", args.trial, tc.trial_seed);
    println!("steps           {}", result.steps);
    println!("rms error (mV)  {}", result.rms_voltage_error);
    println!("wall time (s)   {:.3}", result.wall_time);
    print_phenotype(&model, c)?;
    let mu_end = ramp_eval(&model.maximal_conductances, &tc.scenario.ramps, tc.scenario.duration)?;
    let est_end = result.trajectory.estimates.last().copied().unwrap_or_default();
    let n = tc.particles() as f64;
    println!("final estimates (true values scaled by 1/N for redundant blocks):");
    for (j, name) in PARAM_NAMES.iter().enumerate() {
        let truth = if j == PARAM_NAMES.len() - 1 {
            mu_end[j]
        } else {
            mu_end[j] / n
        };
        println!("  {name:<5} {:>12.6} {:>12.6}", est_end[j], truth);
    }

    if let Some(out) = &args.out {
        let files = [
            (out.join("trial.json"), trial_json(&result)?),
            (out.join("trajectory.csv"), trajectory_csv(&result)?),
        ];
        for (p, t) in &files {
            write_atomic(p, t)?;
        }
    }
    Ok(0)
}

fn print_phenotype(model: &NeuronModel, c: &crate::runner::ExperimentConfig) -> Result<()> {
    let scenario = &c.scenario;
    let v = plant_voltage(model, scenario)?;
    let th = PhenotypeThresholds::default();
    for (from, to) in scenario.constant_windows() {
        let from = (from + 500.0).min(to);
        let s = window_phenotype(&v, scenario.dt, from, to, &th);
        println!(
            "phenotype       [{from}, {to}) ms: {:?}, {} spikes, {:.2} spikes/burst",
            s.phenotype, s.spikes, s.spikes_per_burst
        );
    }
    Ok(())
}

fn panel(header: &[&str], columns: &[&[f64]]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(err)?;
    let n = columns.first().map_or(0, |c| c.len());
    for i in 0..n {
        w.write_record(columns.iter().map(|c| c[i].to_string())).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Panel files for `figure`, as (file name, contents).
pub fn plot_panels(result: &TrialResult, figure: Figure) -> Result<Vec<(String, String)>> {
    let tr = &result.trajectory;
    let est = |j: usize| -> Vec<f64> { tr.estimates.iter().map(|e| e[j]).collect() };
    let (cal, kca) = (3, 4);
    let prefix = match figure {
        Figure::Fig1 => "fig1",
        Figure::Fig2 => "fig2",
        Figure::Fig3 => "fig3",
        Figure::Fig4 => "fig4",
    };
    let name = |p: &str| format!("{prefix}_{p}.csv");
    let voltage = || panel(&["t", "v", "v_hat"], &[&tr.t, &tr.v, &tr.v_hat]);
    let error = || panel(&["t", "abs_err"], &[&tr.t, &tr.abs_err]);
    Ok(match figure {
        Figure::Fig1 => vec![
            (name("input"), panel(&["t", "u"], &[&tr.t, &tr.u])?),
            (name("voltage"), panel(&["t", "v"], &[&tr.t, &tr.v])?),
            (
                name("conductances"),
                panel(&["t", "mu_CaL", "mu_KCa"], &[&tr.t, &tr.mu_cal, &tr.mu_kca])?,
            ),
        ],
        Figure::Fig2 | Figure::Fig3 => vec![
            (name("voltage"), voltage()?),
            (name("error"), error()?),
            (
                name("parameters"),
                panel(
                    &["t", "mu_CaL", "est_CaL", "mu_KCa", "est_KCa"],
                    &[&tr.t, &tr.mu_cal, &est(cal), &tr.mu_kca, &est(kca)],
                )?,
            ),
        ],
        Figure::Fig4 => {
            let n = result.config_echo.particles() as f64;
            let scaled = |x: &[f64]| -> Vec<f64> { x.iter().map(|m| m / n).collect() };
            vec![
                (name("voltage"), voltage()?),
                (name("error"), error()?),
                (
                    name("cal"),
                    panel(
                        &["t", "theta_bar_CaL", "mu_CaL_over_N"],
                        &[&tr.t, &est(cal), &scaled(&tr.mu_cal)],
                    )?,
                ),
                (
                    name("kca"),
                    panel(
                        &["t", "theta_bar_KCa", "mu_KCa_over_N"],
                        &[&tr.t, &est(kca), &scaled(&tr.mu_kca)],
                    )?,
                ),
            ]
        }
    })
}

/// Writes the panels only after every one of them has been built.
pub fn cmd_export_plot_data(trial: &Path, figure: &str, out: &Path) -> Result<Vec<PathBuf>> {
    let fig = Figure::from_str(figure, true)
        .map_err(|_| Error::Usage(format!("unknown figure '{figure}' (expected fig1, fig2, fig3 or fig4)")))?;
    let result = read_trial_result(trial)?;
    let panels = plot_panels(&result, fig)?;
    let mut written = Vec::new();
    for (name, text) in &panels {
        let p = out.join(name);
        write_atomic(&p, text)?;
        written.push(p);
    }
    Ok(written)
}

fn cmd_validate(args: &ValidateArgs) -> Result<i32> {
    let mut failed = 0;
    for path in &args.paths {
        let outcome = (|| -> Result<usize> {
            let mut doc = ConfigDocument::load(path)?;
            for o in &args.overrides {
                doc.apply_override(o)?;
            }
            let base = doc.resolve()?;
            base.load_model()?;
            let entries = if base.config.sweep.is_empty() {
                0
            } else {
                doc.resolve_sweep()?.len()
            };
            Ok(entries)
        })();
        match outcome {
            Ok(0) => println!("{}: ok", path.display()),
            Ok(n) => println!("{}: ok ({n} sweep entries)", path.display()),
            Err(e) => {
                failed += 1;
                eprintln!("{}: {e}", path.display());
            }
        }
    }
    Ok(if failed == 0 { 0 } else { 2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs() {
        assert_eq!(slug("redundant N=3"), "redundant_n_3");
        assert_eq!(slug("centralized"), "centralized");
    }

    #[test]
    fn flags_become_overrides_after_file_overrides() {
        let args = ConfigArgs {
            config: None,
            seed: Some(9),
            trials: Some(2),
            dt: Some(0.05),
            overrides: vec!["seed=3".into()],
        };
        let doc = load_document(&args).unwrap();
        assert_eq!(doc.overrides, ["seed=3", "seed=9", "trials=2", "scenario.dt=0.05"]);
        let r = doc.resolve().unwrap();
        assert_eq!(r.config.seed, 9);
        assert_eq!(r.config.scenario.dt, 0.05);
    }

    #[test]
    fn unknown_figure_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let e = cmd_export_plot_data(&dir.path().join("x.json"), "fig7", dir.path()).unwrap_err();
        assert!(matches!(e, Error::Usage(_)));
    }
}
