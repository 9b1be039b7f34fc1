//! CSV, table and JSON output. Floats are written with Rust's shortest
//! round-trip formatting, which is locale independent.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::ExperimentSummary;
use super::trial::TrialResult;
use crate::error::{Error, Result};
use crate::model::PARAM_NAMES;

/// One line of the experiment summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub configuration: String,
    pub observer: String,
    /// Particles per block (1 unless redundant).
    pub particles: usize,
    pub summary: ExperimentSummary,
    pub overrides: Vec<String>,
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn to_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "configuration",
        "observer",
        "N",
        "trials",
        "completed",
        "aborted",
        "mean_rms",
        "std_rms",
        "degenerate",
        "base_seed",
        "overrides",
    ])
    .map_err(csv_err)?;
    for r in rows {
        let s = &r.summary;
        w.write_record([
            r.configuration.clone(),
            r.observer.clone(),
            r.particles.to_string(),
            s.trials.to_string(),
            s.completed.to_string(),
            (s.trials - s.completed).to_string(),
            opt(s.mean),
            opt(s.std),
            s.degenerate.to_string(),
            s.base_seed.to_string(),
            r.overrides.join(";"),
        ])
        .map_err(csv_err)?;
    }
    to_string(w)
}

pub fn trials_csv(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["configuration", "trial", "trial_seed", "rms", "status"])
        .map_err(csv_err)?;
    for r in rows {
        for o in &r.summary.outcomes {
            let status = match &o.error {
                Some(e) => format!("aborted: {e}"),
                None => "ok".into(),
            };
            w.write_record([
                r.configuration.clone(),
                o.index.to_string(),
                o.trial_seed.to_string(),
                opt(o.rms),
                status,
            ])
            .map_err(csv_err)?;
        }
    }
    to_string(w)
}

/// Plain-text table with one row per configuration.
pub fn format_table(rows: &[SummaryRow]) -> String {
    let cells: Vec<[String; 3]> = rows
        .iter()
        .map(|r| {
            let mut mean = r.summary.mean.map_or("n/a".to_string(), |m| format!("{m:.4}"));
            if r.summary.has_aborted {
                mean.push_str(&format!(" ({} aborted)", r.summary.trials - r.summary.completed));
            }
            let std = r.summary.std.map_or("n/a".to_string(), |s| format!("{s:.4}"));
            [r.configuration.clone(), mean, std]
        })
        .collect();
    let header = ["configuration", "mean rms (mV)", "std rms (mV)"];
    let width: Vec<usize> = (0..3)
        .map(|c| {
            cells
                .iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |r: [&str; 3]| {
        format!(
            "{:<w0$}  {:>w1$}  {:>w2$}\n",
            r[0],
            r[1],
            r[2],
            w0 = width[0],
            w1 = width[1],
            w2 = width[2]
        )
    };
    let mut out = line(header);
    out.push_str(&format!("{}\n", "-".repeat(width[0] + width[1] + width[2] + 4)));
    for r in &cells {
        out.push_str(&line([&r[0], &r[1], &r[2]]));
    }
    out
}

/// Columns `t, v, v_hat, abs_err`, one estimate per parameter, then the
/// ramped conductances and the input.
pub fn trajectory_csv(result: &TrialResult) -> Result<String> {
    let tr = &result.trajectory;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["t", "v", "v_hat", "abs_err"].iter().map(|s| s.to_string()).collect();
    header.extend(PARAM_NAMES.iter().map(|p| format!("est_{p}")));
    header.extend(["mu_CaL", "mu_KCa", "u"].iter().map(|s| s.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..tr.len() {
        let mut row = vec![tr.t[i], tr.v[i], tr.v_hat[i], tr.abs_err[i]];
        row.extend(tr.estimates[i]);
        row.extend([tr.mu_cal[i], tr.mu_kca[i], tr.u[i]]);
        w.write_record(row.iter().map(|x| x.to_string())).map_err(csv_err)?;
    }
    to_string(w)
}

pub fn read_trial_result(path: &Path) -> Result<TrialResult> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read trial result {}: {e}", path.display())))?;
    if text.trim().is_empty() {
        return Err(Error::Parse(format!("trial result {} is empty", path.display())));
    }
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never observe partial files.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
