//! Side-by-side comparison of run reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::run::{to_json, RunReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub plant: String,
    pub gamma: f64,
    pub termination: String,
    pub experimental: bool,
    pub convergence_time: Option<f64>,
    pub first_event_time: Option<f64>,
    pub final_goal: f64,
    pub max_control_norm: f64,
    pub initial_branch: Option<String>,
    pub initial_energy_rate_sign: Option<i8>,
    pub checks_passed: usize,
    pub checks_total: usize,
    pub failed_checks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub all_passed: bool,
}

pub fn summarize(reports: &[RunReport]) -> anyhow::Result<Summary> {
    if reports.is_empty() {
        bail!("nothing to summarize");
    }
    let rows: Vec<SummaryRow> = reports
        .iter()
        .map(|r| SummaryRow {
            name: r.name.clone(),
            plant: r.plant.clone(),
            gamma: r.gamma,
            termination: r.termination.clone(),
            experimental: r.experimental,
            convergence_time: r.convergence_time,
            first_event_time: r.first_event_time,
            final_goal: r.final_goal,
            max_control_norm: r.max_control_norm,
            initial_branch: r.initial_branch.clone(),
            initial_energy_rate_sign: r.initial_energy_rate_sign,
            checks_passed: r.checks.iter().filter(|c| c.passed).count(),
            checks_total: r.checks.len(),
            failed_checks: r.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect(),
        })
        .collect();
    Ok(Summary {
        all_passed: reports.iter().all(|r| r.all_passed),
        rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |t| format!("{t:.6}"))
}

/// Fixed-width text table, one row per report.
pub fn render_table(s: &Summary) -> String {
    let header = [
        "name", "plant", "gamma", "termination", "T_conv", "T_event", "max|u|", "branch", "dH/dt", "checks",
    ];
    let mut rows: Vec<[String; 10]> = vec![header.map(String::from)];
    for r in &s.rows {
        let mut name = r.name.clone();
        if r.experimental {
            name.push('*');
        }
        rows.push([
            name,
            r.plant.clone(),
            format!("{}", r.gamma),
            r.termination.clone(),
            opt(r.convergence_time),
            opt(r.first_event_time),
            format!("{:.6}", r.max_control_norm),
            r.initial_branch.clone().unwrap_or_else(|| "-".into()),
            match r.initial_energy_rate_sign {
                Some(1) => "+".into(),
                Some(_) => "-".into(),
                None => "".into(),
            },
            format!("{}/{}", r.checks_passed, r.checks_total),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    if s.rows.iter().any(|r| r.experimental) {
        out.push_str("* started in the excluded set; pushed off with a constant control\n");
    }
    out
}

pub fn load_report(path: &Path) -> anyhow::Result<RunReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Writes the summary as JSON to `out` and as a table next to it
/// (`out` with a `.txt` extension).
pub fn write_summary(s: &Summary, out: &Path) -> anyhow::Result<()> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(out, to_json(s)?).with_context(|| format!("writing {}", out.display()))?;
    let table = out.with_extension("txt");
    fs::write(&table, render_table(s)).with_context(|| format!("writing {}", table.display()))?;
    Ok(())
}
