use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use nsg_cli::summary::{load_report, write_summary};
use nsg_cli::{render_table, run_batch, run_experiment, run_scan, summarize, ExperimentConfig, RunReport};
use nsg_core::ScanStatus;

/// Exit status when a run finished but one of its checks failed.
const CHECK_FAILED: u8 = 1;
/// Exit status for bad input or I/O trouble.
const USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "nsg", version, about = "Run speed-gradient control experiments")]
#[command(after_help = "SG_SEED is reserved for stochastic features and currently ignored.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one experiment file.
    Run {
        config: PathBuf,
        /// Output directory; defaults to the file's `output` key, then `out/<name>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Step size, overriding the file.
        #[arg(long)]
        dt: Option<f64>,
        /// Horizon, overriding the file.
        #[arg(long)]
        tmax: Option<f64>,
    },
    /// Simulate several experiment files concurrently.
    Batch {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Worker threads; 0 uses the available parallelism.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Grid scan of the gradient lower bound on {Q >= delta, |x| <= radius}.
    Scan {
        plant: String,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        radius: f64,
        #[arg(long)]
        resolution: usize,
        /// Half-width of the lattice; defaults to the radius.
        #[arg(long)]
        extent: Option<f64>,
        #[arg(long, default_value = "out/scan")]
        out: PathBuf,
    },
    /// Tabulate run reports.
    Summarize {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// JSON destination; the text table goes next to it with a .txt extension.
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_report(r: &RunReport, dir: &Path) {
    let time = match (r.convergence_time, r.first_event_time) {
        (Some(t), _) => format!(", converged at t = {t}"),
        (None, Some(t)) => format!(", event at t = {t}"),
        _ => String::new(),
    };
    let tag = if r.experimental { " [experimental]" } else { "" };
    println!("{}: {}{time}{tag} -> {}", r.name, r.termination, dir.display());
    for c in &r.checks {
        println!("  {} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
}

fn exit_for(passed: bool) -> ExitCode {
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(CHECK_FAILED)
    }
}

fn main_inner(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run { config, out, dt, tmax } => {
            let cfg = ExperimentConfig::load(&config)?.with_overrides(dt, tmax)?;
            let dir = out
                .or_else(|| cfg.output.clone())
                .unwrap_or_else(|| Path::new("out").join(&cfg.name));
            let report = run_experiment(&cfg, &dir)?;
            print_report(&report, &dir);
            Ok(exit_for(report.all_passed))
        }
        Command::Batch { configs, out, jobs } => {
            let cfgs = configs
                .iter()
                .map(|p| ExperimentConfig::load(p))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let jobs = if jobs == 0 {
                std::thread::available_parallelism().map_or(1, |n| n.get())
            } else {
                jobs
            };
            let (reports, summary) = run_batch(&cfgs, &out, jobs)?;
            for r in &reports {
                print_report(r, &out.join(&r.name));
            }
            print!("\n{}", render_table(&summary));
            Ok(exit_for(summary.all_passed))
        }
        Command::Scan {
            plant,
            delta,
            radius,
            resolution,
            extent,
            out,
        } => {
            let r = run_scan(&plant, delta, radius, resolution, extent, &out)?;
            match (r.status, r.a_lower_bound, &r.argmin_point) {
                (ScanStatus::Ok, Some(a), Some(x)) => println!(
                    "{plant}: a = {a} at {x:?} over {} admissible points -> {}",
                    r.admissible_points,
                    out.display()
                ),
                _ => println!("{plant}: no admissible point for delta = {delta} -> {}", out.display()),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Summarize { reports, out } => {
            let loaded = reports
                .iter()
                .map(|p| load_report(p))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let summary = summarize(&loaded)?;
            write_summary(&summary, &out).with_context(|| format!("writing {}", out.display()))?;
            print!("{}", render_table(&summary));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(USAGE)
        }
    }
}
