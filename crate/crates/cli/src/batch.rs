//! Several experiments at once, each in its own output directory.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use anyhow::bail;

use crate::config::ExperimentConfig;
use crate::run::{execute, RunReport};
use crate::summary::{summarize, write_summary, Summary};

/// Runs every config on up to `jobs` threads, writing `<out>/<name>/` for
/// each, then `<out>/summary.json` and `<out>/summary.txt` after all runs
/// have joined. Reports come back in input order.
pub fn run_batch(configs: &[ExperimentConfig], out: &Path, jobs: usize) -> anyhow::Result<(Vec<RunReport>, Summary)> {
    for (i, c) in configs.iter().enumerate() {
        if configs[..i].iter().any(|d| d.name == c.name) {
            bail!("two experiments are named `{}`", c.name);
        }
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<anyhow::Result<RunReport>>>> = configs.iter().map(|_| Mutex::new(None)).collect();
    thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, configs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = configs.get(i) else { break };
                let result = execute(cfg).and_then(|o| {
                    o.write(&out.join(&cfg.name))?;
                    Ok(o.report)
                });
                *slots[i].lock().expect("slot lock") = Some(result);
            });
        }
    });
    let mut reports = Vec::with_capacity(configs.len());
    for (slot, cfg) in slots.into_iter().zip(configs) {
        match slot.into_inner().expect("slot lock") {
            Some(Ok(r)) => reports.push(r),
            Some(Err(e)) => return Err(e.context(format!("experiment `{}`", cfg.name))),
            None => bail!("experiment `{}` did not run", cfg.name),
        }
    }
    let summary = summarize(&reports)?;
    write_summary(&summary, &out.join("summary.json"))?;
    Ok((reports, summary))
}
