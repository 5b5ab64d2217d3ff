//! Grid scans of the lower bound `a` on `|∇_u ω|`.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use nsg_core::brockett;
use nsg_core::{scan_assumption4, ScanReport};

use crate::run::to_json;

/// Scans `plant` and returns the report. An empty admissible region is a
/// report with status `empty_region`, not an error.
pub fn scan(plant: &str, delta: f64, radius: f64, resolution: usize, extent: Option<f64>) -> anyhow::Result<ScanReport> {
    match plant {
        "brockett" => {
            let mut spec = brockett::assumption_scan_spec(delta, radius, resolution)?;
            if let Some(e) = extent {
                spec = spec.with_extent(e)?;
            }
            let result = scan_assumption4(brockett::scan_evaluation, &spec);
            Ok(ScanReport::from_result("brockett", &spec, result)?)
        }
        "string" => bail!("no gradient bound scan is defined for the string plant; its gradient vanishes wherever p = 0"),
        other => bail!("unknown plant `{other}` (expected brockett)"),
    }
}

/// Runs [`scan`] and writes `scan.json` into `dir`.
pub fn run_scan(
    plant: &str,
    delta: f64,
    radius: f64,
    resolution: usize,
    extent: Option<f64>,
    dir: &Path,
) -> anyhow::Result<ScanReport> {
    let report = scan(plant, delta, radius, resolution, extent)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("scan.json");
    fs::write(&path, to_json(&report)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(report)
}
