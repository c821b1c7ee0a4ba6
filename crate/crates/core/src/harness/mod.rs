//! Experiment plumbing: configuration, synthetic data, toy sampling runs,
//! multi-seed comparisons and the head-count sweep.

mod experiment;
mod synthetic;
mod toy;

use std::io::Write as _;
use std::path::Path;

pub use experiment::{
    head_sweep, run_experiment, run_single, sweep_csv, ExperimentConfig, MetricToggles, RunResult,
    Stat, Summary, SweepRow, Variant, VariantSummary,
};
pub use synthetic::{gen_synthetic, single_aspect_oracle_accuracy, SyntheticTaskConfig};
pub use toy::{sample_toy, ToyConfig, ToyReport, ToyTarget, TraceRow};

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temporary file and renames it over `path`,
/// so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid("write_atomic", format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
