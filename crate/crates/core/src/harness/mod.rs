//! Experiment orchestration: run configs, training, sweeps, charts and
//! augmentation previews.

pub mod config;
pub mod plot;
pub mod preview;
pub mod sweep;
pub mod train;

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub use config::{CifarSplit, DatasetSpec, EvalCfg, RunConfig};
pub use plot::{cmd_plot, render_svg};
pub use preview::cmd_augment_preview;
pub use sweep::{cmd_sweep, SweepOptions, SweepParam, SweepResult, SweepRow, SweepSpec};
pub use train::{cmd_eval_knn, cmd_train, train, EpochMetrics, EvalData, RunRecord, TrainOutcome};

/// Write `bytes` to a sibling temporary file, then rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}
