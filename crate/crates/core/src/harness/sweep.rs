//! Seeded parameter sweeps with resumable, append-only CSV results.

use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::geometry::AugSpec;
use crate::harness::config::{DatasetSpec, RunConfig};
use crate::harness::train::{train, EvalData};
use crate::harness::write_atomic;
use crate::loss::MarginSpec;

pub const SCHEMA_VERSION: u32 = 1;
pub const SWEEP_HEADER: &str =
    "schema_version,sweep_param,value,seed,epoch,knn_accuracy,final_loss,collapse_stat,status";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    OverlapRatio,
    PatchRatio,
    ExclRatio,
    CutoutSize,
    MarginMode,
}

impl SweepParam {
    pub const ALL: [SweepParam; 5] = [
        SweepParam::OverlapRatio,
        SweepParam::PatchRatio,
        SweepParam::ExclRatio,
        SweepParam::CutoutSize,
        SweepParam::MarginMode,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::OverlapRatio => "overlap_ratio",
            SweepParam::PatchRatio => "patch_ratio",
            SweepParam::ExclRatio => "excl_ratio",
            SweepParam::CutoutSize => "cutout_size",
            SweepParam::MarginMode => "margin_mode",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| param(format!("unknown sweep parameter {name:?}")))
    }

    /// Canonical spelling of a value, used as the CSV `value` column.
    pub fn canonical_value(&self, value: &str) -> Result<String> {
        let v = value.trim();
        match self {
            SweepParam::MarginMode => {
                parse_margin(v, 32)?;
                Ok(v.to_ascii_lowercase())
            }
            _ => {
                let x: f64 = v.parse().map_err(|_| param(format!("{} value {v:?} is not a number", self.name())))?;
                Ok(x.to_string())
            }
        }
    }
}

/// Parse a margin mode: `none`, `fixed`, `fixed:<m>`, `distance` or
/// `distance:<k>`. Bare `fixed` uses m = 0.2; bare `distance` uses
/// k = 2 / image diagonal.
pub fn parse_margin(text: &str, image_size: usize) -> Result<MarginSpec> {
    let lower = text.trim().to_ascii_lowercase();
    let (mode, arg) = match lower.split_once(':') {
        Some((m, a)) => (m, Some(a)),
        None => (lower.as_str(), None),
    };
    let num = |a: &str| a.parse::<f64>().map_err(|_| param(format!("bad margin parameter in {text:?}")));
    let spec = match (mode, arg) {
        ("none", None) => MarginSpec::NoMargin,
        ("fixed", None) => MarginSpec::Fixed { m: 0.2 },
        ("fixed", Some(a)) => MarginSpec::Fixed { m: num(a)? },
        ("distance", None) => MarginSpec::distance_for_image(image_size, image_size),
        ("distance", Some(a)) => MarginSpec::Distance { k: num(a)? },
        _ => return Err(param(format!("unknown margin mode {text:?}"))),
    };
    spec.validate()?;
    Ok(spec)
}

/// Which parameter to vary, over which values and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.seeds.is_empty() {
            return Err(param("a sweep needs at least one value and one seed"));
        }
        for v in &self.values {
            self.param.canonical_value(v)?;
        }
        Ok(())
    }
}

fn image_size(cfg: &RunConfig) -> usize {
    match &cfg.dataset {
        DatasetSpec::Synthetic(s) => s.image_size,
        DatasetSpec::Cifar10 { .. } => 32,
    }
}

/// The run configuration of one sweep cell.
pub fn cell_config(base: &RunConfig, p: SweepParam, value: &str, seed: u64) -> Result<RunConfig> {
    let mut cfg = base.clone();
    cfg.seed = seed;
    let num = || -> Result<f64> { value.trim().parse().map_err(|_| param(format!("{value:?} is not a number"))) };
    match p {
        SweepParam::OverlapRatio => cfg.aug = AugSpec::Overlap { ratio: num()? },
        SweepParam::PatchRatio => cfg.aug = AugSpec::Patch { ratio: num()? },
        SweepParam::ExclRatio => cfg.aug = AugSpec::Exclusive { ratio: num()? },
        SweepParam::CutoutSize => {
            cfg.aug = match base.aug {
                AugSpec::CutoutBlur { sigma, .. } => AugSpec::CutoutBlur { size_ratio: num()?, sigma },
                _ => AugSpec::Cutout { size_ratio: num()? },
            }
        }
        SweepParam::MarginMode => cfg.margin = parse_margin(value, image_size(base))?,
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One line of the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub schema_version: u32,
    pub sweep_param: String,
    pub value: String,
    pub seed: u64,
    pub epoch: usize,
    pub knn_accuracy: Option<f64>,
    pub final_loss: Option<f64>,
    pub collapse_stat: Option<f64>,
    pub status: String,
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// The latest evaluated row of every successful (value, seed) cell.
    pub fn final_rows(&self) -> Vec<&SweepRow> {
        let mut out: Vec<&SweepRow> = Vec::new();
        for r in self.rows.iter().filter(|r| r.is_ok() && r.knn_accuracy.is_some()) {
            match out.iter_mut().find(|o| o.value == r.value && o.seed == r.seed) {
                Some(o) if o.epoch < r.epoch => *o = r,
                Some(_) => {}
                None => out.push(r),
            }
        }
        out
    }

    /// Seed-mean final accuracy for `value`, if any cell succeeded.
    pub fn mean_accuracy(&self, value: &str) -> Option<f64> {
        let accs: Vec<f64> =
            self.final_rows().iter().filter(|r| r.value == value).filter_map(|r| r.knn_accuracy).collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }
}

fn rows_to_csv(rows: &[SweepRow], header: bool) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(header).from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Read a results file, checking the header and schema version of every row.
pub fn read_results(path: &Path) -> Result<SweepResult> {
    let text = fs::read_to_string(path)?;
    parse_results(&text)
}

pub fn parse_results(text: &str) -> Result<SweepResult> {
    let header = text.lines().next().unwrap_or_default();
    if header != SWEEP_HEADER {
        return Err(Error::Schema(format!("unexpected results header {header:?}")));
    }
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let version = rec.get(0).unwrap_or_default();
        if version != SCHEMA_VERSION.to_string() {
            return Err(Error::Schema(format!("unsupported results schema version {version:?}")));
        }
        rows.push(rec.deserialize(None)?);
    }
    Ok(SweepResult { rows })
}

/// Sidecar that ties a results file to the sweep that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SweepMeta {
    schema_version: u32,
    sweep_param: SweepParam,
    base_config_hash: String,
}

fn meta_path(csv: &Path) -> PathBuf {
    let mut name = csv.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    csv.with_file_name(name)
}

/// Drop anything an interrupted run left behind: a torn last line, or rows of
/// a cell that never reached its final epoch. Returns the surviving rows.
fn repair(path: &Path, final_epoch: usize) -> Result<Vec<SweepRow>> {
    let original = fs::read_to_string(path)?;
    let mut text = original.clone();
    if !text.ends_with('\n') {
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        text.truncate(keep);
    }
    if text.is_empty() {
        text = format!("{SWEEP_HEADER}\n");
    }
    let rows = parse_results(&text)?.rows;
    let complete: BTreeSet<(String, u64)> = rows
        .iter()
        .filter(|r| !r.is_ok() || r.epoch == final_epoch)
        .map(|r| (r.value.clone(), r.seed))
        .collect();
    let kept: Vec<SweepRow> = rows.into_iter().filter(|r| complete.contains(&(r.value.clone(), r.seed))).collect();
    let mut bytes = format!("{SWEEP_HEADER}\n").into_bytes();
    bytes.extend(rows_to_csv(&kept, false)?);
    if bytes != original.as_bytes() {
        write_atomic(path, &bytes)?;
    }
    Ok(kept)
}

fn append(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = OpenOptions::new().append(true).open(path)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    Ok(())
}

/// Progress notifications from [`cmd_sweep`].
#[derive(Debug)]
pub enum SweepEvent<'a> {
    Skipped { value: &'a str, seed: u64 },
    Started { value: &'a str, seed: u64 },
    Finished { value: &'a str, seed: u64, accuracy: Option<f64> },
    Failed { value: &'a str, seed: u64, error: &'a Error },
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SweepOptions {
    /// Stop after running this many new cells (used to emulate interruption).
    pub max_new_cells: Option<usize>,
}

/// Run every (value, seed) cell not already recorded in `csv_path`, appending
/// each cell's rows in a single write. Evaluation must be configured.
pub fn cmd_sweep(
    base: &RunConfig,
    spec: &SweepSpec,
    csv_path: &Path,
    opts: SweepOptions,
    mut on_event: impl FnMut(SweepEvent<'_>),
) -> Result<SweepResult> {
    base.validate()?;
    spec.validate()?;
    if base.eval.queries.is_none() {
        return Err(param("a sweep needs eval.queries to score its cells"));
    }
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let meta = SweepMeta {
        schema_version: SCHEMA_VERSION,
        sweep_param: spec.param,
        base_config_hash: RunConfig { seed: 0, ..base.clone() }.hash(),
    };
    let meta_file = meta_path(csv_path);
    if csv_path.exists() {
        let found: SweepMeta = serde_json::from_slice(&fs::read(&meta_file).map_err(|_| {
            Error::Schema(format!("{} has no sweep metadata; refusing to append", csv_path.display()))
        })?)?;
        if found != meta {
            return Err(Error::Schema(format!(
                "{} was produced by a different sweep configuration",
                csv_path.display()
            )));
        }
    } else {
        write_atomic(&meta_file, serde_json::to_string_pretty(&meta)?.as_bytes())?;
        write_atomic(csv_path, format!("{SWEEP_HEADER}\n").as_bytes())?;
    }
    let existing = repair(csv_path, base.epochs)?;
    let done: BTreeSet<(String, u64)> = existing.iter().map(|r| (r.value.clone(), r.seed)).collect();

    let train_ds = base.dataset.load()?;
    let eval = EvalData::from_cfg(base, &train_ds)?;
    let mut ran = 0;
    'cells: for raw in &spec.values {
        let value = spec.param.canonical_value(raw)?;
        for &seed in &spec.seeds {
            if done.contains(&(value.clone(), seed)) {
                on_event(SweepEvent::Skipped { value: &value, seed });
                continue;
            }
            if opts.max_new_cells.is_some_and(|m| ran >= m) {
                break 'cells;
            }
            on_event(SweepEvent::Started { value: &value, seed });
            let outcome = cell_config(base, spec.param, &value, seed)
                .and_then(|cfg| train(&cfg, &train_ds, eval.as_ref(), |_| {}));
            let row = |epoch, acc, loss, collapse, status: &str| SweepRow {
                schema_version: SCHEMA_VERSION,
                sweep_param: spec.param.name().to_string(),
                value: value.clone(),
                seed,
                epoch,
                knn_accuracy: acc,
                final_loss: loss,
                collapse_stat: collapse,
                status: status.to_string(),
            };
            let rows: Vec<SweepRow> = match &outcome {
                Ok(out) => {
                    let rows: Vec<SweepRow> = out
                        .metrics
                        .iter()
                        .filter(|m| m.knn_accuracy.is_some())
                        .map(|m| row(m.epoch, m.knn_accuracy, Some(m.mean_loss), Some(m.collapse_stat), "ok"))
                        .collect();
                    on_event(SweepEvent::Finished {
                        value: &value,
                        seed,
                        accuracy: rows.last().and_then(|r| r.knn_accuracy),
                    });
                    rows
                }
                Err(e) => {
                    on_event(SweepEvent::Failed { value: &value, seed, error: e });
                    vec![row(0, None, None, None, "failed")]
                }
            };
            // A zero-epoch run has nothing to evaluate; record it as complete.
            let rows = if rows.is_empty() { vec![row(base.epochs, None, None, None, "ok")] } else { rows };
            append(csv_path, &rows_to_csv(&rows, false)?)?;
            ran += 1;
        }
    }
    read_results(csv_path)
}
