//! `siamaug`: train, sweep, plot, preview and evaluate from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use siamaug_core::harness::sweep::SweepEvent;
use siamaug_core::harness::{
    cmd_augment_preview, cmd_eval_knn, cmd_plot, cmd_sweep, cmd_train, RunConfig, SweepOptions, SweepParam,
    SweepSpec,
};

#[derive(Parser)]
#[command(name = "siamaug", version, about = "Spatial augmentation lab for SimSiam")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by every command that builds a run configuration.
/// Explicit flags override the file.
#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => match self.seed {
                Some(seed) => RunConfig::new(seed),
                None => bail!("pass --config or --seed"),
            },
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one model and write config, metrics and checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Train every (value, seed) cell of a one-parameter sweep into a CSV,
    /// skipping cells the CSV already holds.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Parameter to vary, e.g. overlap_ratio, cutout_size, margin.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
        seeds: Vec<u64>,
        /// Result file; defaults to `<out>/sweep.csv`.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Stop after this many newly trained cells.
        #[arg(long)]
        max_new_cells: Option<usize>,
    },
    /// Draw a sweep CSV as an SVG line chart.
    Plot {
        /// Sweep CSV.
        #[arg(long)]
        csv: PathBuf,
        /// Output SVG; defaults to the CSV path with an `.svg` extension.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write annotated view pairs as PNG files.
    AugmentPreview {
        #[command(flatten)]
        common: Common,
        /// Number of pairs.
        #[arg(long, short, default_value_t = 8)]
        n: usize,
    },
    /// Evaluate a checkpoint with the configured kNN protocol.
    EvalKnn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train { common } => {
            let cfg = common.resolve()?;
            cmd_train(&cfg, |m| {
                let knn = m.knn_accuracy.map(|a| format!(" knn {a:.4}")).unwrap_or_default();
                let warn = if m.collapse_warning { " COLLAPSE?" } else { "" };
                eprintln!(
                    "epoch {:>3} lr {:.5} loss {:.4} collapse {:.4}{knn}{warn}",
                    m.epoch, m.lr, m.mean_loss, m.collapse_stat
                );
            })?;
            println!("{}", cfg.out_dir.display());
        }
        Cmd::Sweep { common, param, values, seeds, csv, max_new_cells } => {
            let cfg = common.resolve()?;
            let spec = SweepSpec { param: SweepParam::parse(&param)?, values, seeds };
            let csv = csv.unwrap_or_else(|| cfg.out_dir.join("sweep.csv"));
            let result = cmd_sweep(&cfg, &spec, &csv, SweepOptions { max_new_cells }, |ev| match ev {
                SweepEvent::Skipped { value, seed } => eprintln!("skip  {value} seed {seed}"),
                SweepEvent::Started { value, seed } => eprintln!("start {value} seed {seed}"),
                SweepEvent::Finished { value, seed, accuracy } => {
                    eprintln!("done  {value} seed {seed} knn {}", accuracy.map_or("-".into(), |a| format!("{a:.4}")))
                }
                SweepEvent::Failed { value, seed, error } => eprintln!("FAIL  {value} seed {seed}: {error}"),
            })?;
            for v in &spec.values {
                let canon = spec.param.canonical_value(v)?;
                if let Some(acc) = result.mean_accuracy(&canon) {
                    println!("{canon}\t{acc:.4}");
                }
            }
        }
        Cmd::Plot { csv, out } => {
            let out = out.unwrap_or_else(|| csv.with_extension("svg"));
            cmd_plot(&csv, &out)?;
            println!("{}", out.display());
        }
        Cmd::AugmentPreview { common, n } => {
            let cfg = common.resolve()?;
            for p in cmd_augment_preview(&cfg, n, Path::new(&cfg.out_dir))? {
                println!("{}", p.display());
            }
        }
        Cmd::EvalKnn { common, checkpoint } => {
            let cfg = common.resolve()?;
            let rec = cmd_eval_knn(&checkpoint, &cfg)?;
            println!("{} epoch {} knn {:.4}", rec.run_id, rec.epoch, rec.accuracy);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
