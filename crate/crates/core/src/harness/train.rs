//! Self-supervised training loop and the `train` command.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{batch_iter, Dataset};
use crate::error::{param, Error, Result};
use crate::eval::{embed_dataset, knn_accuracy};
use crate::harness::config::RunConfig;
use crate::harness::write_atomic;
use crate::imaging::{make_view_pair, Image};
use crate::loss::simsiam_loss;
use crate::model::{
    backward, collapse_monitor, forward, init_params, sgd_step, Checkpoint, Mode, ModelParams, OptState,
};
use crate::seeds::{rng_for, stream};

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// Number of completed epochs (1-based).
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub collapse_stat: f64,
    /// Fraction of loss terms that sat at their margin threshold.
    pub gated_frac: f64,
    pub knn_accuracy: Option<f64>,
    /// Set once the collapse statistic has been below `0.1/sqrt(d)` for three
    /// consecutive epochs.
    pub collapse_warning: bool,
}

pub const METRICS_HEADER: &str = "epoch,lr,mean_loss,collapse_stat,gated_frac,knn_accuracy,collapse_warning";

impl EpochMetrics {
    fn csv_row(&self) -> String {
        let knn = self.knn_accuracy.map(|a| a.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch, self.lr, self.mean_loss, self.collapse_stat, self.gated_frac, knn, self.collapse_warning
        )
    }
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in metrics {
        let _ = writeln!(out, "{}", m.csv_row());
    }
    out
}

/// Labeled datasets used for kNN evaluation.
#[derive(Debug, Clone)]
pub struct EvalData {
    pub k: usize,
    pub bank: Dataset,
    pub queries: Dataset,
}

impl EvalData {
    /// Load the evaluation sets named in `cfg`; the bank defaults to the
    /// training set.
    pub fn from_cfg(cfg: &RunConfig, train: &Dataset) -> Result<Option<Self>> {
        let Some(queries) = &cfg.eval.queries else { return Ok(None) };
        let bank = match &cfg.eval.bank {
            Some(spec) => spec.load()?,
            None => train.clone(),
        };
        if bank.labels.is_none() {
            return Err(param("the kNN bank must be labeled"));
        }
        Ok(Some(EvalData { k: cfg.eval.k, bank, queries: queries.load()? }))
    }

    pub fn accuracy(&self, params: &ModelParams<f32>) -> Result<f64> {
        let bank = embed_dataset(params, &self.bank)?;
        let queries = embed_dataset(params, &self.queries)?;
        knn_accuracy(&bank, &queries, self.k.min(bank.len()))
    }
}

/// Accuracy of one trained model, as reported to the harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub epoch: usize,
    pub accuracy: f64,
    pub config_hash: String,
}

impl RunRecord {
    pub fn new(cfg: &RunConfig, epoch: usize, accuracy: f64) -> Self {
        let config_hash = cfg.hash();
        RunRecord { run_id: format!("{}-s{}", &config_hash[..12], cfg.seed), epoch, accuracy, config_hash }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The configuration actually used, with input statistics filled in.
    pub config: RunConfig,
    pub params: ModelParams<f32>,
    pub opt: OptState<f32>,
    pub metrics: Vec<EpochMetrics>,
    /// Batch-mean loss of every optimizer step.
    pub step_losses: Vec<f64>,
}

/// Apply the data-dependent parts of the configuration.
pub fn resolve_config(cfg: &RunConfig, train: &Dataset) -> RunConfig {
    let mut cfg = cfg.clone();
    if cfg.standardize_from_data && !train.is_empty() {
        let (mean, std) = train.channel_stats();
        cfg.arch.input_mean = mean;
        cfg.arch.input_std = std.map(|s| s.max(1e-3));
    }
    cfg
}

/// Train a fresh model on `train`. `on_epoch` sees each epoch's metrics as
/// soon as they are available.
pub fn train(
    cfg: &RunConfig,
    train: &Dataset,
    eval: Option<&EvalData>,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.len() < cfg.batch_size {
        return Err(param(format!("{} training images cannot fill a batch of {}", train.len(), cfg.batch_size)));
    }
    let cfg = resolve_config(cfg, train);
    let seed = cfg.seed;
    let size = cfg.arch.input_size;
    let d = cfg.arch.proj_dim;
    let mut params: ModelParams<f32> = init_params(&mut rng_for(&[seed, stream::INIT]), &cfg.arch)?;
    let mut opt = OptState::new(&params);
    let steps_per_epoch = (train.len() / cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;
    let collapse_floor = 0.1 / (d as f64).sqrt();

    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut step_losses = Vec::with_capacity(total_steps as usize);
    let mut low_streak = 0;
    for epoch in 0..cfg.epochs {
        let (mut loss_sum, mut collapse_sum, mut gated, mut terms) = (0.0, 0.0, 0usize, 0usize);
        let mut lr = 0.0;
        let batches = batch_iter(train.len(), seed, epoch, cfg.batch_size)?;
        for idx in &batches {
            let b = idx.len();
            let mut v1 = Vec::with_capacity(b);
            let mut v2 = Vec::with_capacity(b);
            let mut phi = Vec::with_capacity(b);
            for &i in idx {
                let mut rng = rng_for(&[seed, stream::AUGMENT, epoch as u64, i as u64]);
                let pair = make_view_pair(&mut rng, &train.images[i], &cfg.aug, &cfg.photo, size)?;
                v1.push(pair.v1);
                v2.push(pair.v2);
                phi.push(pair.geom.phi);
            }
            let r1: Vec<&Image> = v1.iter().collect();
            let r2: Vec<&Image> = v2.iter().collect();
            let o1 = forward(&params, &r1, Mode::Train)?;
            let o2 = forward(&params, &r2, Mode::Train)?;

            let mut gp1 = vec![0f32; b * d];
            let mut gp2 = vec![0f32; b * d];
            let mut batch_loss = 0.0;
            let row = |v: &[f32], j: usize| -> Vec<f64> { v[j * d..(j + 1) * d].iter().map(|&x| x as f64).collect() };
            for j in 0..b {
                let out = simsiam_loss(
                    &row(&o1.p, j),
                    &row(&o1.z, j),
                    &row(&o2.p, j),
                    &row(&o2.z, j),
                    &cfg.margin,
                    phi[j],
                )?;
                batch_loss += out.value;
                gated += out.gated.iter().filter(|&&g| g).count();
                for c in 0..d {
                    gp1[j * d + c] = (out.grad_p1[c] / b as f64) as f32;
                    gp2[j * d + c] = (out.grad_p2[c] / b as f64) as f32;
                }
            }
            terms += 2 * b;
            batch_loss /= b as f64;
            loss_sum += batch_loss;
            collapse_sum += collapse_monitor(&o1.z, d);
            step_losses.push(batch_loss);

            let grads = backward(&params, [&o1.cache, &o2.cache], &gp1, &gp2)?;
            lr = cfg.optim.lr_at(cfg.batch_size, opt.step, total_steps);
            sgd_step(&mut params, &grads, lr, &cfg.optim, &mut opt)?;
            params.update_running_stats(&o1.cache)?;
            params.update_running_stats(&o2.cache)?;
            if !params.is_finite() {
                return Err(Error::Domain(format!("parameters became non-finite in epoch {}", epoch + 1)));
            }
        }

        let nb = batches.len() as f64;
        let collapse_stat = collapse_sum / nb;
        low_streak = if collapse_stat < collapse_floor { low_streak + 1 } else { 0 };
        let done = epoch + 1;
        let knn_accuracy = match eval {
            Some(ev) if done == cfg.epochs || (cfg.eval.every > 0 && done % cfg.eval.every == 0) => {
                Some(ev.accuracy(&params)?)
            }
            _ => None,
        };
        let m = EpochMetrics {
            epoch: done,
            lr,
            mean_loss: loss_sum / nb,
            collapse_stat,
            gated_frac: gated as f64 / terms as f64,
            knn_accuracy,
            collapse_warning: low_streak >= 3,
        };
        on_epoch(&m);
        metrics.push(m);
    }
    Ok(TrainOutcome { config: cfg, params, opt, metrics, step_losses })
}

/// Load data, train, and write `config.json`, `metrics.csv` and
/// `checkpoint.json` into the configured output directory.
pub fn cmd_train(cfg: &RunConfig, on_epoch: impl FnMut(&EpochMetrics)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_ds = cfg.dataset.load()?;
    let eval = EvalData::from_cfg(cfg, &train_ds)?;
    let outcome = train(cfg, &train_ds, eval.as_ref(), on_epoch)?;
    let out: &Path = &cfg.out_dir;
    std::fs::create_dir_all(out)?;
    write_atomic(&out.join("config.json"), outcome.config.to_json().as_bytes())?;
    write_atomic(&out.join("metrics.csv"), metrics_csv(&outcome.metrics).as_bytes())?;
    Checkpoint::new(cfg.seed, cfg.epochs, outcome.params.clone(), outcome.opt.clone())
        .save(&out.join("checkpoint.json"))?;
    if let Some(acc) = outcome.metrics.last().and_then(|m| m.knn_accuracy) {
        write_record(out, &RunRecord::new(cfg, cfg.epochs, acc))?;
    }
    Ok(outcome)
}

fn write_record(dir: &Path, rec: &RunRecord) -> Result<()> {
    let json = serde_json::to_string_pretty(rec)?;
    write_atomic(&dir.join("record.json"), json.as_bytes())
}

/// Evaluate a saved checkpoint with the kNN protocol of `cfg` and write
/// `record.json` into the configured output directory.
pub fn cmd_eval_knn(checkpoint: &Path, cfg: &RunConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let ck = Checkpoint::load(checkpoint)?;
    let train_ds = cfg.dataset.load()?;
    let eval = EvalData::from_cfg(cfg, &train_ds)?.ok_or_else(|| param("no kNN query set configured"))?;
    let rec = RunRecord::new(cfg, ck.epoch, eval.accuracy(&ck.params)?);
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_record(&cfg.out_dir, &rec)?;
    Ok(rec)
}
