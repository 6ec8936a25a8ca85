//! Run configuration, stored as JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{gen_synthetic, load_cifar10, Dataset, SynthCfg, SynthMode};
use crate::error::{param, Result};
use crate::geometry::AugSpec;
use crate::imaging::PhotoCfg;
use crate::loss::MarginSpec;
use crate::model::{ArchCfg, OptCfg};

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Standard CIFAR-10 binary batches in `dir`.
    Cifar10 { dir: PathBuf, split: CifarSplit },
    Synthetic(SynthCfg),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CifarSplit {
    Train,
    Test,
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSpec::Cifar10 { dir, split } => {
                let (train, test) = load_cifar10(dir)?;
                Ok(match split {
                    CifarSplit::Train => train,
                    CifarSplit::Test => test,
                })
            }
            DatasetSpec::Synthetic(cfg) => gen_synthetic(cfg),
        }
    }

    fn check_paths(&self) -> Result<()> {
        match self {
            DatasetSpec::Cifar10 { dir, .. } if !dir.is_dir() => {
                Err(param(format!("CIFAR-10 directory {} does not exist", dir.display())))
            }
            DatasetSpec::Synthetic(cfg) => cfg.validate(),
            _ => Ok(()),
        }
    }
}

/// kNN evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalCfg {
    pub k: usize,
    /// Labeled reference set. Defaults to the training set.
    pub bank: Option<DatasetSpec>,
    /// Labeled query set. `None` disables evaluation.
    pub queries: Option<DatasetSpec>,
    /// Evaluate every this many epochs; 0 means only after the last epoch.
    pub every: usize,
}

impl Default for EvalCfg {
    fn default() -> Self {
        EvalCfg {
            k: 20,
            bank: None,
            queries: Some(DatasetSpec::Synthetic(SynthCfg { n_samples: 1000, seed: 1_000_003, ..SynthCfg::default() })),
            every: 0,
        }
    }
}

fn default_dataset() -> DatasetSpec {
    DatasetSpec::Synthetic(SynthCfg::default())
}

fn default_epochs() -> usize {
    20
}

fn default_batch() -> usize {
    128
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

fn default_true() -> bool {
    true
}

/// Everything that determines a training run. Only `seed` is mandatory in the
/// JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_dataset")]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub aug: AugSpec,
    #[serde(default = "default_margin")]
    pub margin: MarginSpec,
    #[serde(default)]
    pub photo: PhotoCfg,
    #[serde(default)]
    pub arch: ArchCfg,
    #[serde(default)]
    pub optim: OptCfg,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub eval: EvalCfg,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Replace `arch.input_mean`/`input_std` by the training-set channel
    /// statistics before training starts.
    #[serde(default = "default_true")]
    pub standardize_from_data: bool,
}

fn default_margin() -> MarginSpec {
    MarginSpec::NoMargin
}

impl RunConfig {
    pub fn new(seed: u64) -> Self {
        RunConfig {
            dataset: default_dataset(),
            aug: AugSpec::default(),
            margin: MarginSpec::NoMargin,
            photo: PhotoCfg::default(),
            arch: ArchCfg::default(),
            optim: OptCfg::default(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            seed,
            eval: EvalCfg::default(),
            out_dir: default_out(),
            standardize_from_data: true,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| param(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.aug.validate()?;
        self.margin.validate()?;
        self.arch.validate()?;
        self.optim.validate()?;
        if self.batch_size < 2 {
            return Err(param(format!("batch size must be at least 2 (got {})", self.batch_size)));
        }
        if self.eval.k == 0 {
            return Err(param("eval.k must be at least 1"));
        }
        let photo = &self.photo;
        if !(0.0..=1.0).contains(&photo.flip_prob)
            || !(0.0..=1.0).contains(&photo.grayscale_prob)
            || !(0.0..1.0).contains(&photo.brightness)
            || !(0.0..1.0).contains(&photo.contrast)
        {
            return Err(param(format!("photometric settings out of range: {photo:?}")));
        }
        self.dataset.check_paths()?;
        for spec in self.eval.bank.iter().chain(&self.eval.queries) {
            spec.check_paths()?;
        }
        if let (DatasetSpec::Synthetic(s), None, Some(_)) = (&self.dataset, &self.eval.bank, &self.eval.queries) {
            if s.mode == SynthMode::SceneCentric {
                return Err(param("scene-centric training data is unlabeled; set eval.bank to a labeled dataset"));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let canonical = RunConfig { out_dir: PathBuf::new(), ..self.clone() };
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
