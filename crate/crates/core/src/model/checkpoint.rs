//! Checkpoint files.
//!
//! A checkpoint is a single JSON document:
//!
//! ```text
//! {
//!   "format": "siamaug-checkpoint",
//!   "version": 1,
//!   "seed": <u64>,        // run seed
//!   "epoch": <usize>,     // epochs completed
//!   "params": { ... },    // ModelParams<f32>, tensors as flat arrays
//!   "opt": { "velocity": [[...], ...], "step": <u64> }
//! }
//! ```
//!
//! All randomness in a run is derived from `(seed, epoch, sample index)`, so
//! the seed and epoch counter are the complete generator state needed to
//! resume.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::ModelParams;
use super::optim::OptState;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "siamaug-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub epoch: usize,
    pub params: ModelParams<f32>,
    pub opt: OptState<f32>,
}

impl Checkpoint {
    pub fn new(seed: u64, epoch: usize, params: ModelParams<f32>, opt: OptState<f32>) -> Self {
        Checkpoint { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, seed, epoch, params, opt }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec(self)?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Schema(format!(
                "{} is not a version {CHECKPOINT_VERSION} checkpoint (format {:?}, version {})",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        ck.params.arch.validate()?;
        Ok(ck)
    }
}
