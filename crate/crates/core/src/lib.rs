//! Spatial augmentation lab for small Siamese self-supervised models.
//!
//! Crop-pair samplers with controlled overlap, cutout variants, a distance
//! margin for the negative-cosine objective, a tiny trainable encoder, kNN
//! evaluation and a sweep harness.

pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod harness;
pub mod imaging;
pub mod loss;
pub mod model;
pub mod seeds;

pub use data::{Dataset, SynthCfg, SynthMode};
pub use error::{Error, Result};
pub use eval::{accuracy, embed_dataset, knn_accuracy, knn_classify, EmbeddingTable};
pub use geometry::{AugSpec, ImageDims, Rect, RectPair};
pub use imaging::{Image, PhotoCfg, ViewPair};
pub use loss::{simsiam_loss, LossOutput, MarginSpec};
pub use model::{ArchCfg, Checkpoint, ModelParams, OptCfg, OptState};
