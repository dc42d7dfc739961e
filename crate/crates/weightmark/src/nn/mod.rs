//! Minimal dense/conv network stack: enough to train small hosts and
//! carry a watermark, nothing more.

pub mod checkpoint;
pub mod data;
pub mod layer;
pub mod network;
pub mod train;

pub use checkpoint::{load, save, Checkpoint, CheckpointMeta, EmbedMeta};
pub use data::{synth_dataset, DataConfig, Dataset, DatasetKind};
pub use layer::LayerSpec;
pub use network::{GradBuffers, LayerParams, Network, Workspace};
pub use train::{
    apply_sgd, measure_bers, train, EmbedSpec, EpochRecord, LrDrop, SgdState, TrainConfig,
    TrainHistory,
};
