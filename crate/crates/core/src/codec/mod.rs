//! Residual multiscale vector-quantized codec: model, codebook, index maps,
//! training and checkpoints.

pub mod checkpoint;
pub mod codebook;
pub mod model;
pub mod pyramid;
pub mod train;

pub use codebook::Codebook;
pub use model::{hedging_loss, index_bits, vq_losses, CodecConfig, CodecModel, VqLosses};
pub use pyramid::{latent_dims, scale_dims, scale_factor, IndexGrid, IndexMapPyramid, LATENT_STRIDE};
pub use train::{codebook_utilization, train, EpochStats, TrainClip, TrainConfig, TrainLog};
