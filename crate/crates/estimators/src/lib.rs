//! 1D convolutional estimators for squeezed-light tomography: a
//! characteristic head regressing `(r, θ_s, n_th)` and a reconstruction head
//! emitting a Cholesky factor, with training, checkpointing and gradient
//! checks.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod input;
pub mod network;
pub mod predict;
pub mod scalar;
pub mod train;

pub use augment::Augmentation;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointMeta, TrainingMeta};
pub use config::{CnnConfig, HeadKind, HeadSpec, StageSpec};
pub use error::{Error, Result};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use input::scan_input;
pub use network::{mse_loss, Cache, Model, TensorInfo};
pub use predict::{predict_density, predict_densities, predict_params, predict_params_batch};
pub use scalar::Scalar;
pub use train::{train, train_on, write_loss_log, AdamConfig, EpochRecord, TrainConfig, TrainReport, TrainingData};
