//! LeNet-style convolutional network trained with plain minibatch SGD.

mod checkpoint;
mod gradcheck;
mod layers;
mod network;
mod real;
mod train;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{
    check_random_lenet, compare_with_central_differences, gradient_check, relative_error, GradCheckReport, TensorCheck, FD_STEP,
    REL_FLOOR,
};
pub use layers::{LayerParams, LayerSpec, Shape, Tensor};
pub use network::{
    argmax, build_lenet, cross_entropy, lenet_specs, ForwardCache, GradientSet, Layer, Network, NUM_CLASSES,
};
pub use real::Real;
pub use train::{dataset_loss, error_rate, evaluate, predict_proba, train_epoch, EpochReport, TrainConfig, CHUNK};

#[derive(Debug, Error)]
pub enum CnnError {
    #[error("layer {layer} cannot fit a {input} input")]
    ShapeUnderflow { layer: usize, input: Shape },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
