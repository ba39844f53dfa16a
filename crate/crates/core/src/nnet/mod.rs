//! A small CPU training engine: convolution, batch norm, bottleneck
//! residual blocks, softmax cross-entropy, and SGD with a multistep
//! learning-rate schedule.
//!
//! Every layer is generic over [`Scalar`] so that training runs in `f32`
//! while gradient checks run the same code in `f64`.

mod batchnorm;
mod block;
mod checkpoint;
mod conv;
pub mod gradcheck;
mod layers;
mod loss;
mod model;
mod module;
mod optim;
mod scalar;
mod tensor;
mod train;

pub use self::batchnorm::BatchNorm2d;
pub use self::block::Bottleneck;
pub use self::checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use self::conv::{conv2d_backward, conv2d_forward, Conv2d};
pub use self::layers::{GlobalAvgPool, Linear, MaxPool2x2, Relu};
pub use self::loss::softmax_cross_entropy;
pub use self::model::{build_model, Model, ModelDescriptor};
pub use self::module::{Mode, Module, Param, Slot};
pub use self::optim::{lr_at_epoch, sgd_step, Sgd};
pub use self::scalar::Scalar;
pub use self::tensor::Tensor4;
pub use self::train::{
    evaluate, evaluate_checkpoint, predict, train, write_metrics, EpochMetrics, TrainConfig,
    TrainOutcome,
};
