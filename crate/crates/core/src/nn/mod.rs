//! Convolutional classifier implemented from first principles.

pub mod checkpoint;
mod layers;
mod model;
mod tensor;

pub use layers::{conv2d_same, dropout, relu, softmax_output, KERNEL};
pub use model::{
    accuracy, fit, flatten_width, forward, forward_eval, labels_from_probabilities, loss_and_grad, parameter_count,
    predict, predict_samples, sgd_step, EpochStats, FitOutcome, ForwardTrace, ModelParams, Prediction, TrainConfig,
    CLASSES, FILTERS, TENSOR_NAMES,
};
pub use tensor::Tensor;
