//! Tensor kernels and the convolutional acoustic model, forward and
//! backward, in either f32 (fast) or f64 (gradient-check) arithmetic.

mod model;
pub mod ops;
mod scalar;
mod tensor;

pub use model::{
    build_model, ConvBlockSpec, Gradients, Inference, LayerSpec, ModelConfig, NetError, Network,
    TrainForward,
};
pub use scalar::Scalar;
pub use tensor::Tensor;
