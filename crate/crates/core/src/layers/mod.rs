//! Forward and backward kernels for every layer type of the network.
//!
//! Backward passes are written by hand, one per kernel. Each takes the
//! forward input (and whatever the forward call cached) and returns input
//! and parameter gradients.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dropout;
pub mod loss;
pub mod pool;

pub use activation::{leaky_relu, leaky_relu_backward, LEAKY_ALPHA};
pub use batchnorm::{BatchNorm, BatchNormCache, BatchNormGrads};
pub use conv::{conv_backward, conv_forward, ConvGrads, ConvParams, ConvSpec, Padding};
pub use dropout::{dropout, dropout_backward, DropoutMask};
pub use loss::{cross_entropy, softmax};
pub use pool::{global_avgpool2d, global_avgpool2d_backward, MaxPool3d, PoolArgmax};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
