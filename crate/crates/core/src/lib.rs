//! Tensor kernels, layers, model, training loop, data pipeline and
//! evaluation for a 3D fully convolutional depth-video action classifier.

pub mod error;
pub mod eval;
pub mod data;
pub mod layers;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{Architecture, Model};
pub use tensor::{Scalar, Tensor};
