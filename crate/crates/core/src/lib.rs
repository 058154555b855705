//! Contrastive alignment of brain-signal encoders to frozen image-embedding
//! spaces, with retrieval scoring and gradient attribution.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below pin the binary64 instantiation the pipeline runs on.

pub mod attribution;
pub mod encoders;
pub mod error;
pub mod evalstats;
pub mod fft;
pub mod io;
pub mod preproc;
pub mod retrieval;
pub mod scalar;
pub mod synthgen;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape64 = tensor::Tape<f64>;
