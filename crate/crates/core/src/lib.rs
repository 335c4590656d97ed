//! Lightweight multi-scale feature (LMF) layers and the LMFNet saliency
//! network, built on hand-written CPU kernels with explicit backward passes.
//!
//! The math is generic over [`Scalar`] (`f32` or `f64`); the aliases below fix
//! the precision for the common cases. Training and gradient checks run in
//! `f64`, inference may use `f32`.

pub mod analysis;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod layer;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, ParseError, Result};
pub use scalar::{DType, Scalar};
pub use tensor::{ParamRole, ParamTensor, Parameterized, Shape, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
