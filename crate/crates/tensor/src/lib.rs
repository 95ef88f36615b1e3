//! Reverse-mode autodiff on dense tensors, generic over the floating point
//! element type.
//!
//! The engine is deliberately small: row-major [`Tensor`] storage, a
//! tape-free graph of reference-counted [`Var`] nodes, and the operator set
//! needed by stereo matching networks (convolutions, bilinear resampling,
//! horizontal warping, batched matrix products, softmax).

pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod ops;
pub mod scalar;
pub mod tensor;

pub use gradcheck::{check_gradient, GradCheckReport};
pub use graph::{Gradients, Var};
pub use nn::{seeded_rng, Adam, AdamConfig, Bindings, Conv, Init, ParamId, ParamSet, SeededRng};
pub use ops::conv::ConvGeometry;
pub use scalar::{gemm, Scalar};
pub use tensor::{broadcast_shapes, numel, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Var32 = Var<f32>;
pub type Var64 = Var<f64>;
pub type ParamSet32 = ParamSet<f32>;
pub type ParamSet64 = ParamSet<f64>;
