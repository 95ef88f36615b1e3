//! Signed-disparity stereo matching for remote-sensing image pairs.

pub mod error;
pub mod field;
pub mod losses;
pub mod cost_volume;
pub mod data;
pub mod model;
pub mod disparity;
pub mod evaluation;
pub mod photometric;
pub mod training;
pub mod verification;

pub use error::{Result, StereoError};
pub use field::{DisparityField, ImagePlane, Mask};
pub use model::{Family, ModelConfig, StereoModel};

pub use satstereo_tensor::{Tensor32, Tensor64, Var32, Var64};

pub type StereoModel32 = StereoModel<f32>;
pub type StereoModel64 = StereoModel<f64>;
pub type ModelOutput32 = model::ModelOutput<f32>;
pub type ModelOutput64 = model::ModelOutput<f64>;
