//! Cross-domain feature knowledge distillation for single-domain generalized
//! object detection.
//!
//! A teacher detector trained on clean source images is frozen; an
//! architecturally identical student sees corrupted, downscaled copies of the
//! same images and is trained with the detection loss plus global and
//! instance-wise cosine feature-matching losses against the teacher.

pub mod autograd;
pub mod checkpoint;
pub mod corrupt;
pub mod detector;
pub mod distill;
pub mod eval;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod optim;
pub mod raster;
pub mod scenes;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use raster::Image;
pub use tensor::Tensor;
