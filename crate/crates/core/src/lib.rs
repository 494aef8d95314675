//! Camera conditioning, view-integrated attention layouts, EDM sampling,
//! multi-view data curation and pose/epipolar evaluation metrics for
//! camera-controllable multi-view video diffusion.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the `*F64`
//! aliases below name the double-precision instantiations used by the CLI.

// `!(a > b)` is how NaN inputs get rejected throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod camera;
pub mod curation;
pub mod dataset;
pub mod defaults;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod scalar;
pub mod tensor_io;

pub use error::{Error, Result};
pub use scalar::Real;

pub type CameraPoseF64 = camera::CameraPose<f64>;
pub type CameraIntrinsicsF64 = camera::CameraIntrinsics<f64>;
pub type PoseSequenceF64 = camera::PoseSequence<f64>;
pub type PluckerGridF64 = camera::PluckerGrid<f64>;
pub type LatentTensorF64 = attention::LatentTensor<f64>;
pub type LatentTensorF32 = attention::LatentTensor<f32>;
pub type FeatureStatsF64 = metrics::FeatureStats<f64>;
