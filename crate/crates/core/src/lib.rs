//! Probabilistic visual hull reconstruction from a handful of calibrated
//! views, refined by a patch-based 3D convolutional autoencoder.
//!
//! The pipeline runs in stages, one module each:
//!
//! - [`calib`]: pinhole cameras and rig files.
//! - [`matte`]: soft foreground mattes (8-bit PGM) and sub-pixel sampling.
//! - [`synth`]: analytic scenes, camera rings and ray-traced mattes.
//! - [`pvh`]: fusing per-view matte evidence into an occupancy grid.
//! - [`patch`]: dense overlapping sub-volume extraction and reassembly.
//! - [`net`]: the hourglass autoencoder, its gradients and Adadelta training.
//! - [`mesh`]: threshold selection, marching cubes and OBJ export.
//! - [`metrics`]: voxel MSE, PSNR, SSIM and silhouette reprojection.
//!
//! Numeric kernels in [`net`] and [`metrics`] are generic over [`Real`]
//! (`f32` or `f64`); the aliases below pick the widths used by the pipeline.

pub mod calib;
pub mod error;
pub mod matte;
pub mod mesh;
pub mod metrics;
pub mod net;
pub mod patch;
pub mod pvh;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Real;

/// Single-precision tensor used for training and inference.
pub type Tensor = net::Tensor4<f32>;
/// Double-precision tensor, used by gradient checks.
pub type Tensor64 = net::Tensor4<f64>;
/// Autoencoder parameters at pipeline precision.
pub type Model = net::ModelWeights<f32>;
/// Autoencoder parameters in double precision.
pub type Model64 = net::ModelWeights<f64>;
/// Greyscale image at pipeline precision.
pub type Image = metrics::Image<f32>;
