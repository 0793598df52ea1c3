//! Dynamic radiance fields for monocular video with depth supervision.
//!
//! A canonical network maps encoded position and view direction to color
//! and density; a displacement network warps each sample by time. Rays are
//! rendered by volume quadrature and trained with Adam against per-frame
//! color and depth. Once, during training, the noisiest supervision depths
//! in each mask region are swapped for the model's own rendered depth.
//!
//! - [`diffcore`]: matrices, MLPs with reverse mode, Adam, checkpoints.
//! - [`fields`]: positional encoding and the two-network field.
//! - [`rendering`]: cameras, rays, quadrature, differentiable batches.
//! - [`refinement`]: masks and quantile depth replacement.
//! - [`training`]: the optimization loop, logs and model checkpoints.
//! - [`data`]: dataset I/O and the analytic synthetic scene.
//! - [`metrics`]: PSNR, SSIM and evaluation reports.
//! - [`export`]: point clouds and PLY files.

pub mod data;
pub mod diffcore;
pub mod export;
pub mod fields;
pub mod metrics;
pub mod raster;
pub mod refinement;
pub mod rendering;
pub mod training;
