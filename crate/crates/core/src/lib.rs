//! Sparse 4D voxel scene-flow estimation.
//!
//! The pipeline warps a short history of LiDAR sweeps into the newest sweep's
//! frame, voxelizes each sweep with a small point encoder, stacks the sweeps
//! along a time axis into one sparse 4D tensor, runs an hourglass network of
//! spatio-temporal blocks built on submanifold sparse convolution, and decodes
//! per-point motion vectors with a two-layer point head.
//!
//! Everything runs on the CPU with a small reverse-mode tape ([`autodiff`]),
//! so the whole model can be trained, gradient-checked against finite
//! differences and compared with dense reference implementations ([`oracle`]).

pub mod autodiff;
pub mod blob;
pub mod error;
pub mod eval;
pub mod geom;
pub mod nn;
pub mod oracle;
pub mod sparse;
pub mod tensor;
pub mod train;
pub mod voxelize;

pub use error::{Error, Result};
pub use tensor::{Matrix, Real};

/// Time between consecutive sweeps, seconds (10 Hz LiDAR).
pub const SWEEP_INTERVAL: f32 = 0.1;
