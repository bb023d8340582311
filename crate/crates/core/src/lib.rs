//! Learned rigid-body dynamics on point clouds and meshes.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: spatial search, voxel downsampling, mesh adjacency and
//!   interaction-point detection between mesh faces.
//! - [`autodiff`]: a small dense-tensor tape with reverse-mode gradients,
//!   MLPs, the Huber loss and Adam.
//! - [`pointconv`]: continuous point convolutions (object, relational and
//!   mesh face-to-face variants) and the interaction block.
//! - [`unet`]: the hierarchical encoder/bottleneck/decoder network.
//! - [`scenes`]: an analytic rigid-body simulator used as ground truth and
//!   the scene file format.
//! - [`trainer`]: loss, training loop, pose fitting, rollouts, metrics and
//!   the command-line front end.

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod pointconv;
pub mod scenes;
pub mod trainer;
pub mod unet;

pub use error::{Error, Result};

/// Three-component vector in scene units.
pub type Vec3 = nalgebra::Vector3<f64>;
