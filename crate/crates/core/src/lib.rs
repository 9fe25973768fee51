//! Explicit cortical surface reconstruction by learned deformation of a
//! template mesh.
//!
//! The crate is organized bottom-up:
//!
//! * [`mesh`]: triangle meshes, the genus-0 template, midpoint subdivision,
//!   surface sampling, spatial indices and self-intersection counting.
//! * [`geometry`]: curvature, smoothing, signed distances and surface metrics.
//! * [`synth`]: domain-randomized synthetic scans from phantom subjects.
//! * [`nn`]: a small reverse-mode differentiation engine with the volumetric
//!   and mesh operators the networks need.
//! * [`model`]: the feature UNet, the graph deformation networks and their
//!   forward-Euler integration, plus checkpoints.
//! * [`losses`], [`train`], [`eval`]: training objectives, the optimization
//!   loop and the evaluation suite.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod mesh;
pub mod model;
pub mod nifti;
pub mod nn;
pub mod synth;
pub mod train;
pub mod vec3;
pub mod volume;

pub use error::{Error, Result};
pub use mesh::Mesh;
pub use volume::{Grid, Volume};
