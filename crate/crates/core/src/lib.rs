//! Lifting 2D human keypoints to root-relative 3D poses with a graph network
//! that attends over k-hop neighborhoods and refines joints within limb groups.

pub mod data;
pub mod error;
pub mod export;
pub mod gradsuite;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod skeleton;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;
pub use tensor::{Tape, Tensor, Var};
