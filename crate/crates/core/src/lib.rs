//! Human and object motion reconstruction from body-worn IMU and camera streams.
//!
//! The crate is `no_std` (with `alloc`). It holds every algorithm of the
//! pipeline: rigid geometry and robust alignment, bending-energy deformation
//! of trajectories and pose sequences, a simplified kinematic body, object
//! localization and contact tracking, IMU/camera calibration, drift
//! correction, interaction refinement, a deterministic scenario simulator
//! and the staged pipeline itself. File formats and the command line live in
//! the `hops` companion crate.

#![no_std]
// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bending;
pub mod body;
pub mod calibrate;
mod error;
pub mod fuse;
pub mod geometry;
pub mod object;
mod optim;
pub mod pipeline;
pub mod refine;
pub mod sim;

pub use error::{Error, Result};
