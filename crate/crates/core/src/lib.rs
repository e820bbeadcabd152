//! Deterministic simulator for an autonomous ultrasound-guided central venous
//! catheterization pipeline.
//!
//! The crate is organised the way the pipeline runs:
//!
//! - [`geometry`]: rigid transforms, pose frames and the pixel-to-base chain.
//! - [`phantom`]: parametric skin surface, compliant vessel tubes, landmarks.
//! - [`planning`]: noisy landmarks, scan triangle, path fan, scan trajectories.
//! - [`ultrasound`]: virtual probe, scans, compression sweeps, scan logs.
//! - [`perception`]: insertion-pose selection, vein/artery classification,
//!   centerline reconstruction.
//! - [`needle`]: remote-center-of-motion kinematics, collision pivot search,
//!   closed-loop advancement.
//! - [`eval`]: ICP, nearest-neighbour centerline metrics and the end-to-end
//!   scenario runner.
//!
//! All lengths are millimetres, forces Newtons and angles degrees unless a
//! name says otherwise.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod geometry;
pub mod needle;
pub mod perception;
pub mod phantom;
pub mod planning;
mod rng;
pub mod ultrasound;

pub use error::{Error, Result};
pub use rng::{derive_seed, seeded_rng};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Vec2 = nalgebra::Vector2<f64>;
