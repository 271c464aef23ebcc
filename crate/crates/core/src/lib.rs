//! Assessment and correction of recorded exercise performances from 2D
//! COCO-17 keypoint sequences.
//!
//! The pipeline: load keypoints ([`io`]), normalize skeletons
//! ([`normalization`]), build pairwise joint direction descriptors and joint
//! angles ([`kinematics`]), align candidate and reference in time
//! ([`alignment`]), score joint alignment, pace and range of motion
//! ([`assessment`]), and render corrective arrows ([`correction`]).
//! [`transformer`] holds a small spatial-temporal transformer scorer, and
//! [`synth`] a parametric motion generator used as a test oracle.

pub mod alignment;
pub mod assessment;
pub mod config;
pub mod correction;
pub mod error;
pub mod io;
pub mod kinematics;
pub mod normalization;
pub mod report;
pub mod skeleton;
pub mod synth;
pub mod transformer;

pub use error::{Error, ErrorKind, Result};
