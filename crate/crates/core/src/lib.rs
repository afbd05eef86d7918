//! Pose-conditioned RGBD generation.
//!
//! A small generator network maps an absolute camera pose to a dense RGBD map.
//! Around it sit the pieces needed to build and check such a model end to end:
//!
//! - [`numerics`]: reverse-mode autodiff tensors and AdamW.
//! - [`pose`]: quaternion/Euler algebra and input normalization.
//! - [`model`]: Base and Slice generators, depth slicing, training and metrics.
//! - [`scene`]: raycast scene oracle producing ground-truth RGBD for any pose.
//! - [`sync`]: video/GPS synchronization and depth scale recovery.
//! - [`datastore`]: on-disk dataset format.

// Range checks are written `!(a < b)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datastore;
pub mod error;
pub mod model;
pub mod numerics;
pub mod pose;
pub mod scene;
pub mod sync;

pub use error::{Error, Result};
