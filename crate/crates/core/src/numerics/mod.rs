//! Minimal tensor core: reverse-mode autodiff over the ops the generators
//! need, plus the AdamW optimizer.

pub mod adamw;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod tensor;

pub use adamw::{AdamW, AdamWConfig};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Activation, BatchNormMode, Gradients, Graph, RunningStats, Var};
pub use tensor::{Parameter, Scalar, Tensor};
