//! Dynamic-temperature knowledge distillation.
//!
//! The crate is organized bottom-up:
//!
//! - [`numkit`]: stable logsumexp / softmax / KL / cross-entropy and a seeded RNG.
//! - [`distill`]: sharpness, per-sample temperature pairs, the loss stack and
//!   analytic student-logit gradients.
//! - [`net`]: a small ReLU MLP with hand-written backprop, SGD with momentum and
//!   a warmup + step learning-rate schedule.
//! - [`data`]: seeded synthetic classification data and its binary file format.
//! - [`harness`]: teacher training, distillation runs and the sweep grids.
//! - [`analysis`]: difficulty buckets, per-bucket temperatures and accuracy,
//!   confidence summaries.
//! - [`config`]: the dotted key/value experiment config format.

// Range checks are written `!(x > 0.0)` on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod data;
pub mod distill;
mod error;
pub mod harness;
pub mod net;
pub mod numkit;

pub use error::{Error, Result};
