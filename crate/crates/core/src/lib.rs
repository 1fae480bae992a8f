//! Resolution distillation toolkit.
//!
//! A teacher classifier is trained on full-resolution images, then a student
//! with the same architecture learns from it on Lanczos-downsampled views of
//! (optionally unlabeled) images. The loss combines a temperature-softened KL
//! term on the logits with a mean-squared hint term between resized teacher
//! feature maps and the student's own.
//!
//! Module map:
//! - [`tensor`]: dense tensors, a reverse-mode tape, losses, Adam, He init.
//! - [`resize`]: Lanczos-3, Catmull-Rom bicubic and adaptive max-pool resamplers.
//! - [`model`]: residual classifier with group normalization, checkpoints, FLOP counts.
//! - [`data`]: synthetic multi-scale dataset, pyramids, augmentation, splits.
//! - [`distill`]: teacher training, distillation, fine-tuning, ablation.
//! - [`eval`]: one-vs-rest metrics, bootstrap intervals, tradeoff reports.
//! - [`config`]: the fully resolved run configuration.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod model;
pub mod resize;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
