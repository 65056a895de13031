//! Structured lottery-ticket discovery in tiny transformer encoders.
//!
//! The crate is organized around the experiment pipeline:
//!
//! - [`tensor`] / [`tape`] — dense row-major tensors with reverse-mode
//!   gradients recorded on a Wengert tape. Generic over `f32`/`f64`;
//!   `f32` is the training precision, `f64` exists for gradient checks.
//! - [`model`] — a maskable transformer encoder classifier/regressor.
//!   Every attention head carries a mask scalar `xi` and every FFN
//!   sublayer a mask scalar `nu`; both live on the tape so their
//!   gradients (the importance signals) come out of the same backward
//!   pass as the weight gradients.
//! - [`tasks`] — deterministic synthetic sequence-task generators.
//! - [`trainer`] — Adamax with linear warmup/decay, clipping, early
//!   stopping.
//! - [`tickets`] — importance scoring, layer-wise normalization, ticket
//!   selection at graded sparsity, weight rewinding, super-ticket choice.
//! - [`mtl`] — tickets-sharing multi-task training and the cross-task
//!   importance report.

pub mod error;
pub mod mtl;
pub mod model;
pub mod tape;
pub mod tasks;
pub mod tensor;
pub mod tickets;
pub mod trainer;

pub use error::{CoreError, Result};
pub use tensor::{Real, Tensor};
