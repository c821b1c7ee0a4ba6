//! Repulsive multi-head attention.
//!
//! Attention heads are treated as particles drawn from a posterior over
//! attention parameters and trained with particle-optimization samplers
//! (SVGD, SPOS) instead of independent gradient steps. The crate bundles the
//! numeric substrate, kernels, samplers, a desk-scale self-attentive sentence
//! classifier with exact gradients, the training loop, diagnostics (head
//! diversity, masking redundancy, calibration, predictive entropy) and an
//! experiment harness.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod attention;
pub mod data;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod metrics;
pub mod numeric;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};
