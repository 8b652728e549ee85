//! Uncertainty-guided, per-sample model merging.
//!
//! Task vectors from several fine-tuned copies of one base network are mixed
//! with weights produced by a small router. The router is trained without
//! labels: an entropy objective on the merged predictions plus a contrastive
//! term whose positive and negative neighbours come from a Dirichlet
//! evidential head and an adjacency discrepancy score.

// `!(x > 0.0)` is the NaN-rejecting form used by every validator.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjacency;
pub mod archive;
pub mod bench;
pub mod error;
pub mod evidential;
pub mod nn;
pub mod rng;
pub mod router;
pub mod tensor;

pub use error::{Error, Result};
