//! Multi-task segmentation at desk scale: a single shared encoder feeding
//! parallel mask, contour, and distance decoders, trained jointly with a
//! weighted combination of per-pixel classification and regression losses.
//!
//! The crate is self-contained: a minimal reverse-mode autodiff engine
//! ([`tensor`]), the network and its ablation variants ([`net`]), ground
//! truth derivation from segmentation masks ([`targets`]), the joint loss
//! ([`loss`]), the evaluation suite ([`metrics`]), the Adam training loop
//! with checkpointing ([`trainer`]), dataset plumbing and a synthetic shape
//! generator ([`data`]), and the command-line pipeline ([`cli`]).

pub mod cli;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod targets;
pub mod tensor;
pub mod trainer;

#[cfg(test)]
pub(crate) mod test_util;

pub use error::{Error, Result};
