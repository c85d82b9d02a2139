//! Interactive binary segmentation with a sparsely sampled fully-connected CRF.
//!
//! Every pixel may in principle interact with every other pixel. Instead of
//! materialising the dense graph, long-range pairwise cliques are drawn at
//! random with a probability driven by a divergence between the neighbourhood
//! statistics of the two pixels. Pixels are grouped into clusters so that one
//! divergence evaluation serves a whole (pixel, cluster) block. The resulting
//! sparse energy is minimised exactly with an s-t min-cut.
//!
//! The [`graph`] module holds the random-graph laboratory used to check the
//! connectedness and cut-preservation conditions that justify the sampling.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod api;
pub mod cliques;
pub mod config;
pub mod divergence;
pub mod energy;
pub mod error;
pub mod field;
pub mod graph;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use field::{EncodedStats, ImageGrid, ScribbleLabel, ScribbleMask, SegmentationMask};
