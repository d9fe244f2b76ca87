//! Temporally consistent occlusion boundary detection in video.
//!
//! A video is over-segmented into spatio-temporal super-voxels; every
//! boundary between two neighbouring regions in a frame (an *edgelet*) is
//! described by appearance, optical-flow and geometric-context cues and
//! scored by a random forest.  A second forest scores the continuity of
//! adjacent edgelets; both feed a per-frame pairwise MRF solved with loopy
//! belief propagation, and the resulting probabilities are averaged over a
//! causal temporal window per edgelet.
//!
//! Pipeline stages, in order:
//!
//! - [`synth`]: layered synthetic scenes with exact ground truth
//! - [`flow`]: coarse-to-fine Horn–Schunck optical flow
//! - [`segment`]: graph-based super-voxel segmentation, optionally occlusion-aware
//! - [`edgelet`]: boundary fragments, their identity over time and junction graph
//! - [`features`]: the 26-dimensional per-instance feature vector
//! - [`learn`]: random forests with out-of-bag importance
//! - [`infer`]: factor graph, loopy BP and temporal smoothing
//! - [`eval`]: boundary matching, PR curves, cross-validation folds
//! - [`pipeline`]: configuration and end-to-end orchestration

pub mod edgelet;
pub mod error;
pub mod eval;
pub mod features;
pub mod flow;
pub mod infer;
pub mod learn;
pub mod media;
pub mod pipeline;
pub mod segment;
pub mod synth;

pub use error::{Error, Result};
