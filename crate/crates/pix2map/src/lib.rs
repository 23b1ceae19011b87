//! Desk-scale cross-modal retrieval between street-level imagery and
//! lane graphs.
//!
//! The pipeline: synthesize paired (image-feature, lane-graph) data,
//! encode both modalities into a shared embedding space with a
//! contrastive + graph-similarity objective, then retrieve maps from
//! images (and vice versa) by cosine similarity against an embedded
//! graph library.
//!
//! All numeric model code is generic over the scalar type through
//! [`Scalar`]; `f32` is the working precision and `f64` is available for
//! verification. Geometry and metrics stay in `f64` throughout.

pub mod autodiff;
pub mod encoders;
pub mod fsutil;
pub mod lanegraph;
pub mod metrics;
pub mod retrieval;
mod scalar;
pub mod synthdata;
pub mod training;

pub use scalar::Scalar;

pub use lanegraph::{EgoPose, LaneSegment, NodeGraph, SegmentGraph};

/// Single-precision tensor, the training default.
pub type Tensor32 = autodiff::Tensor<f32>;
/// Double-precision tensor for gradient checks and verification runs.
pub type Tensor64 = autodiff::Tensor<f64>;
/// Single-precision tape.
pub type Tape32 = autodiff::Tape<f32>;
/// Double-precision tape.
pub type Tape64 = autodiff::Tape<f64>;
/// Single-precision model parameters, the training default.
pub type ModelParams32 = encoders::ModelParams<f32>;
/// Double-precision model parameters for verification runs.
pub type ModelParams64 = encoders::ModelParams<f64>;
