//! From-scratch implementation of a lightweight anchor-based detector built
//! on ghost and dilated-ghost convolutions, with:
//!
//! - dense 4-D tensors, forward operators, and reverse-mode gradients,
//! - the network blocks (CBL, ghost conv, dilated ghost conv, the
//!   split-transform-merge feature block, the multiscale pool/ghost block),
//! - the full backbone, multiscale neck, and three detection heads,
//! - training losses (BCE objectness/class, IoU box), SGD with momentum,
//! - AP50/mAP50 evaluation,
//! - a per-layer parameter and multiply-accumulate analyzer,
//! - file formats: config, YOLO-style annotations, manifests, weights.
//!
//! All numerics are `f64` in memory; weights serialize as little-endian
//! `f32`. Operators parallelize over disjoint chunks via `rayon` when the
//! default `parallel` feature is on, and fall back to identical sequential
//! loops when it is off; results are bit-identical either way.

pub mod analyzer;
pub mod blocks;
pub mod error;
pub mod eval;
pub mod exec;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod loss;
pub mod model;
pub mod ops;
pub mod par;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
