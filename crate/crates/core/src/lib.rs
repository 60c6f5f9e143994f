//! Heatmap-gated positional embedding and its companion machinery.
//!
//! The crate builds, from a (K, H, W) activation tensor and two toy
//! differentiable heads, a set of gradient-weighted detection heatmaps; gates
//! sinusoidal positional encodings by a binary heat mask; fuses class and box
//! heatmap embeddings into encoder Q/K/V; induces and suppresses decoder
//! queries from the mixed heatmap, decoding them with deformable attention
//! under exact cost accounting; applies the dual-path linear-snake
//! convolution; and renders everything as colormapped rasters with a heatbar.
//!
//! All numeric code is generic over the storage scalar ([`Scalar`]: f32 or
//! f64). The CLI and file formats run at f32; verification harnesses
//! instantiate the same code at f64.

pub mod decoder;
pub mod encoder;
pub mod error;
pub mod heads;
pub mod heatmap;
pub mod io;
pub mod lsconv;
pub mod mask_pe;
pub mod numerics;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod viz;

pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::Scalar;

/// f32 tensor: the storage type of the CLI pipeline and the HMPT file format.
pub type Tensor32 = tensor::Tensor<f32>;
/// f64 tensor: the storage type of the verification harnesses.
pub type Tensor64 = tensor::Tensor<f64>;

pub type ClassHead32 = heads::ClassHead<f32>;
pub type ClassHead64 = heads::ClassHead<f64>;
pub type BboxHead32 = heads::BboxHead<f32>;
pub type BboxHead64 = heads::BboxHead<f64>;
