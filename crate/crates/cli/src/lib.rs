//! Library side of the `hmpe` binary: configuration, synthetic scenes, the
//! per-stage commands, the end-to-end pipeline, and the verification
//! harnesses. The binary in `main.rs` is a thin argument-parsing shell over
//! these functions so integration tests can drive them directly.

pub mod ablate;
pub mod config;
pub mod gradcheck;
pub mod pipeline;
pub mod stages;
pub mod synth;
