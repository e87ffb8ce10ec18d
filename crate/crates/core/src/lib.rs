//! Core of a multi-graph, multi-task node-classification pretraining stack.
//!
//! Graphs from heterogeneous datasets are tokenized per node, compressed into a
//! fixed set of learned latent tokens by cross-attention, and decoded per node
//! from a short sequence of (self, sampled neighbors, latents). Training runs
//! over many graphs at once with a snake-order bucket scheduler.
//!
//! Everything here is pure computation over `alloc` collections; file formats,
//! caching and the command line live in the companion `graphfm` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod config;
pub mod decoder;
pub mod encoder;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod posenc;
pub mod rng;
pub mod sampler;
pub mod synth;
pub mod tokenizer;
pub mod trainer;

pub use config::{ModelConfig, Preset};
pub use graph::{DatasetManifest, Graph, Labels, Role, Split, Task};
pub use model::GraphFm;
pub use numerics::{Scalar, Tape, Tensor, Var};
