//! File formats, caching, the training runner and the command line around
//! `graphfm-core`.
//!
//! - [`dataset`]: dataset directories (meta.json, edges, features, labels, splits)
//! - [`pe`]: Laplacian positional-encoding cache keyed by graph content
//! - [`corpus`]: loading a directory of datasets for training
//! - [`checkpoint`]: manifest + binary tensor checkpoints
//! - [`exec`]: threaded bucket execution
//! - [`run`]: pretraining, finetuning, evaluation and sweep pipelines
//! - [`reports`]: CSV metrics, corpus statistics and plan reports
//! - [`config`]: settings merged from a TOML file and flags
//! - [`cli`]: the `graphfm` command

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod pe;
pub mod reports;
pub mod run;

pub use error::{Error, Result};
