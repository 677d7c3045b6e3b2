//! Desk-scale research toolkit for variational autoencoders.
//!
//! The crate bundles, under one training harness:
//!
//! - the plain ELBO, the weighted-KL objective, the capacity-constrained
//!   bottleneck objective, and a linearly annealed weighted-KL objective
//!   ([`objectives`]);
//! - a small convolutional encoder/decoder family with hand-derived
//!   backpropagation ([`models`], [`nn`]);
//! - dataset-level rate/distortion measurement and hyperparameter sweeps that
//!   empirically check the rate/distortion ordering of trained models
//!   ([`rd_analysis`]);
//! - six disentanglement metrics plus a linear-probe protocol ([`metrics`]);
//! - factor datasets: a procedural desk-scale generator, the published
//!   binary-sprites archive format, and a labeled image-folder ingester
//!   ([`datasets`]).
//!
//! Everything is deterministic under fixed seeds. The `vaekit` binary exposes
//! the `train`, `sweep`, `metrics`, `probe`, and `traverse` subcommands; the
//! `examples/` directory has one runnable example per major capability.

pub mod cli;
pub mod config;
pub mod datasets;
pub mod distributions;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod objectives;
pub mod plotting;
pub mod rd_analysis;
pub mod trainer;

mod error;

pub use error::{Error, Result};
