//! Motif-aware design of cis-regulatory DNA sequences.
//!
//! The pipeline has three stages:
//!
//! 1. [`motifs`] scans sequences with position frequency matrices and turns
//!    them into per-motif occurrence counts.
//! 2. [`surrogate`] fits a gradient-boosted tree model on those counts and
//!    [`attribution`] explains it with Shapley values, producing a per-motif
//!    shaping reward (activators positive, repressors negative).
//! 3. [`policy`] is an autoregressive nucleotide model that [`optimizer`]
//!    fine-tunes with REINFORCE, combining the shaping rewards with a
//!    terminal fitness reward from either a ground-truth [`landscape`] or the
//!    surrogate.
//!
//! [`metrics`] scores each round of proposals.

pub mod attribution;
pub mod error;
pub mod landscape;
pub mod metrics;
pub mod motifs;
pub mod optimizer;
pub mod policy;
pub mod rng;
pub mod surrogate;

pub use error::{Error, Result};
