//! Attention-based, variable-degree data prefetching over segmented block
//! addresses.
//!
//! The crate is `no_std` (with `alloc`) and holds the whole algorithmic
//! pipeline:
//!
//! - [`trace`]: access records, address geometry, splitting and synthetic
//!   pattern generation.
//! - [`features`]: address segmentation, PC folding, page-distance context and
//!   the tokenized ablation encodings.
//! - [`labeling`]: delta-bitmap labels and their inverse.
//! - [`dataset`]: labeled samples built from a trace.
//! - [`model`]: the attention predictor, its exact backward pass, BCE loss,
//!   ADAM training and the latency estimate.
//! - [`throttle`]: F1-optimal confidence thresholds.
//! - [`sim`]: a set-associative LLC with a prefetch pipeline and baseline
//!   prefetchers.
//!
//! File formats, configuration and the command line live in the companion
//! `segpf` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod dataset;
pub mod error;
pub mod features;
pub mod labeling;
pub mod model;
pub mod sim;
pub mod tensor;
pub mod throttle;
pub mod trace;

pub use error::{Error, Result};
