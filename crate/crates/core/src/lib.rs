//! Deterministic federated-learning simulation with backdoor attacks and
//! server-side defenses.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: a flat-parameter MLP with manual backprop and a per-batch SGD hook.
//! - [`data`]: synthetic classification tasks, Dirichlet partitioning and
//!   backdoor dataset construction.
//! - [`attacks`]: MIGO (region-constrained training, adaptive region
//!   estimation, layer forcing) plus the BackPGD, MRepl and Neurotoxin baselines.
//! - [`defenses`]: norm clipping, noise, Krum/mKrum, FoolsGold, Flame-lite,
//!   FreqFed, FLShield-lite and coordinate-wise median/trimmed mean.
//! - [`engine`]: client selection, local training dispatch, aggregation and
//!   round recording.
//! - [`metrics`]: backdoor/benign accuracy, longevity and run summaries.
//!
//! Every random choice is derived from an explicit 64-bit seed, so repeated
//! runs are bit-identical regardless of how local training is parallelised.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod data;
pub mod defenses;
pub mod engine;
mod error;
pub mod metrics;
pub mod nn;
pub mod rng;
#[cfg(test)]
mod testkit;

pub use error::{Error, Result};
