//! Exact-enumeration laboratory for domain generalization under causal
//! latent decompositions.
//!
//! The crate is `no_std` with `alloc`. It covers finite generative families
//! and their domains ([`cld`], [`fixtures`]), exact enumeration of losses,
//! optimal predictors and structural claims ([`oracle`]), a small
//! reverse-mode differentiation engine with a feature-extractor/linear-head
//! model ([`diffkit`]), contrastive pair generation ([`pairgen`]), the
//! training objectives ([`objectives`]), evaluation ([`metrics`]) and a
//! deterministic training loop ([`train`]).
#![no_std]
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod cld;
pub mod diffkit;
pub mod error;
pub mod fixtures;
pub mod metrics;
pub mod objectives;
pub mod oracle;
pub mod pairgen;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
