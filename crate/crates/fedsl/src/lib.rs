//! Deterministic, seed-reproducible simulator of federated split learning
//! for resource-constrained robots over lossy wireless links.
//!
//! The crate is organized around the simulation pipeline:
//!
//! - [`nn`]: f64 dense/ReLU network engine with exact gradients
//! - [`split`]: model partitioning across tiers and payload accounting
//! - [`netphys`]: wireless link budget and DVFS compute physics
//! - [`sim`]: deterministic discrete-event engine and named RNG streams
//! - [`frameworks`]: synchronous / sequential / asynchronous / hierarchical /
//!   heterogeneous federated split learning orchestrations
//! - [`adapt`]: quantization, split-layer selection, resource allocation
//! - [`data`], [`config`], [`metrics`], [`experiment`]: the workbench

pub mod adapt;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod frameworks;
pub mod gradcheck;
pub mod metrics;
pub mod netphys;
pub mod nn;
pub mod rng;
pub mod sim;
pub mod split;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
