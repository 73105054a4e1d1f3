//! Decentralized SGD laboratory.
//!
//! Simulates decentralized and centralized minibatch SGD over gossip
//! networks, audits consensus and convergence bounds numerically, and
//! measures transient times under homogeneous and heterogeneous data.

pub mod algorithms;
pub mod bounds;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod objectives;
pub mod rng;
pub mod topology;

pub use error::{Error, Result};
