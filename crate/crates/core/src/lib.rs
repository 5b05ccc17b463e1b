//! Performability analysis of chained softwarized network services.
//!
//! The crate is split along the two halves of the analysis:
//!
//! * [`qnet`] and [`alloc`] cover performance: an open queueing network of
//!   M/G/c nodes (Cosmetatos approximation) and the greedy container
//!   allocation that meets an end-to-end delay target.
//! * [`srn`], [`deploy`] and [`search`] cover availability: a generic
//!   stochastic reward net solver, the five-layer network replica models built
//!   on it, and the pruned search over redundancy configurations.

pub mod alloc;
pub mod deploy;
pub mod qnet;
pub mod search;
pub mod srn;

pub use alloc::{optcnt, stability_floor, Allocation, AllocationResult};
pub use deploy::{DeploymentConfig, LayerRates};
pub use qnet::{ChainSpec, NodeSpec};
