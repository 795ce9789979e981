//! Building blocks for the fedloop federated-learning framework.
//!
//! This crate is deliberately free of any networking or orchestration
//! logic. It provides:
//!
//! - [`types`]: identifiers, endpoints, and per-worker resource profiles
//! - [`weights`]: flat weight vectors and the aggregation kernels
//! - [`warehouse`]: ID-keyed blob storage with pluggable backends
//! - [`trainer`]: data partitioning plus the built-in learning tasks
//! - [`selection`]: worker-selection policies and time estimation
//!
//! Everything here is deterministic given its inputs and seeds, which is
//! what lets the simulation harness and the live socket deployment agree
//! on every decision they make.

pub mod selection;
pub mod trainer;
pub mod types;
pub mod warehouse;
pub mod weights;

pub use types::{DataId, Endpoint, RemoteModelRef, WorkerId, WorkerProfile};
pub use weights::{
    l2_diff, staleness_discount, weighted_average, AggregateError, AggregationEntry,
    AggregationPolicy, Owner, VersionedWeights, WeightVector,
};
