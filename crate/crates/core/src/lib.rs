//! Core state machines for a crash-tolerant registration master.
//!
//! This crate is `no_std` and only needs an allocator. It contains the
//! registry (nodes, topics, services, parameters), the reconciliation pass
//! run after a restart, and the threshold rule used by the master monitor.
//! Networking, persistence and process control live in the `rescue` crate.

#![no_std]

extern crate alloc;

mod error;
pub mod failure;
mod names;
pub mod params;
pub mod reconcile;
pub mod registry;

pub use error::{InvariantViolation, NotFound, ValidationError};
pub use failure::{update_and_decide, Decision, PollHistory, PollOutcome};
pub use names::{EndpointUri, GraphName};
pub use params::{ParamError, ParamKey, ParamTree, ParamValue};
pub use reconcile::{reconcile, Reconciled};
pub use registry::{
    MasterState, NodeRecord, Outcome, PublisherUpdate, RegistryEvent, ServiceRecord, SystemState, TopicRecord,
    WILDCARD_TYPE,
};
