//! Fault-tolerant master: XML-RPC endpoint, checkpointing, recovery,
//! external monitor and fault-injection harness.

pub mod checkpoint;
pub mod endpoint;
pub mod fault;
pub mod harness;
pub mod monitor;
pub mod recovery;
pub mod rpc;
pub mod slave;
pub mod writer;
pub mod xmlrpc;
