//! Federated graph prompt learning simulator.
//!
//! A server hosts a GNN encoder; clients hold prompts and classification
//! heads for node-, edge- or graph-level tasks. Training runs the split
//! protocol over an in-memory, byte-accounted transport, and client
//! parameters are combined with directed transferability weights.

pub mod accounting;
pub mod checkpoint;
pub mod cli;
pub mod codec;
pub mod config;
pub mod encoder;
pub mod federation;
pub mod graph;
pub mod hidta;
pub mod metrics;
pub mod privacy;
pub mod prompt;
pub mod tasks;
pub mod vpg;
