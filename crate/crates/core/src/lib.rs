//! Simulation of bulk-synchronous rank programs on machines with shared
//! memory bandwidth and a latency-bandwidth network.

pub mod analytics;
pub mod collectives;
pub mod contention;
pub mod engine;
pub mod model;
pub mod network;
pub mod noise;
pub mod presets;
