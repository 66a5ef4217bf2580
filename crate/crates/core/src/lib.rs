//! Packet-level simulator and analytic model for differentiated load
//! balancing in a two-pod leaf-spine data-center fabric.
//!
//! ECMP pins each flow to a hashed path, RPS sprays every packet, and
//! DiffFlow keeps short flows on ECMP while a sampling controller moves
//! detected long flows to spraying.

pub mod analytic;
pub mod checks;
pub mod config;
pub mod control_plane;
pub mod engine;
pub mod error;
pub mod forwarding;
pub mod metrics;
pub mod sweep;
pub mod time;
pub mod topology;
pub mod traffic;

pub use config::ScenarioConfig;
pub use engine::{run, FlowRecord, RunResult, Scenario, Scheme, Seeds};
pub use error::{Error, Result};
pub use topology::{NodeId, Path, PathSet, Tier, Topology, TopologyParams};
pub use traffic::{FlowClass, FlowSpec, Workload, WorkloadParams};
