//! Deterministic simulation: scenario scripts, fault plans, the event loop
//! and the tools built on it.

pub mod bench;
pub mod faults;
pub mod matrix;
pub mod review;
pub mod scenario;
pub mod trace;
pub mod workload;
pub mod world;

pub use faults::{Action, FaultPlan};
pub use scenario::{Group, Scenario};
pub use trace::Trace;
pub use world::{credit_fold, run, NodeId, Options, Outcome, World};
