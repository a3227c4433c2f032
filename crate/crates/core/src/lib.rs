//! Deterministic agent-orchestration kernel.
//!
//! A planner routes a task to parallel workers; each worker runs a
//! reason/act loop over a budgeted context ledger, then verifies and
//! summarizes. A semantic skill memory is read before planning and written
//! after every run. Model, tool and retrieval backends are pluggable and
//! scriptable so every run can be replayed from its trace.

pub mod cli;
pub mod clock;
pub mod config;
pub mod gateway;
pub mod harness;
pub mod ledger;
pub mod memory;
pub mod model;
pub mod perception;
pub mod replay;
pub mod runtime;
pub mod scenario;
pub mod scheduler;
pub mod tools;
pub mod trace;
