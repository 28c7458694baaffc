//! Command implementations and plan-file parsing for the `krpsgd` binary.

pub mod commands;
pub mod plan;
