//! Library surface of the scenario runner, used by the binary and the
//! acceptance suite.

pub mod commands;
pub mod config;
pub mod output;
