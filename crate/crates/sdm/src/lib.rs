//! File formats, reports and the subcommands of the `sdm` tool, on top of
//! `sdm-core`.

pub mod bench;
pub mod commands;
pub mod config;
pub mod features;
pub mod reports;

pub use commands::{Arm, Context};
pub use config::RunConfig;
