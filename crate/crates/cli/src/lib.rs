//! Command-line front end: `simulate` writes seeded snapshots, `estimate`
//! runs methods on one data set, `bench` sweeps Monte Carlo trials over a
//! scenario grid. All angles are degrees and all powers linear.

pub mod commands;
pub mod config;
pub mod container;

pub use commands::{run, Command, Invocation};
pub use config::{load, Format, MethodChoice, RawConfig, RunConfig};
pub use container::SnapshotFile;

/// Exit status 2 for configuration errors, 1 for everything else.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}
