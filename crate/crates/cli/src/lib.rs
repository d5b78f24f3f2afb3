//! Command-line driver: run configuration, checkpoints, training runs,
//! sweeps, evaluation reports and cross-run comparison tables.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod envs;

use std::fmt;

/// A problem with the user's configuration or inputs, reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Exit code for a failed command: the first error in the chain that has a
/// known category decides.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<arl_core::Error>() {
            use arl_core::Error as E;
            return match e {
                E::Config(_) | E::MazeParse(_) | E::ScenarioParse { .. } | E::Dimension { .. } => EXIT_CONFIG,
                E::Io(_) | E::GridParse { .. } => EXIT_IO,
                _ => EXIT_RUNTIME,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_RUNTIME
}
