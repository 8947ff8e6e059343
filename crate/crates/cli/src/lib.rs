//! Command-line front end for the `dsml` planner: configuration files, the
//! built-in `paper-demo` preset, true-system validation and CSV/JSON output.

use std::path::PathBuf;

use dsml::gp::GpError;
use dsml::planner::PlannerError;
use dsml::rollout::RolloutError;
use dsml::tasks::TaskError;
use thiserror::Error;

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod validate;

pub use commands::{run, Cli, Outcome};
pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Gp(#[from] GpError),
}
