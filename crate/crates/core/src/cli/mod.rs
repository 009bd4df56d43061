//! Command-line surface: JSON configuration in, deterministic reports out.

mod commands;
mod config;
mod report;

pub use commands::{run_command, Command, RunOptions, RunOutcome};
pub use config::{parse_config, parse_config_str, EpsilonSpec, ProblemSpec, Rho0Spec};
pub use report::{
    canonical_json, format_float, read_report, render_csv, write_atomic, CommandEcho,
    ModeFpGrid, ModeSimulation, ReportFile, ReportOutput, ToolInfo, SCHEMA_VERSION,
};

use thiserror::Error;

use crate::error::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG_INVALID: i32 = 1;
    pub const NOT_RELIABLE: i32 = 2;
    pub const NUMERICAL: i32 = 3;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config syntax error at line {line}, column {column}: {message}")]
    ConfigSyntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid config field `{field}`: {message}")]
    ConfigValidation { field: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub(crate) fn invalid(field: &str, message: impl Into<String>) -> Self {
        Self::ConfigValidation {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::ConfigSyntax { .. } | Self::ConfigValidation { .. } => exit::CONFIG_INVALID,
            Self::Io { .. } => exit::NUMERICAL,
            Self::Core(e) => core_exit_code(e),
        }
    }
}

/// Exit code for a core error.
pub fn core_exit_code(e: &Error) -> i32 {
    match e {
        Error::NotReliable { .. } | Error::SynthesisFailed { .. } => exit::NOT_RELIABLE,
        Error::Numerical(_)
        | Error::NotHurwitz { .. }
        | Error::Divergence { .. }
        | Error::OutOfBox { .. }
        | Error::NonUnique { .. } => exit::NUMERICAL,
        Error::Dimension(_)
        | Error::UnsupportedDiffusion(_)
        | Error::GridMismatch
        | Error::Domain(_)
        | Error::InvalidInput(_) => exit::CONFIG_INVALID,
    }
}
