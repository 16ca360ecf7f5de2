use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes. Everything at or above 64 is an error.
pub mod exit {
    pub const ACCEPT: u8 = 0;
    pub const REJECT: u8 = 3;
    pub const USAGE: u8 = 64;
    pub const DATA: u8 = 65;
    pub const NO_INPUT: u8 = 66;
    pub const CONFIG: u8 = 67;
    pub const DEGENERATE: u8 = 68;
    pub const OPTIMIZATION: u8 = 69;
    pub const SOFTWARE: u8 = 70;
    pub const CANT_CREATE: u8 = 73;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] biasbench_core::Error),

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use biasbench_core::Error as E;
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Write { .. } => exit::CANT_CREATE,
            CliError::Internal(_) => exit::SOFTWARE,
            CliError::Core(e) => match e {
                E::Parse { .. } | E::Format(_) | E::Json(_) => exit::DATA,
                E::Io { .. } => exit::NO_INPUT,
                E::Shape(_)
                | E::Bounds(_)
                | E::Domain(_)
                | E::Config(_)
                | E::Size(_)
                | E::Fit(_)
                | E::Bound(_) => exit::CONFIG,
                E::DegenerateVariance => exit::DEGENERATE,
                E::Optimization(_) => exit::OPTIMIZATION,
            },
        }
    }
}

/// Reclassifies I/O failures of an output step as write failures.
pub(crate) fn writing<T>(r: biasbench_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| match e {
        biasbench_core::Error::Io { path, source } => CliError::Write { path, source },
        other => other.into(),
    })
}
