use std::path::PathBuf;

use stencilpipe_core::array::DataError;
use stencilpipe_core::frontend::FrontendError;
use stencilpipe_core::oracle::{CompareError, OracleError};
use stencilpipe_core::perf::PerfError;
use stencilpipe_core::sim::SimError;
use stencilpipe_core::transform::TransformError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Program {
        path: PathBuf,
        #[source]
        source: Box<FrontendError>,
    },
    #[error("latency file {}: {source}", path.display())]
    Latencies {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Perf(#[from] PerfError),
    #[error(transparent)]
    Compare(#[from] CompareError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Usage(String),
    #[error("deadlock: {0}")]
    Deadlock(String),
    #[error("verification failed for {0}")]
    Mismatch(String),
    #[error("simulation did not finish within {0} cycles")]
    LimitExceeded(u64),
}

impl CliError {
    /// 2 bad input, 3 deadlock, 4 verification mismatch, 5 cycle limit,
    /// 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Read { .. }
            | CliError::Program { .. }
            | CliError::Latencies { .. }
            | CliError::Frontend(_)
            | CliError::Data(_)
            | CliError::Transform(_)
            | CliError::Perf(_)
            | CliError::Usage(_)
            | CliError::Oracle(OracleError::Data(_))
            | CliError::Sim(SimError::Data(_) | SimError::ZeroDepth(_)) => 2,
            CliError::Deadlock(_) => 3,
            CliError::Mismatch(_) => 4,
            CliError::LimitExceeded(_) => 5,
            _ => 1,
        }
    }
}
