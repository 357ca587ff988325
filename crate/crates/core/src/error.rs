use thiserror::Error;

use crate::connectivity::ConnectivityError;
use crate::filterbank::FilterError;
use crate::metrics::MetricsError;
use crate::ordering::OrderingError;
use crate::signal_io::SignalError;
use crate::tensor::TensorError;

/// Any error the pipeline can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Connectivity(#[from] ConnectivityError),
    #[error(transparent)]
    Ordering(#[from] OrderingError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 2;
    pub const VALIDATION: i32 = 3;
    pub const DEGENERATE: i32 = 4;
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// 2 for I/O, 4 for numerical degeneracy, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        use exit::*;
        match self {
            Error::Context { source, .. } => source.exit_code(),
            Error::Io(_)
            | Error::Signal(SignalError::Io(_))
            | Error::Ordering(OrderingError::Io(_))
            | Error::Tensor(TensorError::Io(_))
            | Error::Tensor(TensorError::Ordering(OrderingError::Io(_)))
            | Error::Metrics(MetricsError::Io(_)) => IO,
            Error::Filter(FilterError::PhaseUndefined)
            | Error::Connectivity(ConnectivityError::DegenerateSignal)
            | Error::Connectivity(ConnectivityError::PartialFailure { .. })
            | Error::Ordering(OrderingError::DegenerateDisparity)
            | Error::Metrics(
                MetricsError::EmptyIncidence
                | MetricsError::NoDiscordance
                | MetricsError::NoVariation
                | MetricsError::Degenerate(_),
            ) => DEGENERATE,
            _ => VALIDATION,
        }
    }
}

/// Attach context to any error convertible into [`Error`].
pub trait Context<T> {
    fn context(self, context: impl Into<String>) -> Result<T>;
    fn with_context<S: Into<String>>(self, f: impl FnOnce() -> S) -> Result<T>;
}

impl<T, E: Into<Error>> Context<T> for std::result::Result<T, E> {
    fn context(self, context: impl Into<String>) -> Result<T> {
        self.map_err(|e| e.into().context(context))
    }

    fn with_context<S: Into<String>>(self, f: impl FnOnce() -> S) -> Result<T> {
        self.map_err(|e| e.into().context(f()))
    }
}
