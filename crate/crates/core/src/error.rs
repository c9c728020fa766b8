use std::path::PathBuf;

use crate::harness::Metrics;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input violated an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// No correlation peak reached the detection threshold.
    #[error("PSS not detected (best metric {best_metric:.4} < threshold {threshold:.4})")]
    NotDetected { best_metric: f64, threshold: f64 },

    /// The current round-trip delay exceeds the advertised k_offset.
    #[error("compensation infeasible: round-trip delay {delay_s:.6e} s exceeds k_offset {k_offset_s:.6e} s")]
    CompensationInfeasible { delay_s: f64, k_offset_s: f64 },

    #[error("compensation state not ready: {0}")]
    NotReady(&'static str),

    #[error("regenerative relay failed: {0}")]
    RelayFailure(String),

    /// Scenario aborted; carries whatever metrics were collected before the failure.
    #[error("scenario failed: {reason}")]
    ScenarioFailure {
        reason: String,
        partial: Box<Metrics>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error on {}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
