//! Crate-wide error type with the exit-code categories used by the CLI.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("mobility symbol has a positive entry {value:.3e} at mode ({kx},{ky}); G_h must be negative semi-definite")]
    MobilitySign { value: f64, kx: usize, ky: usize },

    #[error("invalid Butcher tableau: {0}")]
    InvalidTableau(String),

    #[error("stage count {0} out of supported range 1..=10")]
    StageCount(usize),

    #[error("tableau fails the algebraic stability condition (residual {residual:.3e}); pass allow_unstable_tableau to override")]
    UnstableTableau { residual: f64 },

    #[error("SAV radicand (g(phi),1)_h + C0 = {value:.6e} is not positive (C0 = {c0}); increase C0")]
    NonpositiveRadicand { value: f64, c0: f64 },

    #[error("stage iteration did not converge after {iterations} iterations (residual {residual:.3e}, t = {time})")]
    StageDiverged {
        iterations: usize,
        residual: f64,
        time: f64,
    },

    #[error("step {step} at t = {time} failed: {source}")]
    StepFailed {
        step: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("snapshot format error: {0}")]
    SnapshotFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI exit code: 1 config, 2 numerical failure, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) => 1,
            Error::Io(_) | Error::SnapshotFormat(_) => 3,
            Error::StepFailed { source, .. } => source.exit_code().max(2),
            _ => 2,
        }
    }
}
