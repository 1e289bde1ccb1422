use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("hilbert space of {n_qubits} qubits exceeds the configured budget of {max_qubits} qubits")]
    DimensionOverflow { n_qubits: usize, max_qubits: usize },

    #[error("matrix is not Hermitian: max asymmetry {0:e}")]
    NotHermitian(f64),

    #[error("control value {0} outside [0, 1]")]
    ControlOutOfRange(f64),

    #[error("state is not normalized: norm {0}")]
    NotNormalized(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("error signal amplitude {amplitude} exceeds bound {bound}")]
    ErrorSignalOutOfBound { amplitude: f64, bound: f64 },

    #[error("Frobenius subdifferential requested at H(u) = 0")]
    ZeroMatrixSubgradient,

    #[error("subgradient target {target} outside the singular band [{lo}, {hi}]")]
    OutOfBand { target: f64, lo: f64, hi: f64 },

    #[error("invalid QAOA schedule: {0}")]
    InvalidSchedule(String),

    #[error("non-finite cost encountered during optimization")]
    NonFiniteCost,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
