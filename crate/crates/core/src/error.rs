use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrapeError {
    #[error("invalid system parameters: {0}")]
    InvalidParams(String),

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("invalid control grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("incoherent control must be non-negative, got {0}")]
    NegativeIncoherentControl(f64),

    #[error("spectral basis is numerically singular (condition number {0:.3e})")]
    SingularBasis(f64),

    #[error("Uhlmann-Jozsa derivative undefined for a singular final state (pure-state boundary)")]
    SingularFinalState,

    #[error("quadrature needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),

    #[error("index out of range: ({i}, {j}) for dimension {n}")]
    IndexOutOfRange { i: usize, j: usize, n: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite {what} encountered")]
    NonFinite { what: &'static str },

    #[error("invalid spectral density: {0}")]
    InvalidDensity(String),
}

pub type Result<T> = std::result::Result<T, GrapeError>;
