use thiserror::Error;

/// Errors produced by the simulation crate.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("geometry optimization did not converge after {iterations} iterations (|g| = {grad_norm:.3e} eV/A)")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("stationary point is not a minimum: mode {mode} has eigenvalue {eigenvalue:.3e} eV/A^2")]
    NotAMinimum { mode: usize, eigenvalue: f64 },

    #[error("invalid excitation: {0}")]
    InvalidExcitation(String),

    #[error("invalid determinant: {0}")]
    InvalidDeterminant(String),

    #[error("state normalization failed: sum |b|^2 = {0:.6e}")]
    Normalization(f64),

    #[error("monitor violation at t = {time:.3} fs: {kind} = {value:.3e} exceeds {tolerance:.3e}")]
    MonitorViolation {
        time: f64,
        kind: &'static str,
        value: f64,
        tolerance: f64,
    },

    #[error("nonadiabatic coupling singular: |E_i - E_k| = {gap:.3e} eV with numerator {numerator:.3e}")]
    DegenerateCoupling { gap: f64, numerator: f64 },

    #[error("dense two-body RDM unavailable for {n_sites} sites (cap {cap})")]
    RdmTooLarge { n_sites: usize, cap: usize },

    #[error("Fock basis dimension {dim} exceeds cap {cap}")]
    BasisTooLarge { dim: usize, cap: usize },

    #[error("state-population reconstruction triad is ill-conditioned")]
    IllConditionedTriad,

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("eigensolver failed to converge")]
    EigenConvergence,

    #[error("linear algebra error: {0}")]
    Linalg(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
