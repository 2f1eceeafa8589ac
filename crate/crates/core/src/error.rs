//! Crate-wide error type.

use std::fmt;

/// Errors surfaced by the numerical routines, the simulator and the learner.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Shapes do not line up (empty vector, non-square matrix, ...).
    Dimension(String),
    /// An input violated a contract (asymmetry, non-finite entries, ...).
    Validation(String),
    /// A matrix that must be full rank is not; carries the numerical rank found.
    RankDeficient {
        required: usize,
        found: usize,
        context: String,
    },
    /// A matrix required to be Schur (spectral radius < 1) is not.
    NotSchur { spectral_radius: f64 },
    /// An iteration hit its cap before meeting its tolerance.
    Convergence { iterations: usize, context: String },
    /// Collected data is not rich enough to identify the unknowns.
    Excitation(String),
    /// Inconsistent configuration (e.g. internal model not matching the exosystem).
    Config(String),
    /// Invalid argument (e.g. reversed window bounds).
    Argument(String),
    /// A simulation produced a non-finite state.
    Divergence { step: u64 },
    /// A numerical kernel failed (eigenvalue/SVD non-convergence, singular solve).
    Numerical(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension error: {msg}"),
            Error::Validation(msg) => write!(f, "validation error: {msg}"),
            Error::RankDeficient {
                required,
                found,
                context,
            } => write!(
                f,
                "rank deficient: {context}: required {required}, numerical rank {found}"
            ),
            Error::NotSchur { spectral_radius } => {
                write!(f, "matrix is not Schur: spectral radius {spectral_radius}")
            }
            Error::Convergence {
                iterations,
                context,
            } => write!(f, "no convergence after {iterations} iterations: {context}"),
            Error::Excitation(msg) => write!(f, "insufficient excitation: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Argument(msg) => write!(f, "argument error: {msg}"),
            Error::Divergence { step } => {
                write!(
                    f,
                    "simulation diverged: first non-finite value at step {step}"
                )
            }
            Error::Numerical(msg) => write!(f, "numerical error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
