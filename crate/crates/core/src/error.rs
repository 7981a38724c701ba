use thiserror::Error;

use crate::lure_lq::LureSolution;

/// Errors raised by the numerical kernels and solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPsd { eigenvalue: f64 },

    #[error("matrix is not Hurwitz (spectral abscissa {abscissa:e})")]
    NotStable { abscissa: f64 },

    #[error("ill-conditioned input: {0}")]
    Conditioning(String),

    #[error("no stabilizing solution: {0}")]
    Unsolvable(String),

    #[error("system is not stabilizable (closed-loop spectral abscissa {abscissa:e})")]
    Unstabilizable { abscissa: f64 },

    #[error("regularization schedule exhausted without convergence (last increment {last_increment:e})")]
    NoConvergence {
        last_increment: f64,
        solution: Box<LureSolution>,
    },

    #[error("trajectory diverged at sample {index}")]
    Diverged { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed document: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
