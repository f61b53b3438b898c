use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("eig-no-convergence: QR iteration stalled after {iterations} sweeps")]
    EigNoConvergence { iterations: usize },

    #[error("singular-system: estimated condition number {condition:e}")]
    SingularSystem { condition: f64 },

    #[error("rank-deficient: numerical rank {rank} of {expected} columns")]
    RankDeficient { rank: usize, expected: usize },

    #[error("state-blowup at index {index}")]
    StateBlowup { index: usize },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("newton-no-convergence after {iterations} iterations (residual {residual:e})")]
    NewtonNoConvergence { iterations: usize, residual: f64 },

    #[error("subspace-exhausted: {unconverged} unstable Ritz values unconverged after {restarts} restarts")]
    SubspaceExhausted { unconverged: usize, restarts: usize },

    #[error("diverged-update: non-finite {what} loss")]
    DivergedUpdate { what: &'static str },

    #[error("not-detected: no instability within {budget} snapshots")]
    NotDetected { budget: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config-not-found: {}", .0.display())]
    ConfigNotFound(PathBuf),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
