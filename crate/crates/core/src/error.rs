use thiserror::Error;

/// Errors raised by the simulator and its verification routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A caller passed malformed arguments (length mismatch, duplicate
    /// qubits, out-of-range indices, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// An object failed an invariant check (non-unitary matrix, fidelity
    /// outside (0, 1], ...).
    #[error("validation failed: {0}")]
    Validation(String),

    /// The request exceeds a hard size limit.
    #[error("capacity exceeded: {what} = {requested} (limit {limit})")]
    Capacity {
        what: &'static str,
        requested: usize,
        limit: usize,
    },

    /// A forced measurement outcome has (numerically) zero probability.
    #[error(
        "impossible branch: outcome {outcome} on qubit {qubit} has probability {probability:e}"
    )]
    ImpossibleBranch {
        qubit: usize,
        outcome: u8,
        probability: f64,
    },

    /// A truncated-basis computation did not converge.
    #[error("convergence failure: {0}")]
    Convergence(String),

    /// Time integration did not reach the requested accuracy.
    #[error("integration failure: {0}")]
    Integration(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn capacity(what: &'static str, requested: usize, limit: usize) -> Result<()> {
    if requested > limit {
        Err(Error::Capacity {
            what,
            requested,
            limit,
        })
    } else {
        Ok(())
    }
}
