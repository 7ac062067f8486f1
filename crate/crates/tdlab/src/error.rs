//! Unified error type shared by every module.

use thiserror::Error;

/// Errors surfaced by model construction, linear algebra, sampling,
/// algorithm runs, and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A pivot fell below the singularity tolerance during Gaussian elimination.
    #[error("singular matrix: pivot magnitude {pivot:.3e} below tolerance")]
    SingularMatrix { pivot: f64 },

    /// A matrix handed to the symmetric eigensolver is not symmetric.
    #[error("matrix not symmetric: max asymmetry {asymmetry:.3e}")]
    NotSymmetric { asymmetry: f64 },

    /// Invalid construction parameters (e.g. branching > n_states).
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// Operands with incompatible dimensions.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The induced chain has no unique invariant distribution.
    #[error("chain is not ergodic: {0}")]
    NotErgodic(String),

    /// Behavior policy assigns zero probability to an action the target supports.
    #[error("coverage violation at state {s}, action {a}: target {pi:.3e} > 0 but behavior 0")]
    CoverageViolation { s: usize, a: usize, pi: f64 },

    /// The A moment matrix is singular (solvability assumption violated).
    #[error("A matrix singular; instance violates the solvability assumption")]
    SingularA,

    /// The C moment matrix is singular (solvability assumption violated).
    #[error("C matrix singular; instance violates the solvability assumption")]
    SingularC,

    /// A spectral constant that must be positive is not.
    #[error("matrix not negative definite: {name} = {value:.3e} <= 0")]
    NotNegativeDefinite { name: &'static str, value: f64 },

    /// Geometric-ergodicity estimate with rho >= 1.
    #[error("invalid mixing estimate: rho = {rho} >= 1")]
    InvalidMixing { rho: f64 },

    /// Epsilon outside (0, 1) handed to the schedule generator.
    #[error("invalid epsilon {0}; must lie in (0, 1)")]
    InvalidEpsilon(f64),

    /// A Markovian run was given fewer samples than epochs * batch size.
    #[error("trajectory too short: need {needed} transitions, got {got}")]
    TrajectoryTooShort { needed: usize, got: usize },

    /// Configuration file failed to parse.
    #[error("config parse error: {0}")]
    ParseError(String),

    /// Configuration parsed but failed validation.
    #[error("config validation failed: {0}")]
    ValidationError(String),

    /// Filesystem failure in the harness.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
