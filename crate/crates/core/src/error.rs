use thiserror::Error;

use crate::model::ConstraintId;
use crate::solvers::SolveStatus;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("duplicate constraint id `{0}`")]
    DuplicateConstraintId(ConstraintId),
    #[error("variable index {index} out of range for a model with {n_vars} variables")]
    VariableOutOfRange { index: usize, n_vars: usize },
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
    #[error("only minimization is supported")]
    Maximization,
    #[error("set {0} is not supported here")]
    UnsupportedSet(String),
    #[error("unsupported problem class: {0}")]
    UnsupportedClass(&'static str),
    #[error("unknown constraint `{0}`")]
    UnknownConstraint(ConstraintId),
    #[error("unknown variable index {0}")]
    UnknownVariable(usize),
    #[error("the model has not been solved to optimality")]
    NotSolved,
    #[error("{0} has not been computed")]
    NotComputed(&'static str),
    #[error("solver finished with status {0:?}")]
    SolverFailed(SolveStatus),
    #[error("quadratic objective is not positive semidefinite (min eigenvalue {0:e})")]
    NotConvex(f64),
    #[error("solution violates complementarity by {0:e}")]
    Complementarity(f64),
    #[error("normalized residual {0:e} too large to differentiate")]
    ResidualTooLarge(f64),
    #[error("homogeneous embedding has vanishing scale component")]
    DegenerateEmbedding,
}

pub type Result<T> = std::result::Result<T, Error>;
