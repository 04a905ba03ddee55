//! Differentiable convex optimization: solves quadratic and conic programs
//! and differentiates their solutions with respect to the problem data in
//! forward (tangent) and reverse (gradient) mode.
//!
//! ```
//! use optdiff::{ConeSet, DiffEngine, ProblemBuilder, ScalarAffineFunction, ScalarQuadraticFunction};
//!
//! let mut b = ProblemBuilder::new();
//! let x = b.add_variable();
//! b.add_constraint("cons", ScalarAffineFunction::variable(x), ConeSet::GreaterThan(3.0));
//! b.minimize(ScalarQuadraticFunction::affine(ScalarAffineFunction::new(vec![(x, 2.0)], 0.0)));
//!
//! let mut engine = DiffEngine::new(b.build()?);
//! engine.optimize()?;
//! engine.set_reverse_variable(x, 1.0)?;
//! engine.reverse_differentiate()?;
//! let grad = &engine.reverse_constraint(&"cons".into())?.rows()[0];
//! assert!((grad.coefficient(x) + 3.0).abs() < 1e-9);
//! assert!((grad.constant - 1.0).abs() < 1e-9);
//! # Ok::<(), optdiff::Error>(())
//! ```

pub mod api;
pub mod bridges;
pub mod cones;
pub mod conic_diff;
pub mod error;
pub mod linalg;
pub mod model;
pub mod qp_diff;
pub mod solvers;

pub use api::{DiffEngine, EngineSettings, SolverChoice};
pub use error::{Error, Result};
pub use model::{
    ConeSet, Constraint, ConstraintFunction, ConstraintId, ProblemBuilder, ProblemClass, ProblemModel,
    ScalarAffineFunction, ScalarQuadraticFunction, Sense, VariableId, VectorAffineFunction,
};
pub use solvers::{SolveInfo, SolveStatus, SolverSettings};
