//! Affine constraint reformulations `f₁(x) ∈ S₁  ⇔  A f₁(x) + B u + c ∈ S₂`
//! and the transport of solutions and tangents across them.
//!
//! Forward tangents move with `A`, reverse tangents with the adjoint `Aᵀ`
//! (all spaces carry the Euclidean inner product), primal values with
//! `A⁻¹(· − c)` and duals with `Aᵀ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::Lu;
use crate::model::{ConeSet, Constraint};

#[derive(Debug, Clone, PartialEq)]
pub struct AffineBridge {
    pub source_set: ConeSet,
    pub target_set: ConeSet,
    /// `A`, mapping source function values to target function values.
    pub map: DMatrix<f64>,
    /// `B`, coefficients of auxiliary variables. Always empty for the bridges
    /// built by [`make_bridge`].
    pub aux: DMatrix<f64>,
    /// `c`.
    pub shift: DVector<f64>,
}

impl AffineBridge {
    pub fn source_dim(&self) -> usize {
        self.map.ncols()
    }

    pub fn target_dim(&self) -> usize {
        self.map.nrows()
    }
}

/// Dense tangent (or gradient) of an affine function `C x + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTangent {
    pub coefficients: DMatrix<f64>,
    pub constants: DVector<f64>,
}

impl AffineTangent {
    pub fn zeros(rows: usize, n: usize) -> Self {
        AffineTangent {
            coefficients: DMatrix::zeros(rows, n),
            constants: DVector::zeros(rows),
        }
    }

    pub fn rows(&self) -> usize {
        self.constants.len()
    }

    pub fn dot(&self, other: &AffineTangent) -> f64 {
        self.coefficients.dot(&other.coefficients) + self.constants.dot(&other.constants)
    }
}

/// Fixed lowering table for sets the standard forms do not hold natively.
pub fn make_bridge(source_set: &ConeSet) -> Result<AffineBridge> {
    let scalar = |target, a: f64, c: f64| AffineBridge {
        source_set: *source_set,
        target_set: target,
        map: DMatrix::from_element(1, 1, a),
        aux: DMatrix::zeros(1, 0),
        shift: DVector::from_element(1, c),
    };
    match *source_set {
        ConeSet::GreaterThan(v) => Ok(scalar(ConeSet::Nonnegative(1), 1.0, -v)),
        ConeSet::LessThan(v) => Ok(scalar(ConeSet::Nonnegative(1), -1.0, v)),
        ConeSet::EqualTo(v) => Ok(scalar(ConeSet::Zero(1), 1.0, -v)),
        ConeSet::Nonpositive(d) => Ok(AffineBridge {
            source_set: *source_set,
            target_set: ConeSet::Nonnegative(d),
            map: -DMatrix::identity(d, d),
            aux: DMatrix::zeros(d, 0),
            shift: DVector::zeros(d),
        }),
        other => Err(Error::UnsupportedSet(format!(
            "{} has no bridge",
            other.name()
        ))),
    }
}

/// `Δf₁ ↦ A Δf₁`.
pub fn map_forward_tangent(bridge: &AffineBridge, tangent: &AffineTangent) -> Result<AffineTangent> {
    check_rows(bridge.source_dim(), tangent.rows(), "forward tangent rows")?;
    Ok(AffineTangent {
        coefficients: &bridge.map * &tangent.coefficients,
        constants: &bridge.map * &tangent.constants,
    })
}

/// `Δf₂ ↦ Aᵀ Δf₂`, the adjoint of [`map_forward_tangent`].
pub fn map_reverse_tangent(bridge: &AffineBridge, gradient: &AffineTangent) -> Result<AffineTangent> {
    check_rows(bridge.target_dim(), gradient.rows(), "reverse tangent rows")?;
    Ok(AffineTangent {
        coefficients: bridge.map.tr_mul(&gradient.coefficients),
        constants: bridge.map.tr_mul(&gradient.constants),
    })
}

/// Recovers the source-side primal function value and dual from the
/// target-side ones.
pub fn unbridge_solution(
    bridge: &AffineBridge,
    primal: &DVector<f64>,
    dual: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_rows(bridge.target_dim(), primal.len(), "target primal")?;
    check_rows(bridge.target_dim(), dual.len(), "target dual")?;
    let lu = Lu::factor(&bridge.map);
    let source_primal = lu.solve(&(primal - &bridge.shift));
    Ok((source_primal, bridge.map.tr_mul(dual)))
}

/// A constraint rewritten as `C x + k ∈ set` with `set` one of Zero,
/// Nonnegative, SecondOrder or PsdTriangle.
#[derive(Debug, Clone, PartialEq)]
pub struct LoweredConstraint {
    pub coefficients: DMatrix<f64>,
    pub constants: DVector<f64>,
    pub set: ConeSet,
    pub bridge: Option<AffineBridge>,
}

pub fn lower_constraint(con: &Constraint, n: usize) -> Result<LoweredConstraint> {
    let (c, k) = con.function.to_dense(n);
    match con.set {
        ConeSet::Zero(_) | ConeSet::Nonnegative(_) | ConeSet::SecondOrder(_) | ConeSet::PsdTriangle(_) => {
            Ok(LoweredConstraint {
                coefficients: c,
                constants: k,
                set: con.set,
                bridge: None,
            })
        }
        _ => {
            let bridge = make_bridge(&con.set)?;
            Ok(LoweredConstraint {
                coefficients: &bridge.map * c,
                constants: &bridge.map * k + &bridge.shift,
                set: bridge.target_set,
                bridge: Some(bridge),
            })
        }
    }
}

fn check_rows(expected: usize, got: usize, context: &'static str) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected,
            got,
            context,
        })
    }
}
