//! Euclidean projections onto the supported cones, their Jacobians, and the
//! composite projection onto `ℝⁿ × K* × ℝ₊` used by the homogeneous
//! self-dual embedding.
//!
//! Dual cones: the zero cone's dual is the whole space; the nonnegative,
//! nonpositive, second-order and (scaled-triangle) semidefinite cones are
//! self-dual.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::ConeSet;

/// Distance to a nondifferentiability point below which a Jacobian is
/// flagged as a kink selection.
pub const KINK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ConeJacobian {
    pub matrix: DMatrix<f64>,
    /// The point lies within [`KINK_TOL`] of a kink; `matrix` is the fixed
    /// selection documented on [`project_jacobian`].
    pub near_kink: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub value: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub near_kink: bool,
}

/// Ordered product of cones with contiguous offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeProduct {
    blocks: Vec<(ConeSet, usize)>,
    dim: usize,
}

impl ConeProduct {
    pub fn new(cones: &[ConeSet]) -> Result<Self> {
        let mut blocks = Vec::with_capacity(cones.len());
        let mut at = 0;
        for cone in cones {
            check_supported(cone)?;
            blocks.push((*cone, at));
            at += cone.dim();
        }
        Ok(ConeProduct { blocks, dim: at })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[(ConeSet, usize)] {
        &self.blocks
    }

    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.map_blocks(v, project)
    }

    pub fn project_dual(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.map_blocks(v, project_dual)
    }

    /// Block-diagonal Jacobian of the dual-cone projection.
    pub fn project_dual_jacobian(&self, v: &DVector<f64>) -> Result<ConeJacobian> {
        check_dim(self.dim, v.len())?;
        let mut matrix = DMatrix::zeros(self.dim, self.dim);
        let mut near_kink = false;
        for (cone, off) in &self.blocks {
            let d = cone.dim();
            let j = project_dual_jacobian(cone, &v.rows(*off, d).clone_owned())?;
            matrix.view_mut((*off, *off), (d, d)).copy_from(&j.matrix);
            near_kink |= j.near_kink;
        }
        Ok(ConeJacobian { matrix, near_kink })
    }

    fn map_blocks(
        &self,
        v: &DVector<f64>,
        f: fn(&ConeSet, &DVector<f64>) -> Result<DVector<f64>>,
    ) -> Result<DVector<f64>> {
        check_dim(self.dim, v.len())?;
        let mut out = DVector::zeros(self.dim);
        for (cone, off) in &self.blocks {
            let d = cone.dim();
            let p = f(cone, &v.rows(*off, d).clone_owned())?;
            out.rows_mut(*off, d).copy_from(&p);
        }
        Ok(out)
    }
}

fn check_supported(cone: &ConeSet) -> Result<()> {
    if cone.is_scalar() {
        Err(Error::UnsupportedSet(format!(
            "{} is not a cone; lower it through a bridge",
            cone.name()
        )))
    } else {
        Ok(())
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected,
            got,
            context: "cone projection input",
        })
    }
}

/// Euclidean projection of `v` onto `cone`.
pub fn project(cone: &ConeSet, v: &DVector<f64>) -> Result<DVector<f64>> {
    check_supported(cone)?;
    check_dim(cone.dim(), v.len())?;
    Ok(match *cone {
        ConeSet::Zero(d) => DVector::zeros(d),
        ConeSet::Nonnegative(_) => v.map(|x| x.max(0.0)),
        ConeSet::Nonpositive(_) => v.map(|x| x.min(0.0)),
        ConeSet::SecondOrder(_) => project_soc(v),
        ConeSet::PsdTriangle(side) => project_psd(v, side),
        _ => unreachable!(),
    })
}

/// Projection onto the dual cone `K*`.
pub fn project_dual(cone: &ConeSet, v: &DVector<f64>) -> Result<DVector<f64>> {
    match cone {
        ConeSet::Zero(d) => {
            check_dim(*d, v.len())?;
            Ok(v.clone())
        }
        _ => project(cone, v),
    }
}

/// Jacobian of [`project`] at `v`.
///
/// At kinks a fixed element is returned: zero for vanishing nonnegative
/// components, the identity on the boundary `‖x‖ = t` of the second-order
/// cone and zero on `‖x‖ = −t`, and the divided-difference factor
/// `1[λᵢ > 0]` for repeated semidefinite eigenvalues.
pub fn project_jacobian(cone: &ConeSet, v: &DVector<f64>) -> Result<ConeJacobian> {
    check_supported(cone)?;
    check_dim(cone.dim(), v.len())?;
    let d = cone.dim();
    Ok(match *cone {
        ConeSet::Zero(_) => ConeJacobian {
            matrix: DMatrix::zeros(d, d),
            near_kink: false,
        },
        ConeSet::Nonnegative(_) => ConeJacobian {
            matrix: DMatrix::from_diagonal(&v.map(|x| if x > 0.0 { 1.0 } else { 0.0 })),
            near_kink: v.iter().any(|x| x.abs() <= KINK_TOL),
        },
        ConeSet::Nonpositive(_) => ConeJacobian {
            matrix: DMatrix::from_diagonal(&v.map(|x| if x < 0.0 { 1.0 } else { 0.0 })),
            near_kink: v.iter().any(|x| x.abs() <= KINK_TOL),
        },
        ConeSet::SecondOrder(_) => soc_jacobian(v),
        ConeSet::PsdTriangle(side) => psd_jacobian(v, side),
        _ => unreachable!(),
    })
}

pub fn project_dual_jacobian(cone: &ConeSet, v: &DVector<f64>) -> Result<ConeJacobian> {
    match cone {
        ConeSet::Zero(d) => {
            check_dim(*d, v.len())?;
            Ok(ConeJacobian {
                matrix: DMatrix::identity(*d, *d),
                near_kink: false,
            })
        }
        _ => project_jacobian(cone, v),
    }
}

/// Projection onto `ℝⁿ × K* × ℝ₊` and its (block-diagonal) Jacobian.
pub fn pi_hsde(z: &DVector<f64>, cones: &ConeProduct, n: usize) -> Result<ProjectionResult> {
    let m = cones.dim();
    check_dim(n + m + 1, z.len())?;
    let v = z.rows(n, m).clone_owned();
    let dual = cones.project_dual_jacobian(&v)?;
    let w = z[n + m];

    let mut value = z.clone();
    value.rows_mut(n, m).copy_from(&cones.project_dual(&v)?);
    value[n + m] = w.max(0.0);

    let mut jacobian = DMatrix::zeros(n + m + 1, n + m + 1);
    jacobian.view_mut((0, 0), (n, n)).fill_with_identity();
    jacobian.view_mut((n, n), (m, m)).copy_from(&dual.matrix);
    jacobian[(n + m, n + m)] = if w > 0.0 { 1.0 } else { 0.0 };
    Ok(ProjectionResult {
        value,
        jacobian,
        near_kink: dual.near_kink || w.abs() <= KINK_TOL,
    })
}

fn project_soc(v: &DVector<f64>) -> DVector<f64> {
    let t = v[0];
    let x = v.rows(1, v.len() - 1);
    let nx = x.norm();
    if nx <= t {
        v.clone()
    } else if nx <= -t {
        DVector::zeros(v.len())
    } else {
        let a = 0.5 * (t + nx);
        let mut out = DVector::zeros(v.len());
        out[0] = a;
        out.rows_mut(1, v.len() - 1).copy_from(&(x * (a / nx)));
        out
    }
}

fn soc_jacobian(v: &DVector<f64>) -> ConeJacobian {
    let d = v.len();
    let t = v[0];
    let x = v.rows(1, d - 1).clone_owned();
    let nx = x.norm();
    let near_kink = (nx - t.abs()).abs() <= KINK_TOL;
    let matrix = if nx <= t {
        DMatrix::identity(d, d)
    } else if nx <= -t {
        DMatrix::zeros(d, d)
    } else {
        let u = &x / nx;
        let mut j = DMatrix::zeros(d, d);
        j[(0, 0)] = 0.5;
        for i in 0..d - 1 {
            j[(0, i + 1)] = 0.5 * u[i];
            j[(i + 1, 0)] = 0.5 * u[i];
        }
        let ratio = t / nx;
        let mut block = DMatrix::identity(d - 1, d - 1) * (1.0 + ratio) - &u * u.transpose() * ratio;
        block *= 0.5;
        j.view_mut((1, 1), (d - 1, d - 1)).copy_from(&block);
        j
    };
    ConeJacobian { matrix, near_kink }
}

/// Side length of a PSD triangle of vector dimension `d`.
pub fn psd_side(d: usize) -> Option<usize> {
    let s = ((((8 * d + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (s * (s + 1) / 2 == d).then_some(s)
}

/// Scaled upper-triangle vector to symmetric matrix.
pub fn psd_unvec(v: &DVector<f64>, side: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(side, side);
    let mut k = 0;
    for j in 0..side {
        for i in 0..=j {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                let e = v[k] / std::f64::consts::SQRT_2;
                m[(i, j)] = e;
                m[(j, i)] = e;
            }
            k += 1;
        }
    }
    m
}

/// Symmetric matrix to scaled upper-triangle vector.
pub fn psd_vec(m: &DMatrix<f64>) -> DVector<f64> {
    let side = m.nrows();
    let mut v = DVector::zeros(side * (side + 1) / 2);
    let mut k = 0;
    for j in 0..side {
        for i in 0..=j {
            v[k] = if i == j {
                m[(i, i)]
            } else {
                0.5 * (m[(i, j)] + m[(j, i)]) * std::f64::consts::SQRT_2
            };
            k += 1;
        }
    }
    v
}

fn project_psd(v: &DVector<f64>, side: usize) -> DVector<f64> {
    let eig = SymmetricEigen::new(psd_unvec(v, side));
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let u = &eig.eigenvectors;
    psd_vec(&(u * DMatrix::from_diagonal(&clamped) * u.transpose()))
}

fn psd_jacobian(v: &DVector<f64>, side: usize) -> ConeJacobian {
    let d = v.len();
    let eig = SymmetricEigen::new(psd_unvec(v, side));
    let lam = &eig.eigenvalues;
    let u = &eig.eigenvectors;
    let scale = lam.amax().max(1.0);
    let factor = DMatrix::from_fn(side, side, |i, j| {
        let (li, lj) = (lam[i], lam[j]);
        if (li - lj).abs() > 1e-12 * scale {
            (li.max(0.0) - lj.max(0.0)) / (li - lj)
        } else if li > 0.0 {
            1.0
        } else {
            0.0
        }
    });
    let mut matrix = DMatrix::zeros(d, d);
    for k in 0..d {
        let mut e = DVector::zeros(d);
        e[k] = 1.0;
        let h = u.transpose() * psd_unvec(&e, side) * u;
        let dh = u * factor.component_mul(&h) * u.transpose();
        matrix.set_column(k, &psd_vec(&dh));
    }
    ConeJacobian {
        matrix,
        near_kink: lam.iter().any(|l| l.abs() <= KINK_TOL),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn fd_jacobian(cone: &ConeSet, v: &DVector<f64>, h: f64) -> DMatrix<f64> {
        let d = v.len();
        let mut j = DMatrix::zeros(d, d);
        for k in 0..d {
            let (mut p, mut m) = (v.clone(), v.clone());
            p[k] += h;
            m[k] -= h;
            let col = (project(cone, &p).unwrap() - project(cone, &m).unwrap()) / (2.0 * h);
            j.set_column(k, &col);
        }
        j
    }

    #[test]
    fn nonnegative_clamp() {
        let p = project(&ConeSet::Nonnegative(3), &dv(&[1.0, -2.0, 0.0])).unwrap();
        assert_eq!(p.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn soc_projection_example() {
        let p = project(&ConeSet::SecondOrder(3), &dv(&[0.0, 3.0, 4.0])).unwrap();
        assert!((p - dv(&[2.5, 1.5, 2.0])).amax() < 1e-15);
    }

    #[test]
    fn psd_diagonal_clamp() {
        let p = project(&ConeSet::PsdTriangle(2), &dv(&[1.0, 0.0, -2.0])).unwrap();
        assert!((p - dv(&[1.0, 0.0, 0.0])).amax() < 1e-14);
    }

    #[test]
    fn dimension_and_set_errors() {
        assert!(project(&ConeSet::Nonnegative(2), &dv(&[1.0])).is_err());
        assert!(project(&ConeSet::GreaterThan(0.0), &dv(&[1.0])).is_err());
    }

    #[test]
    fn simple_jacobians() {
        let j = project_jacobian(&ConeSet::Nonnegative(2), &dv(&[1.0, -1.0])).unwrap();
        assert_eq!(j.matrix, DMatrix::from_diagonal(&dv(&[1.0, 0.0])));
        assert!(!j.near_kink);

        let z = project_jacobian(&ConeSet::Zero(2), &dv(&[3.0, -1.0])).unwrap();
        assert_eq!(z.matrix, DMatrix::zeros(2, 2));
        let free = project_dual_jacobian(&ConeSet::Zero(2), &dv(&[3.0, -1.0])).unwrap();
        assert_eq!(free.matrix, DMatrix::identity(2, 2));

        let kink = project_jacobian(&ConeSet::Nonnegative(1), &dv(&[0.0])).unwrap();
        assert!(kink.near_kink);
        assert_eq!(kink.matrix[(0, 0)], 0.0);
    }

    #[test]
    fn soc_jacobian_matches_fd() {
        let cone = ConeSet::SecondOrder(3);
        let v = dv(&[0.0, 3.0, 4.0]);
        let j = project_jacobian(&cone, &v).unwrap();
        assert!((j.matrix - fd_jacobian(&cone, &v, 1e-6)).amax() < 1e-6);
    }

    #[test]
    fn soc_boundary_selection() {
        let cone = ConeSet::SecondOrder(3);
        let on_k = project_jacobian(&cone, &dv(&[5.0, 3.0, 4.0])).unwrap();
        assert!(on_k.near_kink);
        assert_eq!(on_k.matrix, DMatrix::identity(3, 3));
        let on_polar = project_jacobian(&cone, &dv(&[-5.0, 3.0, 4.0])).unwrap();
        assert!(on_polar.near_kink);
        assert_eq!(on_polar.matrix, DMatrix::zeros(3, 3));
    }

    #[test]
    fn psd_jacobian_matches_fd() {
        let cone = ConeSet::PsdTriangle(3);
        let v = dv(&[2.0, 0.3, -1.0, 0.7, -0.4, 0.5]);
        let j = project_jacobian(&cone, &v).unwrap();
        assert!((&j.matrix - fd_jacobian(&cone, &v, 1e-6)).amax() < 1e-6);
        assert!((&j.matrix - j.matrix.transpose()).amax() < 1e-12);
    }

    #[test]
    fn psd_vec_roundtrip_preserves_inner_product() {
        let a = dv(&[1.0, 2.0, 3.0]);
        let b = dv(&[-1.0, 0.5, 2.0]);
        let (ma, mb) = (psd_unvec(&a, 2), psd_unvec(&b, 2));
        assert!((a.dot(&b) - ma.component_mul(&mb).sum()).abs() < 1e-14);
        assert!((psd_vec(&ma) - a).amax() < 1e-15);
        assert_eq!(psd_side(6), Some(3));
        assert_eq!(psd_side(5), None);
    }

    #[test]
    fn hsde_projection() {
        let cones = ConeProduct::new(&[ConeSet::Nonnegative(1)]).unwrap();
        let r = pi_hsde(&dv(&[-2.0, -3.0, 5.0]), &cones, 1).unwrap();
        assert_eq!(r.value.as_slice(), &[-2.0, 0.0, 5.0]);
        assert_eq!(r.jacobian, DMatrix::from_diagonal(&dv(&[1.0, 0.0, 1.0])));

        let zero = ConeProduct::new(&[ConeSet::Zero(1)]).unwrap();
        let r = pi_hsde(&dv(&[-4.0, 1.0]), &zero, 0).unwrap();
        assert_eq!(r.value.as_slice(), &[-4.0, 1.0]);
        assert_eq!(r.jacobian[(0, 0)], 1.0);

        assert!(pi_hsde(&dv(&[1.0, 2.0]), &cones, 1).is_err());
    }
}
