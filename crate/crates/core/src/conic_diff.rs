//! Differentiation of conic programs
//!
//! ```text
//! min cᵀx  s.t.  Ax + s = b,  s ∈ K        (dual: Aᵀy + c = 0, y ∈ K*)
//! ```
//!
//! through the homogeneous self-dual embedding. The data enter through the
//! skew-symmetric matrix `Q`, a solution is a root `z = (x, y − s, 1)` of the
//! normalized residual `𝒩(z, Q) = ((Q − I)Π + I)(z/|w|)`, and `φ` maps `z`
//! back to `(x, y, s)`.
//!
//! `M = D_z𝒩` is singular at every root (`M z = 0`, and `Π(z)` spans its left
//! kernel), so the implicit system is solved in the bordered form
//!
//! ```text
//! [ M      Π(z) ] [dz]   [−dQ Π(z)]
//! [ e_wᵀ   0    ] [ t] = [   0    ]
//! ```
//!
//! which fixes the scale `dw = 0` and is square and nonsingular whenever the
//! root is locally unique up to scaling.

use nalgebra::{DMatrix, DVector};

use crate::cones::{pi_hsde, ConeProduct};
use crate::error::{Error, Result};
use crate::linalg::SquareSolver;
use crate::model::ConicForm;

/// Residual bound for treating a point as an embedded solution.
pub const EMBED_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub x: DVector<f64>,
    /// Dual, in `K*`.
    pub y: DVector<f64>,
    /// Slack, in `K`.
    pub s: DVector<f64>,
    /// `‖Ax + s − b‖∞`.
    pub primal_residual: f64,
    /// `‖Aᵀy + c‖∞`.
    pub dual_residual: f64,
    /// `|cᵀx + bᵀy|`.
    pub gap: f64,
}

impl ConicSolution {
    pub fn new(form: &ConicForm, x: DVector<f64>, y: DVector<f64>, s: DVector<f64>) -> Result<Self> {
        check_len(form.n(), x.len(), "conic primal")?;
        check_len(form.m(), y.len(), "conic dual")?;
        check_len(form.m(), s.len(), "conic slack")?;
        let primal_residual = amax(&(&form.a * &x + &s - &form.b));
        let dual_residual = amax(&(form.a.tr_mul(&y) + &form.c));
        let gap = (form.c.dot(&x) + form.b.dot(&y)).abs();
        Ok(ConicSolution {
            x,
            y,
            s,
            primal_residual,
            dual_residual,
            gap,
        })
    }
}

/// `z = (u, v, w)` with `u ∈ ℝⁿ`, `v ∈ ℝᵐ`, `w ∈ ℝ`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsdePoint {
    pub z: DVector<f64>,
    pub n: usize,
}

impl HsdePoint {
    pub fn m(&self) -> usize {
        self.z.len() - self.n - 1
    }

    pub fn u(&self) -> DVector<f64> {
        self.z.rows(0, self.n).clone_owned()
    }

    pub fn v(&self) -> DVector<f64> {
        self.z.rows(self.n, self.m()).clone_owned()
    }

    pub fn w(&self) -> f64 {
        self.z[self.z.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkewQ {
    pub q: DMatrix<f64>,
}

/// `[[0, Aᵀ, c], [−A, 0, b], [−cᵀ, −bᵀ, 0]]`.
pub fn assemble_skew_q(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> Result<SkewQ> {
    let (m, n) = (a.nrows(), a.ncols());
    check_len(m, b.len(), "b against rows of A")?;
    check_len(n, c.len(), "c against columns of A")?;
    let mut q = DMatrix::zeros(n + m + 1, n + m + 1);
    q.view_mut((0, n), (n, m)).copy_from(&a.transpose());
    q.view_mut((0, n + m), (n, 1)).copy_from(c);
    q.view_mut((n, 0), (m, n)).copy_from(&(-a));
    q.view_mut((n, n + m), (m, 1)).copy_from(b);
    q.view_mut((n + m, 0), (1, n)).copy_from(&(-c.transpose()));
    q.view_mut((n + m, n), (1, m)).copy_from(&(-b.transpose()));
    Ok(SkewQ { q })
}

/// `φ(z) = (u, Π_{K*}(v), Π_{K*}(v) − v) / w`.
pub fn phi(z: &HsdePoint, cones: &ConeProduct) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let w = z.w();
    if w.abs() <= 1e-12 {
        return Err(Error::DegenerateEmbedding);
    }
    let v = z.v();
    let y = cones.project_dual(&v)?;
    let s = &y - &v;
    Ok((z.u() / w, y / w, s / w))
}

/// `z = (x, y − s, 1)`, rejected when `φ(z)` does not give back `(x, y, s)`.
pub fn embed_solution(sol: &ConicSolution, cones: &ConeProduct) -> Result<HsdePoint> {
    let n = sol.x.len();
    let m = sol.y.len();
    check_len(cones.dim(), m, "conic dual")?;
    check_len(m, sol.s.len(), "conic slack")?;
    let mut z = DVector::zeros(n + m + 1);
    z.rows_mut(0, n).copy_from(&sol.x);
    z.rows_mut(n, m).copy_from(&(&sol.y - &sol.s));
    z[n + m] = 1.0;
    let point = HsdePoint { z, n };
    let (_, y, s) = phi(&point, cones)?;
    let err = amax(&(y - &sol.y)).max(amax(&(s - &sol.s)));
    if err > EMBED_TOL {
        return Err(Error::Complementarity(err));
    }
    Ok(point)
}

/// `𝒩(z, Q) = ((Q − I)Π + I)(z/|w|)`.
pub fn normalized_residual(z: &HsdePoint, q: &SkewQ, cones: &ConeProduct) -> Result<DVector<f64>> {
    let w = z.w();
    if w.abs() <= 1e-12 {
        return Err(Error::DegenerateEmbedding);
    }
    let zh = &z.z / w.abs();
    let p = pi_hsde(&zh, cones, z.n)?.value;
    Ok(&q.q * &p - &p + zh)
}

/// `((Q − I) DΠ(z) + I) / w`, valid at a root of [`normalized_residual`]
/// where the derivative of the `1/|w|` normalization drops out.
pub fn d_z_residual(z: &HsdePoint, q: &SkewQ, cones: &ConeProduct) -> Result<DMatrix<f64>> {
    let r = amax(&normalized_residual(z, q, cones)?);
    if r > EMBED_TOL {
        return Err(Error::ResidualTooLarge(r));
    }
    Ok(residual_jacobian(z, q, cones)?.0)
}

/// `((Q − I) DΠ + I)/w` and `Π(z/w)` without the root check.
pub(crate) fn residual_jacobian(
    z: &HsdePoint,
    q: &SkewQ,
    cones: &ConeProduct,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let w = z.w();
    if w <= 1e-12 {
        return Err(Error::DegenerateEmbedding);
    }
    let dim = z.z.len();
    let proj = pi_hsde(&(&z.z / w), cones, z.n)?;
    let identity = DMatrix::<f64>::identity(dim, dim);
    let m = ((&q.q - &identity) * &proj.jacobian + identity) / w;
    Ok((m, proj.value))
}

/// `Dφ(z) = (1/w) [[I, 0, −x], [0, DΠ_{K*}(v), −y], [0, DΠ_{K*}(v) − I, −s]]`.
pub fn d_phi(z: &HsdePoint, cones: &ConeProduct) -> Result<DMatrix<f64>> {
    let (n, m, w) = (z.n, z.m(), z.w());
    let (x, y, s) = phi(z, cones)?;
    let dpi = cones.project_dual_jacobian(&z.v())?.matrix;
    let mut d = DMatrix::zeros(n + 2 * m, n + m + 1);
    d.view_mut((0, 0), (n, n)).fill_with_identity();
    d.view_mut((n, n), (m, m)).copy_from(&dpi);
    d.view_mut((n + m, n), (m, m))
        .copy_from(&(dpi - DMatrix::<f64>::identity(m, m)));
    d.view_mut((0, n + m), (n, 1)).copy_from(&(-x));
    d.view_mut((n, n + m), (m, 1)).copy_from(&(-y));
    d.view_mut((n + m, n + m), (m, 1)).copy_from(&(-s));
    Ok(d / w)
}

/// Bordered matrix `[[M, ℓ], [e_wᵀ, 0]]`.
pub(crate) fn bordered(m: &DMatrix<f64>, left_null: &DVector<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    let mut k = DMatrix::zeros(d + 1, d + 1);
    k.view_mut((0, 0), (d, d)).copy_from(m);
    k.view_mut((0, d), (d, 1)).copy_from(left_null);
    k[(d, d - 1)] = 1.0;
    k
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicTangentIn {
    pub da: DMatrix<f64>,
    pub db: DVector<f64>,
    pub dc: DVector<f64>,
}

impl ConicTangentIn {
    pub fn zeros(form: &ConicForm) -> Self {
        ConicTangentIn {
            da: DMatrix::zeros(form.m(), form.n()),
            db: DVector::zeros(form.m()),
            dc: DVector::zeros(form.n()),
        }
    }

    pub fn dot(&self, g: &ConicReverseOut) -> f64 {
        self.da.dot(&g.ga) + self.db.dot(&g.gb) + self.dc.dot(&g.gc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicTangentOut {
    pub dx: DVector<f64>,
    pub dy: DVector<f64>,
    pub ds: DVector<f64>,
    pub approximate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicReverseOut {
    pub ga: DMatrix<f64>,
    pub gb: DVector<f64>,
    pub gc: DVector<f64>,
    pub approximate: bool,
}

/// Factorized derivative of the conic solution map at one solution.
#[derive(Debug, Clone)]
pub struct ConicDerivative {
    n: usize,
    m: usize,
    /// `Π(z/w)`.
    pi: DVector<f64>,
    d_phi: DMatrix<f64>,
    solver: SquareSolver,
}

impl ConicDerivative {
    pub fn new(form: &ConicForm, sol: &ConicSolution) -> Result<Self> {
        let cones = ConeProduct::new(&form.cones)?;
        check_len(cones.dim(), form.m(), "cone dimensions against rows of A")?;
        let z = embed_solution(sol, &cones)?;
        let q = assemble_skew_q(&form.a, &form.b, &form.c)?;
        let m_mat = d_z_residual(&z, &q, &cones)?;
        let pi = pi_hsde(&z.z, &cones, z.n)?.value;
        let solver = SquareSolver::new(&bordered(&m_mat, &pi));
        Ok(ConicDerivative {
            n: form.n(),
            m: form.m(),
            pi,
            d_phi: d_phi(&z, &cones)?,
            solver,
        })
    }

    pub fn is_approximate(&self) -> bool {
        self.solver.is_approximate()
    }

    pub fn forward(&self, t: &ConicTangentIn) -> Result<ConicTangentOut> {
        let (n, m) = (self.n, self.m);
        check_len(m, t.da.nrows(), "dA rows")?;
        check_len(n, t.da.ncols(), "dA columns")?;
        let dq = assemble_skew_q(&t.da, &t.db, &t.dc)?;
        let r = &dq.q * &self.pi;
        let mut rhs = DVector::zeros(n + m + 2);
        rhs.rows_mut(0, n + m + 1).copy_from(&(-r));
        let sol = self.solver.solve(&rhs);
        let out = &self.d_phi * sol.rows(0, n + m + 1);
        Ok(ConicTangentOut {
            dx: out.rows(0, n).clone_owned(),
            dy: out.rows(n, m).clone_owned(),
            ds: out.rows(n + m, m).clone_owned(),
            approximate: self.is_approximate(),
        })
    }

    pub fn reverse(
        &self,
        dl_dx: &DVector<f64>,
        dl_dy: &DVector<f64>,
        dl_ds: &DVector<f64>,
    ) -> Result<ConicReverseOut> {
        let (n, m) = (self.n, self.m);
        check_len(n, dl_dx.len(), "dl/dx")?;
        check_len(m, dl_dy.len(), "dl/dy")?;
        check_len(m, dl_ds.len(), "dl/ds")?;
        let mut seed = DVector::zeros(n + 2 * m);
        seed.rows_mut(0, n).copy_from(dl_dx);
        seed.rows_mut(n, m).copy_from(dl_dy);
        seed.rows_mut(n + m, m).copy_from(dl_ds);
        let g_z = self.d_phi.tr_mul(&seed);
        let mut rhs = DVector::zeros(n + m + 2);
        rhs.rows_mut(0, n + m + 1).copy_from(&g_z);
        let a = self.solver.solve_transpose(&rhs);
        let g_r = -a.rows(0, n + m + 1).clone_owned();
        let g = &g_r * self.pi.transpose();
        let last = n + m;
        let ga = g.view((0, n), (n, m)).transpose() - g.view((n, 0), (m, n));
        let gb = g.view((n, last), (m, 1)).clone_owned() - g.view((last, n), (1, m)).transpose();
        let gc = g.view((0, last), (n, 1)).clone_owned() - g.view((last, 0), (1, n)).transpose();
        Ok(ConicReverseOut {
            ga,
            gb: gb.column(0).clone_owned(),
            gc: gc.column(0).clone_owned(),
            approximate: self.is_approximate(),
        })
    }
}

pub fn forward_differentiate_conic(
    form: &ConicForm,
    sol: &ConicSolution,
    t: &ConicTangentIn,
) -> Result<ConicTangentOut> {
    ConicDerivative::new(form, sol)?.forward(t)
}

pub fn reverse_differentiate_conic(
    form: &ConicForm,
    sol: &ConicSolution,
    dl_dx: &DVector<f64>,
    dl_dy: &DVector<f64>,
    dl_ds: &DVector<f64>,
) -> Result<ConicReverseOut> {
    ConicDerivative::new(form, sol)?.reverse(dl_dx, dl_dy, dl_ds)
}

fn amax(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn check_len(expected: usize, got: usize, context: &'static str) -> Result<()> {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConeSet;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    /// min x s.t. x ≥ 1, i.e. A = [−1], b = [−1], c = [1]; x = 1, y = 1, s = 0.
    fn bound_lp() -> (ConicForm, ConicSolution) {
        let form = ConicForm::from_matrices(
            DMatrix::from_element(1, 1, -1.0),
            dv(&[-1.0]),
            dv(&[1.0]),
            vec![ConeSet::Nonnegative(1)],
        );
        let sol = ConicSolution::new(&form, dv(&[1.0]), dv(&[1.0]), dv(&[0.0])).unwrap();
        (form, sol)
    }

    #[test]
    fn skew_assembly() {
        let q = assemble_skew_q(&DMatrix::from_element(1, 1, 1.0), &dv(&[1.0]), &dv(&[1.0])).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 1.0, -1.0, 0.0, 1.0, -1.0, -1.0, 0.0]);
        assert_eq!(q.q, expected);
        let zero = assemble_skew_q(&DMatrix::zeros(2, 1), &dv(&[0.0, 0.0]), &dv(&[0.0])).unwrap();
        assert_eq!(zero.q, DMatrix::zeros(4, 4));
    }

    #[test]
    fn embedding_of_complementary_pairs() {
        let cones = ConeProduct::new(&[ConeSet::Nonnegative(1)]).unwrap();
        let a = ConicSolution {
            x: dv(&[]),
            y: dv(&[2.0]),
            s: dv(&[0.0]),
            primal_residual: 0.0,
            dual_residual: 0.0,
            gap: 0.0,
        };
        assert_eq!(embed_solution(&a, &cones).unwrap().v()[0], 2.0);
        let b = ConicSolution {
            y: dv(&[0.0]),
            s: dv(&[3.0]),
            ..a.clone()
        };
        let z = embed_solution(&b, &cones).unwrap();
        assert_eq!(z.v()[0], -3.0);
        let (_, y, s) = phi(&z, &cones).unwrap();
        assert_eq!((y[0], s[0]), (0.0, 3.0));

        let broken = ConicSolution {
            y: dv(&[1.0]),
            s: dv(&[1.0]),
            ..a
        };
        assert!(matches!(embed_solution(&broken, &cones), Err(Error::Complementarity(_))));
    }

    #[test]
    fn residual_vanishes_at_solution_and_is_scale_free() {
        let (form, sol) = bound_lp();
        let cones = ConeProduct::new(&form.cones).unwrap();
        let q = assemble_skew_q(&form.a, &form.b, &form.c).unwrap();
        let z = embed_solution(&sol, &cones).unwrap();
        assert!(amax(&normalized_residual(&z, &q, &cones).unwrap()) < 1e-15);

        let off = HsdePoint {
            z: dv(&[0.3, -0.2, 1.0]),
            n: 1,
        };
        let twice = HsdePoint {
            z: &off.z * 2.0,
            n: 1,
        };
        let (r1, r2) = (
            normalized_residual(&off, &q, &cones).unwrap(),
            normalized_residual(&twice, &q, &cones).unwrap(),
        );
        assert!(amax(&(r1 - r2)) < 1e-15);

        let degenerate = HsdePoint {
            z: dv(&[0.3, -0.2, 0.0]),
            n: 1,
        };
        assert_eq!(
            normalized_residual(&degenerate, &q, &cones),
            Err(Error::DegenerateEmbedding)
        );
        assert!(matches!(
            d_z_residual(&off, &q, &cones),
            Err(Error::ResidualTooLarge(_))
        ));
    }

    #[test]
    fn trivial_embedding_residual() {
        let cones = ConeProduct::new(&[ConeSet::Nonnegative(2)]).unwrap();
        let q = SkewQ { q: DMatrix::zeros(4, 4) };
        let z = HsdePoint {
            z: dv(&[-1.0, 0.5, 2.0, 1.0]),
            n: 1,
        };
        assert_eq!(amax(&normalized_residual(&z, &q, &cones).unwrap()), 0.0);
    }

    #[test]
    fn residual_jacobian_matches_fd() {
        let (form, sol) = bound_lp();
        let cones = ConeProduct::new(&form.cones).unwrap();
        let q = assemble_skew_q(&form.a, &form.b, &form.c).unwrap();
        let z = embed_solution(&sol, &cones).unwrap();
        let m = d_z_residual(&z, &q, &cones).unwrap();
        let h = 1e-7;
        // w direction carries the dropped normalization term; compare u, v columns
        for k in 0..2 {
            let (mut p, mut n) = (z.clone(), z.clone());
            p.z[k] += h;
            n.z[k] -= h;
            let col = (normalized_residual(&p, &q, &cones).unwrap()
                - normalized_residual(&n, &q, &cones).unwrap())
                / (2.0 * h);
            assert!(amax(&(col - m.column(k))) < 1e-5);
        }
        // M z = 0 and Π(z) is a left null vector
        assert!(amax(&(&m * &z.z)) < 1e-15);
        let pi = pi_hsde(&z.z, &cones, 1).unwrap().value;
        assert!(amax(&m.tr_mul(&pi)) < 1e-15);
    }

    #[test]
    fn lp_bound_sensitivity() {
        let (form, sol) = bound_lp();
        let d = ConicDerivative::new(&form, &sol).unwrap();
        assert!(!d.is_approximate());
        // x ≥ 1 is −x + s = −1; raising the bound is db = −1
        let mut t = ConicTangentIn::zeros(&form);
        t.db[0] = -1.0;
        let out = d.forward(&t).unwrap();
        assert!((out.dx[0] - 1.0).abs() < 1e-12);
        assert!(out.ds[0].abs() < 1e-12);

        let zero = d.forward(&ConicTangentIn::zeros(&form)).unwrap();
        assert_eq!(amax(&zero.dx), 0.0);

        let g = d.reverse(&dv(&[0.0]), &dv(&[0.0]), &dv(&[0.0])).unwrap();
        assert_eq!((g.ga[(0, 0)], g.gb[0], g.gc[0]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn adjoint_identity_small_lp() {
        let (form, sol) = bound_lp();
        let d = ConicDerivative::new(&form, &sol).unwrap();
        let t = ConicTangentIn {
            da: DMatrix::from_element(1, 1, 0.3),
            db: dv(&[-0.7]),
            dc: dv(&[0.2]),
        };
        let (sx, sy, ss) = (dv(&[1.1]), dv(&[-0.4]), dv(&[0.9]));
        let f = d.forward(&t).unwrap();
        let g = d.reverse(&sx, &sy, &ss).unwrap();
        let lhs = sx.dot(&f.dx) + sy.dot(&f.dy) + ss.dot(&f.ds);
        assert!((lhs - t.dot(&g)).abs() < 1e-12);
    }

    #[test]
    fn d_phi_last_column() {
        let (form, sol) = bound_lp();
        let cones = ConeProduct::new(&form.cones).unwrap();
        let z = embed_solution(&sol, &cones).unwrap();
        let d = d_phi(&z, &cones).unwrap();
        let last = d.column(2);
        assert_eq!(last.iter().copied().collect::<Vec<_>>(), vec![-1.0, -1.0, -0.0]);
        // homogeneity of φ: Dφ z = 0
        assert!(amax(&(&d * &z.z)) < 1e-15);
    }
}
