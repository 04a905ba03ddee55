//! Implicit differentiation of QP solutions through the linearized KKT
//! conditions
//!
//! ```text
//! Qx + c + Gᵀλ + Aᵀμ = 0,   D(λ)(Gx − h) = 0,   Ax = b.
//! ```
//!
//! Differentiating all three blocks gives `M [dx; dλ; dμ] = −rhs` with
//!
//! ```text
//! M   = [ Q       Gᵀ          Aᵀ ]      rhs = [ dQ x + dc + dGᵀλ + dAᵀμ ]
//!       [ D(λ)G   −D(h − Gx)  0  ]            [ D(λ)(dG x − dh)          ]
//!       [ A       0           0  ]            [ dA x − db                ]
//! ```
//!
//! The reverse pass solves `Mᵀ g = −[∂l/∂x; 0; 0]` with the same
//! factorization and contracts `g` against the adjoint of `rhs`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::SquareSolver;
use crate::model::QpForm;

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Inequality duals, `λ ≥ 0`.
    pub lambda: DVector<f64>,
    /// Equality duals.
    pub mu: DVector<f64>,
    pub kkt_residual: f64,
}

impl QpSolution {
    /// Wraps a primal-dual point and records its KKT residual.
    pub fn new(form: &QpForm, x: DVector<f64>, lambda: DVector<f64>, mu: DVector<f64>) -> Result<Self> {
        check_len(form.n(), x.len(), "primal solution")?;
        check_len(form.p(), lambda.len(), "inequality duals")?;
        check_len(form.m(), mu.len(), "equality duals")?;
        let kkt_residual = kkt_residual(form, &x, &lambda, &mu);
        Ok(QpSolution {
            x,
            lambda,
            mu,
            kkt_residual,
        })
    }
}

/// Largest violation among stationarity, primal feasibility, dual
/// feasibility and complementarity.
pub fn kkt_residual(form: &QpForm, x: &DVector<f64>, lambda: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    let stat = &form.q * x + &form.c + form.g.tr_mul(lambda) + form.a.tr_mul(mu);
    let slack = &form.h - &form.g * x;
    let mut r = stat.amax();
    if form.m() > 0 {
        r = r.max((&form.a * x - &form.b).amax());
    }
    for i in 0..form.p() {
        r = r
            .max((-slack[i]).max(0.0))
            .max((-lambda[i]).max(0.0))
            .max((lambda[i] * slack[i]).abs());
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpTangentIn {
    pub dq: DMatrix<f64>,
    pub dc: DVector<f64>,
    pub dg: DMatrix<f64>,
    pub dh: DVector<f64>,
    pub da: DMatrix<f64>,
    pub db: DVector<f64>,
}

impl QpTangentIn {
    pub fn zeros(form: &QpForm) -> Self {
        let (n, p, m) = (form.n(), form.p(), form.m());
        QpTangentIn {
            dq: DMatrix::zeros(n, n),
            dc: DVector::zeros(n),
            dg: DMatrix::zeros(p, n),
            dh: DVector::zeros(p),
            da: DMatrix::zeros(m, n),
            db: DVector::zeros(m),
        }
    }

    fn check(&self, form: &QpForm) -> Result<()> {
        let (n, p, m) = (form.n(), form.p(), form.m());
        check_shape(&self.dq, n, n, "dQ")?;
        check_len(n, self.dc.len(), "dc")?;
        check_shape(&self.dg, p, n, "dG")?;
        check_len(p, self.dh.len(), "dh")?;
        check_shape(&self.da, m, n, "dA")?;
        check_len(m, self.db.len(), "db")
    }

    /// Inner product with a reverse result, `⟨t, g⟩` over all blocks.
    pub fn dot(&self, g: &QpReverseOut) -> f64 {
        self.dq.dot(&g.gq)
            + self.dc.dot(&g.gc)
            + self.dg.dot(&g.gg)
            + self.dh.dot(&g.gh)
            + self.da.dot(&g.ga)
            + self.db.dot(&g.gb)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpTangentOut {
    pub dx: DVector<f64>,
    pub dlambda: DVector<f64>,
    pub dmu: DVector<f64>,
    /// The KKT matrix was rank deficient and a least-squares solve was used.
    pub approximate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpReverseOut {
    pub gq: DMatrix<f64>,
    pub gc: DVector<f64>,
    pub gg: DMatrix<f64>,
    pub gh: DVector<f64>,
    pub ga: DMatrix<f64>,
    pub gb: DVector<f64>,
    pub approximate: bool,
}

/// `[[Q, Gᵀ, Aᵀ], [D(λ)G, −D(h − Gx), 0], [A, 0, 0]]`.
pub fn build_kkt_jacobian(form: &QpForm, sol: &QpSolution) -> DMatrix<f64> {
    let (n, p, m) = (form.n(), form.p(), form.m());
    let slack = &form.h - &form.g * &sol.x;
    let mut k = DMatrix::zeros(n + p + m, n + p + m);
    k.view_mut((0, 0), (n, n)).copy_from(&form.q);
    k.view_mut((0, n), (n, p)).copy_from(&form.g.transpose());
    k.view_mut((0, n + p), (n, m)).copy_from(&form.a.transpose());
    for i in 0..p {
        for j in 0..n {
            k[(n + i, j)] = sol.lambda[i] * form.g[(i, j)];
        }
        k[(n + i, n + i)] = -slack[i];
    }
    k.view_mut((n + p, 0), (m, n)).copy_from(&form.a);
    k
}

/// One factorization of the KKT matrix, usable for any number of forward
/// and reverse passes.
#[derive(Debug, Clone)]
pub struct QpDerivative<'a> {
    form: &'a QpForm,
    sol: &'a QpSolution,
    solver: SquareSolver,
}

impl<'a> QpDerivative<'a> {
    pub fn new(form: &'a QpForm, sol: &'a QpSolution) -> Result<Self> {
        check_len(form.n(), sol.x.len(), "primal solution")?;
        check_len(form.p(), sol.lambda.len(), "inequality duals")?;
        check_len(form.m(), sol.mu.len(), "equality duals")?;
        let solver = SquareSolver::new(&build_kkt_jacobian(form, sol));
        Ok(QpDerivative { form, sol, solver })
    }

    pub fn is_approximate(&self) -> bool {
        self.solver.is_approximate()
    }

    pub fn forward(&self, t: &QpTangentIn) -> Result<QpTangentOut> {
        t.check(self.form)?;
        let (n, p, m) = (self.form.n(), self.form.p(), self.form.m());
        let (x, lam, mu) = (&self.sol.x, &self.sol.lambda, &self.sol.mu);

        let mut rhs = DVector::zeros(n + p + m);
        rhs.rows_mut(0, n)
            .copy_from(&(&t.dq * x + &t.dc + t.dg.tr_mul(lam) + t.da.tr_mul(mu)));
        let dgx = &t.dg * x;
        for i in 0..p {
            rhs[n + i] = lam[i] * (dgx[i] - t.dh[i]);
        }
        rhs.rows_mut(n + p, m).copy_from(&(&t.da * x - &t.db));

        let d = self.solver.solve(&(-rhs));
        Ok(QpTangentOut {
            dx: d.rows(0, n).clone_owned(),
            dlambda: d.rows(n, p).clone_owned(),
            dmu: d.rows(n + p, m).clone_owned(),
            approximate: self.is_approximate(),
        })
    }

    pub fn reverse(&self, dl_dx: &DVector<f64>) -> Result<QpReverseOut> {
        let (n, p, m) = (self.form.n(), self.form.p(), self.form.m());
        check_len(n, dl_dx.len(), "reverse seed")?;
        let (x, lam, mu) = (&self.sol.x, &self.sol.lambda, &self.sol.mu);

        let mut seed = DVector::zeros(n + p + m);
        seed.rows_mut(0, n).copy_from(&(-dl_dx));
        let g = self.solver.solve_transpose(&seed);
        let gx = g.rows(0, n).clone_owned();
        let glam = g.rows(n, p).component_mul(lam);
        let gmu = g.rows(n + p, m).clone_owned();

        let gq = (&gx * x.transpose() + x * gx.transpose()) * 0.5;
        Ok(QpReverseOut {
            gq,
            gg: lam * gx.transpose() + &glam * x.transpose(),
            gh: -glam,
            ga: mu * gx.transpose() + &gmu * x.transpose(),
            gb: -gmu,
            gc: gx,
            approximate: self.is_approximate(),
        })
    }
}

pub fn forward_differentiate_qp(form: &QpForm, sol: &QpSolution, t: &QpTangentIn) -> Result<QpTangentOut> {
    QpDerivative::new(form, sol)?.forward(t)
}

pub fn reverse_differentiate_qp(form: &QpForm, sol: &QpSolution, dl_dx: &DVector<f64>) -> Result<QpReverseOut> {
    QpDerivative::new(form, sol)?.reverse(dl_dx)
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

fn check_shape(m: &DMatrix<f64>, rows: usize, cols: usize, context: &'static str) -> Result<()> {
    check_len(rows, m.nrows(), context)?;
    check_len(cols, m.ncols(), context)
}
