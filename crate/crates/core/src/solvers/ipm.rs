//! Mehrotra predictor-corrector interior point method for
//! `min ½xᵀQx + cᵀx  s.t.  Gx + s = h, s ≥ 0,  Ax = b`,
//! followed by an active-set polish that solves the equality-constrained
//! KKT system of the identified active set exactly.

use nalgebra::{DMatrix, DVector};

use super::{SolveInfo, SolveStatus, SolverSettings};
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, vec_inf_norm, SquareSolver};
use crate::model::QpForm;
use crate::qp_diff::{kkt_residual, QpSolution};

const MAX_IPM_ITER: usize = 300;
const REG: f64 = 1e-10;
const CERT_TOL: f64 = 1e-7;

struct Residuals {
    dual: DVector<f64>,
    ineq: DVector<f64>,
    eq: DVector<f64>,
    gap: f64,
}

pub fn solve_qp(form: &QpForm, settings: &SolverSettings) -> Result<(QpSolution, SolveInfo)> {
    check_form(form)?;
    let q_sym = (&form.q + form.q.transpose()) * 0.5;
    let lmin = min_eigenvalue(&q_sym);
    if lmin < -1e-8 {
        return Err(Error::NotConvex(lmin));
    }
    let p = form.p();
    let scale = 1.0 + vec_inf_norm(&form.c).max(vec_inf_norm(&form.h)).max(vec_inf_norm(&form.b));
    let tol = settings.tol;

    let (mut x, mut s, mut lam, mut mu) = initial_point(form);
    let mut iterations = 0;
    let mut status = SolveStatus::MaxIter;
    let cap = settings.max_iter.min(MAX_IPM_ITER);

    while iterations < cap {
        let r = residuals(form, &x, &s, &lam, &mu);
        if !(x.iter().chain(lam.iter()).chain(mu.iter()).all(|v| v.is_finite())) {
            status = SolveStatus::NumericalError;
            break;
        }
        let worst = vec_inf_norm(&r.dual)
            .max(vec_inf_norm(&r.ineq))
            .max(vec_inf_norm(&r.eq))
            .max(r.gap);
        if worst <= 1e-6 * scale {
            if let Some(sol) = polish(form, &x, &s, &lam, &mu) {
                if sol.kkt_residual <= tol * scale {
                    let info = finish(form, &sol, SolveStatus::Optimal, iterations);
                    return Ok((sol, info));
                }
            }
        }
        if worst <= tol * scale {
            status = SolveStatus::Optimal;
            break;
        }
        if let Some(cert) = certificate(form, &x, &lam, &mu, scale) {
            status = cert;
            break;
        }

        let Some(kkt) = ReducedKkt::new(form, &s, &lam) else {
            status = SolveStatus::NumericalError;
            break;
        };
        // predictor
        let rc = s.component_mul(&lam);
        let (_, ds_a, dl_a, _) = kkt.step(form, &r, &rc, &s, &lam);
        let a_aff = max_step(&s, &ds_a).min(max_step(&lam, &dl_a));
        let mu_now = if p > 0 { s.dot(&lam) / p as f64 } else { 0.0 };
        let mu_aff = if p > 0 {
            (&s + &ds_a * a_aff).dot(&(&lam + &dl_a * a_aff)) / p as f64
        } else {
            0.0
        };
        let sigma = if mu_now > 0.0 { (mu_aff / mu_now).powi(3).min(1.0) } else { 0.0 };
        // corrector
        let rc = &rc + ds_a.component_mul(&dl_a) - DVector::from_element(p, sigma * mu_now);
        let (dx, ds, dl, dm) = kkt.step(form, &r, &rc, &s, &lam);
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&lam, &dl))).min(1.0);
        x += &dx * alpha;
        s += &ds * alpha;
        lam += &dl * alpha;
        mu += &dm * alpha;
        iterations += 1;
        if settings.verbose {
            eprintln!("ipm {iterations:4}  res {worst:.3e}  step {alpha:.3e}");
        }
    }

    let sol = QpSolution::new(form, x, lam, mu)?;
    let info = finish(form, &sol, status, iterations);
    Ok((sol, info))
}

fn check_form(form: &QpForm) -> Result<()> {
    let n = form.n();
    let dims = [
        (n, form.q.nrows(), "Q rows"),
        (n, form.q.ncols(), "Q columns"),
        (n, form.g.ncols(), "G columns"),
        (form.p(), form.g.nrows(), "G rows"),
        (n, form.a.ncols(), "A columns"),
        (form.m(), form.a.nrows(), "A rows"),
    ];
    for (expected, got, context) in dims {
        if expected != got {
            return Err(Error::DimensionMismatch {
                expected,
                got,
                context,
            });
        }
    }
    let all_finite = [&form.q, &form.g, &form.a]
        .iter()
        .all(|m| m.iter().all(|v| v.is_finite()))
        && [&form.c, &form.h, &form.b]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()));
    if !all_finite {
        return Err(Error::NonFinite("QP data"));
    }
    Ok(())
}

fn finish(form: &QpForm, sol: &QpSolution, status: SolveStatus, iterations: usize) -> SolveInfo {
    let dual = &form.q * &sol.x + &form.c + form.g.tr_mul(&sol.lambda) + form.a.tr_mul(&sol.mu);
    let slack = &form.h - &form.g * &sol.x;
    let primal = slack
        .iter()
        .fold(0.0f64, |acc, v| acc.max(-v))
        .max(if form.m() > 0 { vec_inf_norm(&(&form.a * &sol.x - &form.b)) } else { 0.0 });
    SolveInfo {
        status,
        iterations,
        primal_residual: primal,
        dual_residual: vec_inf_norm(&dual),
        gap: slack.dot(&sol.lambda).abs(),
    }
}

fn residuals(
    form: &QpForm,
    x: &DVector<f64>,
    s: &DVector<f64>,
    lam: &DVector<f64>,
    mu: &DVector<f64>,
) -> Residuals {
    let p = form.p();
    Residuals {
        dual: &form.q * x + &form.c + form.g.tr_mul(lam) + form.a.tr_mul(mu),
        ineq: &form.g * x + s - &form.h,
        eq: &form.a * x - &form.b,
        gap: if p > 0 { s.dot(lam) / p as f64 } else { 0.0 },
    }
}

fn initial_point(form: &QpForm) -> (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
    let (n, p, m) = (form.n(), form.p(), form.m());
    let mut k = DMatrix::zeros(n + m, n + m);
    let h = &form.q + form.g.tr_mul(&form.g) + DMatrix::identity(n, n) * 1e-8;
    k.view_mut((0, 0), (n, n)).copy_from(&h);
    k.view_mut((0, n), (n, m)).copy_from(&form.a.transpose());
    k.view_mut((n, 0), (m, n)).copy_from(&form.a);
    for i in 0..m {
        k[(n + i, n + i)] = -1e-8;
    }
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(form.g.tr_mul(&form.h) - &form.c));
    rhs.rows_mut(n, m).copy_from(&form.b);
    let sol = if n + m == 0 {
        rhs
    } else {
        k.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(n + m))
    };
    let x = sol.rows(0, n).clone_owned();
    let x = if x.iter().all(|v| v.is_finite()) { x } else { DVector::zeros(n) };
    let s = (&form.h - &form.g * &x).map(|v| v.max(1.0));
    (x, s, DVector::from_element(p, 1.0), DVector::zeros(m))
}

/// Largest `α ∈ (0, 1]` keeping `v + α dv ≥ 0`.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(1.0, f64::min)
}

/// Regularized reduced system `[[Q + GᵀWG, Aᵀ], [A, 0]]`, `W = Λ S⁻¹`,
/// solved with iterative refinement against the unregularized matrix.
struct ReducedKkt {
    exact: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    w: DVector<f64>,
}

impl ReducedKkt {
    fn new(form: &QpForm, s: &DVector<f64>, lam: &DVector<f64>) -> Option<Self> {
        let (n, m) = (form.n(), form.m());
        let w = lam.component_div(s);
        let mut wg = form.g.clone();
        for (i, mut row) in wg.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let mut exact = DMatrix::zeros(n + m, n + m);
        exact
            .view_mut((0, 0), (n, n))
            .copy_from(&(&form.q + form.g.tr_mul(&wg)));
        exact.view_mut((0, n), (n, m)).copy_from(&form.a.transpose());
        exact.view_mut((n, 0), (m, n)).copy_from(&form.a);
        let mut reg = exact.clone();
        for i in 0..n {
            reg[(i, i)] += REG;
        }
        for i in n..n + m {
            reg[(i, i)] -= REG;
        }
        let lu = reg.lu();
        if !w.iter().all(|v| v.is_finite()) {
            return None;
        }
        Some(ReducedKkt { exact, lu, w })
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        if rhs.is_empty() {
            return rhs.clone();
        }
        let mut d = self.lu.solve(rhs).unwrap_or_else(|| DVector::zeros(rhs.len()));
        for _ in 0..3 {
            let r = rhs - &self.exact * &d;
            match self.lu.solve(&r) {
                Some(c) => d += c,
                None => break,
            }
        }
        d
    }

    /// Newton direction for complementarity target `rc` (`S dλ + Λ ds = −rc`).
    fn step(
        &self,
        form: &QpForm,
        r: &Residuals,
        rc: &DVector<f64>,
        s: &DVector<f64>,
        lam: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
        let (n, m) = (form.n(), form.m());
        // dλ = (−rc + Λ r_in)/s + W G dx
        let base = (-rc + lam.component_mul(&r.ineq)).component_div(s);
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-&r.dual - form.g.tr_mul(&base)));
        rhs.rows_mut(n, m).copy_from(&(-&r.eq));
        let d = self.solve(&rhs);
        let dx = d.rows(0, n).clone_owned();
        let dmu = d.rows(n, m).clone_owned();
        let gdx = &form.g * &dx;
        let ds = -&r.ineq - &gdx;
        let dl = base + self.w.component_mul(&gdx);
        (dx, ds, dl, dmu)
    }
}

/// Solves the KKT system with the rows where `λ > s` held at equality.
fn polish(
    form: &QpForm,
    x: &DVector<f64>,
    s: &DVector<f64>,
    lam: &DVector<f64>,
    mu: &DVector<f64>,
) -> Option<QpSolution> {
    let (n, p, m) = (form.n(), form.p(), form.m());
    let active: Vec<usize> = (0..p).filter(|&i| lam[i] > s[i]).collect();
    let k = m + active.len();
    let mut e = DMatrix::zeros(k, n);
    let mut rhs_e = DVector::zeros(k);
    e.rows_mut(0, m).copy_from(&form.a);
    rhs_e.rows_mut(0, m).copy_from(&form.b);
    for (r, &i) in active.iter().enumerate() {
        e.row_mut(m + r).copy_from(&form.g.row(i));
        rhs_e[m + r] = form.h[i];
    }
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&form.q);
    kkt.view_mut((0, n), (n, k)).copy_from(&e.transpose());
    kkt.view_mut((n, 0), (k, n)).copy_from(&e);
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-&form.c));
    rhs.rows_mut(n, k).copy_from(&rhs_e);

    let solver = SquareSolver::new(&kkt);
    let mut z = solver.solve(&rhs);
    if !solver.is_approximate() {
        for _ in 0..2 {
            let r = &rhs - &kkt * &z;
            z += solver.solve(&r);
        }
    }
    if !z.iter().all(|v| v.is_finite()) {
        return None;
    }
    let xp = z.rows(0, n).clone_owned();
    let mup = z.rows(n, m).clone_owned();
    let mut lamp = DVector::zeros(p);
    for (r, &i) in active.iter().enumerate() {
        lamp[i] = z[n + m + r];
    }
    let polished = QpSolution::new(form, xp, lamp, mup).ok()?;
    let current = kkt_residual(form, x, lam, mu);
    (polished.kkt_residual < current).then_some(polished)
}

/// Farkas-type certificates read off a diverging iterate.
fn certificate(
    form: &QpForm,
    x: &DVector<f64>,
    lam: &DVector<f64>,
    mu: &DVector<f64>,
    scale: f64,
) -> Option<SolveStatus> {
    let big = 1e6 * scale;
    let ny = vec_inf_norm(lam).max(vec_inf_norm(mu));
    if ny > big {
        let (l, u) = (lam / ny, mu / ny);
        let ray = form.g.tr_mul(&l) + form.a.tr_mul(&u);
        if vec_inf_norm(&ray) <= CERT_TOL && form.h.dot(&l) + form.b.dot(&u) < -CERT_TOL {
            return Some(SolveStatus::Infeasible);
        }
    }
    let nx = vec_inf_norm(x);
    if nx > big {
        let d = x / nx;
        let gd = &form.g * &d;
        if vec_inf_norm(&(&form.q * &d)) <= CERT_TOL
            && (form.m() == 0 || vec_inf_norm(&(&form.a * &d)) <= CERT_TOL)
            && gd.iter().all(|v| *v <= CERT_TOL)
            && form.c.dot(&d) < -CERT_TOL
        {
            return Some(SolveStatus::Unbounded);
        }
    }
    None
}
