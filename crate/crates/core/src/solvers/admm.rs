//! Operator splitting on the homogeneous self-dual embedding
//! (`ũ = (I + Q)⁻¹(u + v)`, `u = Π(αũ + (1 − α)u − v)`, dual update),
//! with over-relaxation `α = 1.5` and no acceleration. Once the iterates are
//! moderately accurate, a semismooth Newton refinement on the normalized
//! residual `𝒩(z, Q) = 0` takes the solution to machine precision.

use nalgebra::{DMatrix, DVector};

use super::{SolveInfo, SolveStatus, SolverSettings};
use crate::cones::{pi_hsde, ConeProduct};
use crate::conic_diff::{assemble_skew_q, bordered, normalized_residual, residual_jacobian, ConicSolution, HsdePoint, SkewQ};
use crate::error::{Error, Result};
use crate::linalg::vec_inf_norm;
use crate::model::ConicForm;

const RELAX: f64 = 1.5;
const CHECK_EVERY: usize = 10;
const REFINE_BELOW: f64 = 1e-1;
/// Iterations after which a failed refinement is retried even without a
/// tenfold improvement.
const REFINE_RETRY: usize = 100;
const REFINE_ITERS: usize = 40;
const CERT_TOL: f64 = 1e-8;

pub fn solve_conic(form: &ConicForm, settings: &SolverSettings) -> Result<(ConicSolution, SolveInfo)> {
    let (n, m) = (form.n(), form.m());
    check_form(form)?;
    let cones = ConeProduct::new(&form.cones)?;
    if cones.dim() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: cones.dim(),
            context: "cone dimensions against rows of A",
        });
    }
    let q = assemble_skew_q(&form.a, &form.b, &form.c)?;
    let dim = n + m + 1;
    let lu = (DMatrix::<f64>::identity(dim, dim) + &q.q).lu();

    let mut u = DVector::zeros(dim);
    let mut v = DVector::zeros(dim);
    u[dim - 1] = 1.0;
    v[dim - 1] = 1.0;

    let scale_b = 1.0 + vec_inf_norm(&form.b);
    let scale_c = 1.0 + vec_inf_norm(&form.c);
    let mut last_refine = 0.0f64;
    let mut last_refine_iter = 0usize;
    let mut iterations = 0;
    let mut status = SolveStatus::MaxIter;

    while iterations < settings.max_iter {
        let Some(ut) = lu.solve(&(&u + &v)) else {
            status = SolveStatus::NumericalError;
            break;
        };
        let relaxed = &ut * RELAX + &u * (1.0 - RELAX);
        let u_new = pi_hsde(&(&relaxed - &v), &cones, n)?.value;
        v = &v - &relaxed + &u_new;
        u = u_new;
        iterations += 1;

        if iterations % CHECK_EVERY != 0 && iterations != settings.max_iter {
            continue;
        }
        if !u.iter().chain(v.iter()).all(|x| x.is_finite()) {
            status = SolveStatus::NumericalError;
            break;
        }
        let (tau, kappa) = (u[dim - 1], v[dim - 1]);
        if tau > 0.0 {
            let sol = extract(form, &u, &v)?;
            let rel = relative_error(&sol, scale_b, scale_c, form);
            if settings.verbose {
                eprintln!("admm {iterations:6}  rel {rel:.3e}  tau {tau:.3e}  kappa {kappa:.3e}");
            }
            let due = rel <= REFINE_BELOW
                && (last_refine == 0.0 || rel < 0.1 * last_refine || iterations >= last_refine_iter + REFINE_RETRY);
            if due {
                last_refine = rel;
                last_refine_iter = iterations;
                let z0 = &u - &v;
                if let Some(refined) = refine(&q, &cones, n, z0) {
                    let sol = from_root(form, &cones, &refined)?;
                    if relative_error(&sol, scale_b, scale_c, form) <= settings.tol {
                        let info = info(&sol, SolveStatus::Optimal, iterations);
                        return Ok((sol, info));
                    }
                }
            }
            if rel <= settings.tol {
                let info = info(&sol, SolveStatus::Optimal, iterations);
                return Ok((sol, info));
            }
        }
        if kappa > tau {
            if let Some(cert) = certificate(form, &u, &v, n, m) {
                status = cert;
                break;
            }
        }
    }

    let tau = u[dim - 1];
    let sol = if tau > 0.0 {
        extract(form, &u, &v)?
    } else {
        ConicSolution::new(form, DVector::zeros(n), DVector::zeros(m), DVector::zeros(m))?
    };
    let info = info(&sol, status, iterations);
    Ok((sol, info))
}

fn check_form(form: &ConicForm) -> Result<()> {
    let (n, m) = (form.n(), form.m());
    for (expected, got, context) in [
        (m, form.a.nrows(), "A rows"),
        (n, form.a.ncols(), "A columns"),
    ] {
        if expected != got {
            return Err(Error::DimensionMismatch {
                expected,
                got,
                context,
            });
        }
    }
    if !(form.a.iter().chain(form.b.iter()).chain(form.c.iter()).all(|v| v.is_finite())) {
        return Err(Error::NonFinite("conic data"));
    }
    Ok(())
}

/// `(x, y, s) = (u_x, u_y, v_s) / τ`.
fn extract(form: &ConicForm, u: &DVector<f64>, v: &DVector<f64>) -> Result<ConicSolution> {
    let (n, m) = (form.n(), form.m());
    let tau = u[n + m];
    ConicSolution::new(
        form,
        u.rows(0, n) / tau,
        u.rows(n, m) / tau,
        v.rows(n, m) / tau,
    )
}

fn from_root(form: &ConicForm, cones: &ConeProduct, z: &DVector<f64>) -> Result<ConicSolution> {
    let (n, m) = (form.n(), form.m());
    let vpart = z.rows(n, m).clone_owned();
    let y = cones.project_dual(&vpart)?;
    let s = &y - &vpart;
    ConicSolution::new(form, z.rows(0, n).clone_owned(), y, s)
}

fn relative_error(sol: &ConicSolution, scale_b: f64, scale_c: f64, form: &ConicForm) -> f64 {
    let gap_scale = 1.0 + form.c.dot(&sol.x).abs() + form.b.dot(&sol.y).abs();
    (sol.primal_residual / scale_b)
        .max(sol.dual_residual / scale_c)
        .max(sol.gap / gap_scale)
}

fn info(sol: &ConicSolution, status: SolveStatus, iterations: usize) -> SolveInfo {
    SolveInfo {
        status,
        iterations,
        primal_residual: sol.primal_residual,
        dual_residual: sol.dual_residual,
        gap: sol.gap,
    }
}

/// Newton iteration on `𝒩(z, Q) = 0` with the scale held at `w = 1`.
fn refine(q: &SkewQ, cones: &ConeProduct, n: usize, z0: DVector<f64>) -> Option<DVector<f64>> {
    let w = z0[z0.len() - 1];
    if w <= 0.0 {
        return None;
    }
    let mut point = HsdePoint { z: z0 / w, n };
    let mut r = normalized_residual(&point, q, cones).ok()?;
    let mut norm = vec_inf_norm(&r);
    for _ in 0..REFINE_ITERS {
        if norm <= 1e-14 * (1.0 + vec_inf_norm(&point.z)) {
            break;
        }
        let (jac, pi) = residual_jacobian(&point, q, cones).ok()?;
        let k = bordered(&jac, &pi);
        let mut rhs = DVector::zeros(k.nrows());
        rhs.rows_mut(0, r.len()).copy_from(&(-&r));
        let step = k.lu().solve(&rhs)?;
        let dz = step.rows(0, r.len()).clone_owned();
        if !dz.iter().all(|v| v.is_finite()) {
            return None;
        }
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let trial = HsdePoint {
                z: &point.z + &dz * alpha,
                n,
            };
            let tr = normalized_residual(&trial, q, cones).ok()?;
            let tn = vec_inf_norm(&tr);
            if tn < norm {
                point = trial;
                r = tr;
                norm = tn;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Some(point.z)
}

/// Infeasibility (`Aᵀy = 0, bᵀy < 0, y ∈ K*`) or unboundedness
/// (`Ax + s = 0, s ∈ K, cᵀx < 0`) rays read off the current iterate.
fn certificate(form: &ConicForm, u: &DVector<f64>, v: &DVector<f64>, n: usize, m: usize) -> Option<SolveStatus> {
    let y = u.rows(n, m).clone_owned();
    let by = form.b.dot(&y);
    if by < 0.0 {
        let yh = &y / -by;
        if vec_inf_norm(&form.a.tr_mul(&yh)) <= CERT_TOL * (1.0 + vec_inf_norm(&form.c)) {
            return Some(SolveStatus::Infeasible);
        }
    }
    let x = u.rows(0, n).clone_owned();
    let cx = form.c.dot(&x);
    if cx < 0.0 {
        let xh = &x / -cx;
        let sh = v.rows(n, m) / -cx;
        if vec_inf_norm(&(&form.a * xh + sh)) <= CERT_TOL * (1.0 + vec_inf_norm(&form.b)) {
            return Some(SolveStatus::Unbounded);
        }
    }
    None
}
