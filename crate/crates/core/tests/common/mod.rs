//! Seeded generators of random, strictly complementary test instances.
//!
//! Every instance is built backwards from a chosen primal-dual point so the
//! solution is known, unique and nondegenerate.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use optdiff::conic_diff::ConicTangentIn;
use optdiff::model::{ConeSet, ConicForm, QpForm};
use optdiff::qp_diff::QpTangentIn;
use optdiff::{ProblemBuilder, ProblemModel, ScalarAffineFunction, ScalarQuadraticFunction, VectorAffineFunction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn randn_vec(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| normal(rng))
}

pub fn randn_mat(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

pub struct QpInstance {
    pub form: QpForm,
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub mu: DVector<f64>,
}

/// Strictly convex QP with `n ≤ 8`, `p + m ≤ 10`, some active inequalities.
pub fn random_qp(rng: &mut impl Rng) -> QpInstance {
    let n = rng.random_range(2..=8);
    let m = rng.random_range(0..=(n - 1).min(2));
    let p = rng.random_range(1..=(10 - m));
    let max_active = (n - m).min(p);
    let active = rng.random_range(0..=max_active);

    let l = randn_mat(rng, n, n) * 0.5;
    let q = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
    let x = randn_vec(rng, n);
    let g = randn_mat(rng, p, n);
    let a = randn_mat(rng, m, n);
    let mut lambda = DVector::zeros(p);
    let mut h = &g * &x;
    for i in 0..p {
        if i < active {
            lambda[i] = rng.random_range(0.5..2.0);
        } else {
            h[i] += rng.random_range(0.5..2.0);
        }
    }
    let mu = randn_vec(rng, m);
    let b = &a * &x;
    let c = -(&q * &x + g.tr_mul(&lambda) + a.tr_mul(&mu));
    QpInstance {
        form: QpForm::from_matrices(q, c, g, h, a, b),
        x,
        lambda,
        mu,
    }
}

/// Random perturbation of every QP data block, `dQ` symmetric.
pub fn random_qp_tangent(rng: &mut impl Rng, form: &QpForm) -> QpTangentIn {
    let (n, p, m) = (form.n(), form.p(), form.m());
    let dq = randn_mat(rng, n, n);
    QpTangentIn {
        dq: (&dq + dq.transpose()) * 0.5,
        dc: randn_vec(rng, n),
        dg: randn_mat(rng, p, n),
        dh: randn_vec(rng, p),
        da: randn_mat(rng, m, n),
        db: randn_vec(rng, m),
    }
}

pub fn perturb_qp(form: &QpForm, t: &QpTangentIn, h: f64) -> QpForm {
    QpForm::from_matrices(
        &form.q + &t.dq * h,
        &form.c + &t.dc * h,
        &form.g + &t.dg * h,
        &form.h + &t.dh * h,
        &form.a + &t.da * h,
        &form.b + &t.db * h,
    )
}

pub struct ConicInstance {
    pub form: ConicForm,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub s: DVector<f64>,
}

fn unit(rng: &mut impl Rng, d: usize) -> DVector<f64> {
    let u = randn_vec(rng, d);
    let nrm = u.norm();
    u / nrm
}

/// Random LP (`with_soc == false`) or LP+SOC instance with `m ≤ 12`.
///
/// The number of variables equals the number of independent active
/// conditions, so the primal and dual solutions are unique.
pub fn random_conic(rng: &mut impl Rng, with_soc: bool) -> ConicInstance {
    loop {
        let zero = rng.random_range(0..=2usize);
        let nonneg = rng.random_range(1..=5usize);
        let nn_active = rng.random_range(0..=nonneg);
        let socs = if with_soc { rng.random_range(1..=2usize) } else { 0 };
        // 0: slack interior, 1: both on the boundary, 2: slack at the apex
        let modes: Vec<u8> = (0..socs).map(|_| rng.random_range(0..3u8)).collect();
        let n = zero + nn_active + modes.iter().map(|&k| [0, 1, 3][k as usize]).sum::<usize>();
        let m = zero + nonneg + 3 * socs;
        if n == 0 || m > 12 {
            continue;
        }

        let mut cones = Vec::new();
        let mut s = Vec::new();
        let mut y = Vec::new();
        if zero > 0 {
            cones.push(ConeSet::Zero(zero));
            for _ in 0..zero {
                s.push(0.0);
                y.push(normal(rng));
            }
        }
        cones.push(ConeSet::Nonnegative(nonneg));
        for i in 0..nonneg {
            if i < nn_active {
                s.push(0.0);
                y.push(rng.random_range(0.5..2.0));
            } else {
                s.push(rng.random_range(0.5..2.0));
                y.push(0.0);
            }
        }
        for &mode in &modes {
            cones.push(ConeSet::SecondOrder(3));
            let u = unit(rng, 2);
            let (sb, yb) = match mode {
                0 => {
                    let t = rng.random_range(1.0..2.0);
                    let r = rng.random_range(0.0..0.5) * t;
                    (vec![t, r * u[0], r * u[1]], vec![0.0; 3])
                }
                1 => {
                    let a = rng.random_range(0.5..2.0);
                    let b = rng.random_range(0.5..2.0);
                    (vec![a, a * u[0], a * u[1]], vec![b, -b * u[0], -b * u[1]])
                }
                _ => {
                    let t = rng.random_range(1.0..2.0);
                    let r = rng.random_range(0.0..0.5) * t;
                    (vec![0.0; 3], vec![t, r * u[0], r * u[1]])
                }
            };
            s.extend(sb);
            y.extend(yb);
        }
        let s = DVector::from_vec(s);
        let y = DVector::from_vec(y);
        let x = randn_vec(rng, n);
        let a = randn_mat(rng, m, n);
        let b = &a * &x + &s;
        let c = -a.tr_mul(&y);
        return ConicInstance {
            form: ConicForm::from_matrices(a, b, c, cones),
            x,
            y,
            s,
        };
    }
}

pub fn random_conic_tangent(rng: &mut impl Rng, form: &ConicForm) -> ConicTangentIn {
    ConicTangentIn {
        da: randn_mat(rng, form.m(), form.n()),
        db: randn_vec(rng, form.m()),
        dc: randn_vec(rng, form.n()),
    }
}

pub fn perturb_conic(form: &ConicForm, t: &ConicTangentIn, h: f64) -> ConicForm {
    ConicForm::from_matrices(
        &form.a + &t.da * h,
        &form.b + &t.db * h,
        &form.c + &t.dc * h,
        form.cones.clone(),
    )
}

pub fn affine(coefs: &[f64], constant: f64) -> ScalarAffineFunction {
    ScalarAffineFunction::from_dense(coefs.iter().copied(), constant)
}

pub fn linear_objective(c: &[f64]) -> ScalarQuadraticFunction {
    ScalarQuadraticFunction::affine(affine(c, 0.0))
}

pub struct RandomLp {
    pub n: usize,
    pub c: Vec<f64>,
    pub rows: Vec<(Vec<f64>, ConeSet)>,
}

/// LP with a planted vertex solution: `n` active constraints (a mix of
/// `=`, `≥`, `≤`) with strictly signed duals and a few inactive ones.
pub fn random_lp(r: &mut impl Rng) -> RandomLp {
    let n = r.random_range(2..=5usize);
    let inactive = r.random_range(1..=3usize);
    let x = randn_vec(r, n);
    let mut c = DVector::zeros(n);
    let mut rows = Vec::new();
    for i in 0..n + inactive {
        let a = randn_vec(r, n);
        let ax = a.dot(&x);
        let kind = r.random_range(0..3u8);
        let active = i < n;
        let set = match (kind, active) {
            (0, true) => {
                c += &a * normal(r);
                ConeSet::EqualTo(ax)
            }
            (1, true) | (0, false) => {
                let y: f64 = if active { r.random_range(0.5..2.0) } else { 0.0 };
                c += &a * y;
                ConeSet::GreaterThan(if active { ax } else { ax - r.random_range(0.5..2.0) })
            }
            _ => {
                let y: f64 = if active { -r.random_range(0.5..2.0) } else { 0.0 };
                c += &a * y;
                ConeSet::LessThan(if active { ax } else { ax + r.random_range(0.5..2.0) })
            }
        };
        rows.push((a.iter().copied().collect(), set));
    }
    RandomLp {
        n,
        c: c.iter().copied().collect(),
        rows,
    }
}

pub fn bridged_model(lp: &RandomLp) -> ProblemModel {
    let mut b = ProblemBuilder::with_variables(lp.n);
    for (i, (a, set)) in lp.rows.iter().enumerate() {
        b.add_constraint(format!("c{i}"), affine(a, 0.0), *set);
    }
    b.minimize(linear_objective(&lp.c));
    b.build().unwrap()
}

/// The same LP written directly with `Zero`/`Nonnegative` rows.
pub fn lowered_model(lp: &RandomLp) -> ProblemModel {
    let mut b = ProblemBuilder::with_variables(lp.n);
    for (i, (a, set)) in lp.rows.iter().enumerate() {
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let (row, target) = match *set {
            ConeSet::GreaterThan(v) => (affine(a, -v), ConeSet::Nonnegative(1)),
            ConeSet::LessThan(v) => (affine(&neg, v), ConeSet::Nonnegative(1)),
            ConeSet::EqualTo(v) => (affine(a, -v), ConeSet::Zero(1)),
            _ => unreachable!(),
        };
        b.add_constraint(format!("c{i}"), VectorAffineFunction::new(vec![row]), target);
    }
    b.minimize(linear_objective(&lp.c));
    b.build().unwrap()
}

/// Sign of the lowering map of a scalar set.
pub fn lowering_sign(set: &ConeSet) -> f64 {
    if matches!(set, ConeSet::LessThan(_)) {
        -1.0
    } else {
        1.0
    }
}

/// `‖a − b‖ ≤ rel·‖b‖ + abs`.
pub fn close(a: &DVector<f64>, b: &DVector<f64>, rel: f64, abs: f64) -> bool {
    (a - b).norm() <= rel * b.norm() + abs
}
