//! Structure of the self-dual embedding on solved instances.

mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use optdiff::cones::ConeProduct;
use optdiff::conic_diff::{assemble_skew_q, embed_solution, normalized_residual, phi};
use optdiff::model::ConicForm;
use optdiff::solvers::{solve_conic, SolverSettings};
use optdiff::ConeSet;

fn settings() -> SolverSettings {
    SolverSettings {
        tol: 1e-9,
        ..SolverSettings::default()
    }
}

fn check_instance(form: &ConicForm) {
    let q = assemble_skew_q(&form.a, &form.b, &form.c).unwrap();
    assert_eq!(&q.q + q.q.transpose(), DMatrix::zeros(q.q.nrows(), q.q.ncols()));

    let (sol, info) = solve_conic(form, &settings()).unwrap();
    assert!(info.is_optimal(), "{info:?}");
    let cones = ConeProduct::new(&form.cones).unwrap();
    let z = embed_solution(&sol, &cones).unwrap();
    assert!(normalized_residual(&z, &q, &cones).unwrap().amax() <= 1e-5);
    let (x, y, s) = phi(&z, &cones).unwrap();
    assert!((x - &sol.x).amax() < 1e-12);
    assert!((y - &sol.y).amax() < 1e-9);
    assert!((s - &sol.s).amax() < 1e-9);
}

#[test]
fn random_lp_and_soc_instances() {
    let mut r = rng(3);
    for k in 0..40 {
        check_instance(&random_conic(&mut r, k % 2 == 0).form);
    }
}

#[test]
fn semidefinite_instance() {
    // min x₁ + x₂ s.t. [[x₁, 1], [1, x₂]] ⪰ 0: optimum x₁ = x₂ = 1
    let r2 = std::f64::consts::SQRT_2;
    let a = DMatrix::from_row_slice(3, 2, &[-1.0, 0.0, 0.0, 0.0, 0.0, -1.0]);
    let form = ConicForm::from_matrices(
        a,
        DVector::from_vec(vec![0.0, r2, 0.0]),
        DVector::from_vec(vec![1.0, 1.0]),
        vec![ConeSet::PsdTriangle(2)],
    );
    check_instance(&form);
    let (sol, _) = solve_conic(&form, &settings()).unwrap();
    assert!((sol.x[0] - 1.0).abs() < 1e-8 && (sol.x[1] - 1.0).abs() < 1e-8);
}

#[test]
fn residual_vanishes_only_at_solutions() {
    let mut r = rng(4);
    let inst = random_conic(&mut r, true);
    let cones = ConeProduct::new(&inst.form.cones).unwrap();
    let q = assemble_skew_q(&inst.form.a, &inst.form.b, &inst.form.c).unwrap();
    let (sol, _) = solve_conic(&inst.form, &settings()).unwrap();
    let mut z = embed_solution(&sol, &cones).unwrap();
    z.z[0] += 0.1;
    assert!(normalized_residual(&z, &q, &cones).unwrap().amax() > 1e-3);
}
