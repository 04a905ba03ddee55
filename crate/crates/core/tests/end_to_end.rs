//! Engine-level behaviour: the worked example, bridged versus hand-lowered
//! models, and agreement between the two solution paths.

mod common;

use common::*;
use nalgebra::DVector;
use optdiff::{
    ConeSet, ConstraintFunction, DiffEngine, EngineSettings, Error, ProblemBuilder, ProblemClass,
    ScalarAffineFunction, ScalarQuadraticFunction, SolveStatus, SolverChoice, VariableId, VectorAffineFunction,
};

#[test]
fn worked_example() {
    let mut b = ProblemBuilder::new();
    let x = b.add_variable();
    b.add_constraint("cons", ScalarAffineFunction::variable(x), ConeSet::GreaterThan(3.0));
    b.minimize(linear_objective(&[2.0]));
    let mut e = DiffEngine::new(b.build().unwrap());
    assert_eq!(e.optimize().unwrap(), SolveStatus::Optimal);
    assert!((e.primal(x).unwrap() - 3.0).abs() < 1e-12);
    assert!((e.objective_value().unwrap() - 6.0).abs() < 1e-12);

    e.set_reverse_variable(x, 1.0).unwrap();
    e.reverse_differentiate().unwrap();
    let g = &e.reverse_constraint(&"cons".into()).unwrap().rows()[0];
    assert!((g.coefficient(x) + 3.0).abs() < 1e-9);
    assert!((g.constant - 1.0).abs() < 1e-9);
    // x does not depend on the objective
    let obj = e.reverse_objective().unwrap();
    assert!(obj.coefficient(x).abs() < 1e-12);
}

#[test]
fn worked_example_forward_matches_reverse() {
    let mut b = ProblemBuilder::new();
    let x = b.add_variable();
    b.add_constraint("cons", ScalarAffineFunction::variable(x), ConeSet::GreaterThan(3.0));
    b.minimize(linear_objective(&[2.0]));
    let mut e = DiffEngine::new(b.build().unwrap());
    e.optimize().unwrap();
    // coefficient 1 on x: x(1 + t) ≥ 3 gives x = 3/(1 + t), dx = −3
    e.set_forward_constraint("cons", ScalarAffineFunction::new(vec![(x, 1.0)], 0.0)).unwrap();
    e.forward_differentiate().unwrap();
    assert!((e.forward_variable_primal(x).unwrap() + 3.0).abs() < 1e-9);
}

#[test]
fn bridges_are_transparent() {
    let mut r = rng(606);
    for _ in 0..20 {
        let lp = random_lp(&mut r);
        let mut bridged = DiffEngine::new(bridged_model(&lp));
        let mut lowered = DiffEngine::new(lowered_model(&lp));
        assert!(bridged.optimize().unwrap() == SolveStatus::Optimal);
        assert!(lowered.optimize().unwrap() == SolveStatus::Optimal);
        let xb = DVector::from_vec(bridged.primal_vector().unwrap());
        let xl = DVector::from_vec(lowered.primal_vector().unwrap());
        assert!((&xb - &xl).amax() < 1e-10);

        // forward: the same user perturbation stated on both models
        for (i, (_, set)) in lp.rows.iter().enumerate() {
            let dc = randn_vec(&mut r, lp.n);
            let delta = normal(&mut r);
            let sign = lowering_sign(set);
            bridged.set_forward_constraint(format!("c{i}"), affine(dc.as_slice(), delta)).unwrap();
            let row = affine((&dc * sign).as_slice(), sign * delta);
            lowered
                .set_forward_constraint(format!("c{i}"), VectorAffineFunction::new(vec![row]))
                .unwrap();
        }
        let dcost = randn_vec(&mut r, lp.n);
        bridged.set_forward_objective(linear_objective(dcost.as_slice())).unwrap();
        lowered.set_forward_objective(linear_objective(dcost.as_slice())).unwrap();
        bridged.forward_differentiate().unwrap();
        lowered.forward_differentiate().unwrap();
        let db = DVector::from_row_slice(bridged.forward_variable_primals().unwrap());
        let dl = DVector::from_row_slice(lowered.forward_variable_primals().unwrap());
        assert!((&db - &dl).amax() <= 1e-10, "{db} vs {dl}");

        // reverse: gradients agree after the adjoint of the lowering map
        let seed = randn_vec(&mut r, lp.n);
        for (j, s) in seed.iter().enumerate() {
            bridged.set_reverse_variable(VariableId(j), *s).unwrap();
            lowered.set_reverse_variable(VariableId(j), *s).unwrap();
        }
        bridged.reverse_differentiate().unwrap();
        lowered.reverse_differentiate().unwrap();
        for (i, (_, set)) in lp.rows.iter().enumerate() {
            let id = format!("c{i}").into();
            let gb = &bridged.reverse_constraint(&id).unwrap().rows()[0];
            let gl = &lowered.reverse_constraint(&id).unwrap().rows()[0];
            let sign = lowering_sign(set);
            assert!((gb.constant - sign * gl.constant).abs() <= 1e-10);
            for j in 0..lp.n {
                let v = VariableId(j);
                assert!((gb.coefficient(v) - sign * gl.coefficient(v)).abs() <= 1e-10);
            }
        }

        // duals of the user constraints satisfy the user-model KKT system
        let mut stationarity = -DVector::from_row_slice(&lp.c);
        for (i, (a, set)) in lp.rows.iter().enumerate() {
            let id = format!("c{i}").into();
            let y = bridged.constraint_dual(&id).unwrap()[0];
            let value = bridged.constraint_primal(&id).unwrap()[0];
            stationarity += DVector::from_row_slice(a) * y;
            match *set {
                ConeSet::GreaterThan(v) => {
                    assert!(y >= -1e-6 && value >= v - 1e-6 && (y * (value - v)).abs() <= 1e-6);
                }
                ConeSet::LessThan(v) => {
                    assert!(y <= 1e-6 && value <= v + 1e-6 && (y * (value - v)).abs() <= 1e-6);
                }
                ConeSet::EqualTo(v) => assert!((value - v).abs() <= 1e-6),
                _ => unreachable!(),
            }
        }
        assert!(stationarity.amax() <= 1e-6);
    }
}

#[test]
fn lp_solution_tangents_agree_across_paths() {
    let mut r = rng(707);
    for _ in 0..10 {
        let lp = random_lp(&mut r);
        let model = bridged_model(&lp);
        let dcost = randn_vec(&mut r, lp.n);
        let delta = normal(&mut r);
        let mut tangents = Vec::new();
        for choice in [SolverChoice::Auto, SolverChoice::Admm] {
            let settings = EngineSettings {
                choice,
                ..EngineSettings::default()
            };
            let mut e = DiffEngine::with_settings(model.clone(), settings);
            assert_eq!(e.optimize().unwrap(), SolveStatus::Optimal);
            let expected = if choice == SolverChoice::Auto {
                ProblemClass::Qp
            } else {
                ProblemClass::Conic
            };
            assert_eq!(e.problem_class(), Some(expected));
            e.set_forward_objective(linear_objective(dcost.as_slice())).unwrap();
            e.set_forward_constraint("c0", ScalarAffineFunction::constant(delta)).unwrap();
            e.forward_differentiate().unwrap();
            tangents.push(DVector::from_row_slice(e.forward_variable_primals().unwrap()));
        }
        assert!((&tangents[0] - &tangents[1]).amax() <= 1e-6);
    }
}

#[test]
fn second_order_model_through_the_engine() {
    // min t s.t. (t, x − 1, 2) ∈ SOC, with x fixed to 3 by an equality:
    // t = √(4 + 4) and dt/d(fixed value) = (x − 1)/t
    let mut b = ProblemBuilder::new();
    let t = b.add_variable();
    let x = b.add_variable();
    b.add_constraint("fix", ScalarAffineFunction::variable(x), ConeSet::EqualTo(3.0));
    let rows = vec![
        ScalarAffineFunction::variable(t),
        ScalarAffineFunction::new(vec![(x, 1.0)], -1.0),
        ScalarAffineFunction::constant(2.0),
    ];
    b.add_constraint("soc", VectorAffineFunction::new(rows), ConeSet::SecondOrder(3));
    b.minimize(ScalarQuadraticFunction::affine(ScalarAffineFunction::variable(t)));
    let mut e = DiffEngine::new(b.build().unwrap());
    assert_eq!(e.optimize().unwrap(), SolveStatus::Optimal);
    assert_eq!(e.problem_class(), Some(ProblemClass::Conic));
    let tv = e.primal(t).unwrap();
    assert!((tv - 8f64.sqrt()).abs() < 1e-8);

    e.set_forward_constraint("fix", ScalarAffineFunction::constant(1.0)).unwrap();
    e.forward_differentiate().unwrap();
    assert!((e.forward_variable_primal(t).unwrap() - 2.0 / tv).abs() < 1e-6);
    assert!((e.forward_variable_primal(x).unwrap() - 1.0).abs() < 1e-6);

    e.reset_tangents();
    e.set_reverse_variable(t, 1.0).unwrap();
    e.reverse_differentiate().unwrap();
    let g = &e.reverse_constraint(&"fix".into()).unwrap().rows()[0];
    assert!((g.constant - 2.0 / tv).abs() < 1e-6);

    // a quadratic objective tangent needs the quadratic path
    let mut dq = ScalarQuadraticFunction::default();
    dq.add_product(x, x, 1.0);
    e.set_forward_objective(dq).unwrap();
    assert!(matches!(e.forward_differentiate(), Err(Error::UnsupportedClass(_))));
}

#[test]
fn quadratic_objective_gradient_is_symmetric() {
    // unconstrained: min x² + y² + xy/4 − x − 2y
    let mut f = ScalarQuadraticFunction::default();
    f.add_product(VariableId(0), VariableId(0), 1.0);
    f.add_product(VariableId(1), VariableId(1), 1.0);
    f.add_product(VariableId(0), VariableId(1), 0.25);
    f.add_linear(VariableId(0), -1.0);
    f.add_linear(VariableId(1), -2.0);
    let mut b = ProblemBuilder::with_variables(2);
    b.minimize(f.clone());
    let mut e = DiffEngine::new(b.build().unwrap());
    e.optimize().unwrap();
    let x = DVector::from_vec(e.primal_vector().unwrap());
    let q = f.q_matrix(2);
    let c = DVector::from_vec(vec![-1.0, -2.0]);
    assert!((&q * &x + &c).amax() < 1e-10);

    let seed = DVector::from_vec(vec![0.3, -0.7]);
    for j in 0..2 {
        e.set_reverse_variable(VariableId(j), seed[j]).unwrap();
    }
    e.reverse_differentiate().unwrap();
    let g = e.reverse_objective().unwrap().clone();

    // ⟨seed, dx⟩ for dx = −Q⁻¹(dQ x + dc) equals the pairing with the gradient
    let mut r = rng(1);
    for _ in 0..5 {
        let mut df = ScalarQuadraticFunction::default();
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            df.add_product(VariableId(i), VariableId(j), normal(&mut r));
        }
        df.add_linear(VariableId(0), normal(&mut r));
        df.add_linear(VariableId(1), normal(&mut r));
        e.set_forward_objective(df.clone()).unwrap();
        e.forward_differentiate().unwrap();
        let dx = DVector::from_row_slice(e.forward_variable_primals().unwrap());
        let mut pairing = 0.0;
        for (i, j, v) in &df.quadratic_terms {
            pairing += v * g.quadratic_coefficient(*i, *j);
        }
        for (v, coef) in &df.affine.terms {
            pairing += coef * g.coefficient(*v);
        }
        assert!((seed.dot(&dx) - pairing).abs() < 1e-9);
    }
}

#[test]
fn nonpositive_vector_constraint_is_bridged() {
    // min (x − 2)² s.t. x − 1 ∈ Nonpositive: x = 1, dual −2
    let mut f = ScalarQuadraticFunction::default();
    f.add_product(VariableId(0), VariableId(0), 1.0);
    f.add_linear(VariableId(0), -4.0);
    let mut b = ProblemBuilder::with_variables(1);
    b.add_constraint(
        "upper",
        VectorAffineFunction::new(vec![affine(&[1.0], -1.0)]),
        ConeSet::Nonpositive(1),
    );
    b.minimize(f);
    let mut e = DiffEngine::new(b.build().unwrap());
    e.optimize().unwrap();
    assert!((e.primal(VariableId(0)).unwrap() - 1.0).abs() < 1e-9);
    assert!((e.constraint_dual(&"upper".into()).unwrap()[0] + 2.0).abs() < 1e-8);
    let t = ConstraintFunction::from(VectorAffineFunction::new(vec![ScalarAffineFunction::constant(0.5)]));
    e.set_forward_constraint("upper", t).unwrap();
    e.forward_differentiate().unwrap();
    // x − 1 − 0.5t ≤ 0 moves the bound by 0.5
    assert!((e.forward_variable_primal(VariableId(0)).unwrap() - 0.5).abs() < 1e-9);
}

#[test]
fn random_qp_through_the_engine_matches_the_form_solver() {
    let mut r = rng(12);
    let inst = random_qp(&mut r);
    let form = &inst.form;
    let n = form.n();
    let mut f = ScalarQuadraticFunction::affine(ScalarAffineFunction::from_dense(form.c.iter().copied(), 0.0));
    for j in 0..n {
        for i in 0..=j {
            f.add_product(VariableId(i), VariableId(j), if i == j { 0.5 * form.q[(i, i)] } else { form.q[(i, j)] });
        }
    }
    let mut b = ProblemBuilder::with_variables(n);
    b.minimize(f);
    for i in 0..form.p() {
        let row: Vec<f64> = form.g.row(i).iter().copied().collect();
        b.add_constraint(format!("g{i}"), affine(&row, 0.0), ConeSet::LessThan(form.h[i]));
    }
    for i in 0..form.m() {
        let row: Vec<f64> = form.a.row(i).iter().copied().collect();
        b.add_constraint(format!("a{i}"), affine(&row, 0.0), ConeSet::EqualTo(form.b[i]));
    }
    let mut e = DiffEngine::new(b.build().unwrap());
    e.optimize().unwrap();
    let x = DVector::from_vec(e.primal_vector().unwrap());
    assert!((&x - &inst.x).amax() < 1e-7);
    let expected = form.objective_value(&inst.x);
    assert!((e.objective_value().unwrap() - expected).abs() < 1e-7);
}
