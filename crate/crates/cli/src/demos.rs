//! The tutorial computations behind the demo commands, kept free of file
//! I/O so that tests can call them directly.

use optdiff::{
    ConeSet, DiffEngine, EngineSettings, ProblemBuilder, ProblemModel, ScalarAffineFunction, ScalarQuadraticFunction,
    SolveStatus, SolverSettings, VariableId, VectorAffineFunction,
};

use crate::error::{CliError, CliResult};
use crate::synthetic::{Labelled, Regression};

/// Lower bound applied to the regularization weight during descent.
pub const ALPHA_FLOOR: f64 = 1e-8;

pub fn engine_settings(tol: f64) -> EngineSettings {
    EngineSettings {
        solver: SolverSettings {
            tol,
            ..SolverSettings::default()
        },
        ..EngineSettings::default()
    }
}

/// Optimizes and insists on an optimal status.
pub fn solve(engine: &mut DiffEngine) -> CliResult<()> {
    match engine.optimize().map_err(CliError::solve)? {
        SolveStatus::Optimal => Ok(()),
        other => Err(CliError::Solve(format!("solver finished with status {}", other.as_str()))),
    }
}

fn build(b: &ProblemBuilder) -> CliResult<ProblemModel> {
    b.build().map_err(CliError::input)
}

/// A model with display names for its variables.
#[derive(Debug, Clone)]
pub struct NamedModel {
    pub model: ProblemModel,
    pub names: Vec<String>,
}

// ---- soft-margin SVM ----

/// `min λ‖w‖² + Σξᵢ  s.t.  yᵢ(Xᵢᵀw + b) + ξᵢ ≥ 1,  ξᵢ ≥ 0` over
/// `(ξ₁…ξₙ, w₁…w_d, b)`. Margin constraints are `margin[i]`.
pub fn svm_problem(data: &Labelled, lambda: f64) -> CliResult<NamedModel> {
    let n = data.x.len();
    let d = data.x.first().map_or(0, |r| r.len());
    if n < 4 || d < 1 {
        return Err(CliError::Input(format!("need n ≥ 4 and d ≥ 1, got n = {n}, d = {d}")));
    }
    if data.x.iter().any(|r| r.len() != d) {
        return Err(CliError::Input("ragged feature matrix".into()));
    }
    let xi = |i: usize| VariableId(i);
    let w = |k: usize| VariableId(n + k);
    let bias = VariableId(n + d);
    let mut b = ProblemBuilder::with_variables(n + d + 1);
    let mut obj = ScalarQuadraticFunction::default();
    for k in 0..d {
        obj.add_product(w(k), w(k), lambda);
    }
    for i in 0..n {
        obj.add_linear(xi(i), 1.0);
    }
    b.minimize(obj);
    for i in 0..n {
        let yi = data.y[i];
        let mut terms: Vec<(VariableId, f64)> = (0..d).map(|k| (w(k), yi * data.x[i][k])).collect();
        terms.push((bias, yi));
        terms.push((xi(i), 1.0));
        b.add_constraint(format!("margin[{i}]"), ScalarAffineFunction::new(terms, 0.0), ConeSet::GreaterThan(1.0));
        b.add_constraint(format!("slack[{i}]"), ScalarAffineFunction::variable(xi(i)), ConeSet::GreaterThan(0.0));
    }
    let mut names: Vec<String> = (0..n).map(|i| format!("xi[{i}]")).collect();
    names.extend((0..d).map(|k| format!("w[{k}]")));
    names.push("b".into());
    Ok(NamedModel { model: build(&b)?, names })
}

/// Tangent of `margin[i]` when every feature of point `i` moves by the same
/// amount: `yᵢ Σₖ wₖ`.
pub fn svm_tangent(data: &Labelled, i: usize) -> ScalarAffineFunction {
    let n = data.x.len();
    let d = data.x[0].len();
    ScalarAffineFunction::new((0..d).map(|k| (VariableId(n + k), data.y[i])).collect(), 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmFit {
    pub w: Vec<f64>,
    pub b: f64,
    /// Duals of the margin constraints.
    pub duals: Vec<f64>,
    /// `‖∂w/∂Xᵢ‖ + |∂b/∂Xᵢ|` per point.
    pub sensitivity: Vec<f64>,
    pub approximate: bool,
}

pub fn svm_sensitivity(data: &Labelled, lambda: f64, settings: EngineSettings) -> CliResult<SvmFit> {
    let problem = svm_problem(data, lambda)?;
    let n = data.x.len();
    let d = data.x[0].len();
    let mut engine = DiffEngine::with_settings(problem.model, settings);
    solve(&mut engine)?;
    let x = engine.primal_vector().map_err(CliError::solve)?;
    let mut duals = Vec::with_capacity(n);
    let mut sensitivity = Vec::with_capacity(n);
    let mut approximate = false;
    for i in 0..n {
        let id = format!("margin[{i}]");
        duals.push(engine.constraint_dual(&id.as_str().into()).map_err(CliError::solve)?[0]);
        engine.reset_tangents();
        engine.set_forward_constraint(id.as_str(), svm_tangent(data, i)).map_err(CliError::solve)?;
        engine.forward_differentiate().map_err(CliError::solve)?;
        approximate |= engine.is_approximate();
        let dx = engine.forward_variable_primals().map_err(CliError::solve)?;
        let dw: f64 = dx[n..n + d].iter().map(|v| v * v).sum::<f64>().sqrt();
        sensitivity.push(dw + dx[n + d].abs());
    }
    Ok(SvmFit {
        w: x[n..n + d].to_vec(),
        b: x[n + d],
        duals,
        sensitivity,
        approximate,
    })
}

// ---- univariate ridge regression ----

/// `min (1/N) Σ (yᵢ − w xᵢ − b)² + α(w² + b²)` over `(w, b)`.
pub fn ridge_problem(x: &[f64], y: &[f64], alpha: f64) -> CliResult<NamedModel> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(CliError::Input(format!("need n ≥ 2 paired samples, got {n}")));
    }
    let nf = n as f64;
    let (w, b) = (VariableId(0), VariableId(1));
    let sum = |f: &dyn Fn(usize) -> f64| (0..n).map(f).sum::<f64>() / nf;
    let mut obj = ScalarQuadraticFunction::default();
    obj.add_product(w, w, sum(&|i| x[i] * x[i]) + alpha);
    obj.add_product(b, b, 1.0 + alpha);
    obj.add_product(w, b, 2.0 * sum(&|i| x[i]));
    obj.add_linear(w, -2.0 * sum(&|i| x[i] * y[i]));
    obj.add_linear(b, -2.0 * sum(&|i| y[i]));
    obj.affine.constant = sum(&|i| y[i] * y[i]);
    let mut builder = ProblemBuilder::with_variables(2);
    builder.minimize(obj);
    Ok(NamedModel {
        model: build(&builder)?,
        names: vec!["w".into(), "b".into()],
    })
}

/// Derivative of the objective in `xᵢ`: `(2w²xᵢ + 2bw − 2wyᵢ)/N`.
pub fn ridge_x_tangent(xi: f64, yi: f64, n: usize) -> ScalarQuadraticFunction {
    let nf = n as f64;
    let (w, b) = (VariableId(0), VariableId(1));
    let mut f = ScalarQuadraticFunction::default();
    f.add_product(w, w, 2.0 * xi / nf);
    f.add_product(w, b, 2.0 / nf);
    f.add_linear(w, -2.0 * yi / nf);
    f
}

/// Derivative of the objective in `yᵢ`: `(2yᵢ − 2b − 2wxᵢ)/N`.
pub fn ridge_y_tangent(xi: f64, yi: f64, n: usize) -> ScalarQuadraticFunction {
    let nf = n as f64;
    let (w, b) = (VariableId(0), VariableId(1));
    let mut f = ScalarQuadraticFunction::affine(ScalarAffineFunction::constant(2.0 * yi / nf));
    f.add_linear(b, -2.0 / nf);
    f.add_linear(w, -2.0 * xi / nf);
    f
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub w: f64,
    pub b: f64,
    pub dw_dx: Vec<f64>,
    pub dw_dy: Vec<f64>,
    pub db_dx: Vec<f64>,
    pub db_dy: Vec<f64>,
    pub approximate: bool,
}

pub fn ridge_sensitivity(x: &[f64], y: &[f64], alpha: f64, settings: EngineSettings) -> CliResult<RidgeFit> {
    let problem = ridge_problem(x, y, alpha)?;
    let n = x.len();
    let mut engine = DiffEngine::with_settings(problem.model, settings);
    solve(&mut engine)?;
    let sol = engine.primal_vector().map_err(CliError::solve)?;
    let mut fit = RidgeFit {
        w: sol[0],
        b: sol[1],
        dw_dx: Vec::with_capacity(n),
        dw_dy: Vec::with_capacity(n),
        db_dx: Vec::with_capacity(n),
        db_dy: Vec::with_capacity(n),
        approximate: false,
    };
    for i in 0..n {
        for (tangent, dw, db) in [
            (ridge_x_tangent(x[i], y[i], n), &mut fit.dw_dx, &mut fit.db_dx),
            (ridge_y_tangent(x[i], y[i], n), &mut fit.dw_dy, &mut fit.db_dy),
        ] {
            engine.reset_tangents();
            engine.set_forward_objective(tangent).map_err(CliError::solve)?;
            engine.forward_differentiate().map_err(CliError::solve)?;
            fit.approximate |= engine.is_approximate();
            let d = engine.forward_variable_primals().map_err(CliError::solve)?;
            dw.push(d[0]);
            db.push(d[1]);
        }
    }
    Ok(fit)
}

// ---- regularization weight by gradient descent ----

/// `min ‖Xw − y‖²/(2ND) + α‖w‖²/(2D)` on the training split.
pub fn regression_problem(data: &Regression, alpha: f64) -> CliResult<ProblemModel> {
    let d = data.features();
    let n = data.x_train.len();
    if n == 0 || d == 0 {
        return Err(CliError::Input("empty training set".into()));
    }
    let scale = 1.0 / (n as f64 * d as f64);
    let mut obj = ScalarQuadraticFunction::default();
    for i in 0..d {
        for j in i..d {
            let mut v: f64 = data.x_train.iter().map(|r| r[i] * r[j]).sum::<f64>() * scale;
            if i == j {
                v += alpha / d as f64;
            }
            obj.quadratic_terms.push((VariableId(i), VariableId(j), v));
        }
        let xy: f64 = data.x_train.iter().zip(&data.y_train).map(|(r, y)| r[i] * y).sum();
        obj.add_linear(VariableId(i), -xy * scale);
    }
    obj.affine.constant = data.y_train.iter().map(|y| y * y).sum::<f64>() * 0.5 * scale;
    let mut b = ProblemBuilder::with_variables(d);
    b.minimize(obj);
    build(&b)
}

/// `‖X_test w − y_test‖²/(2ND)` and the residual vector.
fn test_residual(data: &Regression, w: &[f64]) -> (f64, Vec<f64>) {
    let err: Vec<f64> = data
        .x_test
        .iter()
        .zip(&data.y_test)
        .map(|(r, y)| r.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() - y)
        .collect();
    let scale = 1.0 / (data.x_test.len() as f64 * data.features() as f64);
    (0.5 * scale * err.iter().map(|e| e * e).sum::<f64>(), err)
}

/// Test loss of the model fitted at `alpha`.
pub fn test_loss(data: &Regression, alpha: f64, settings: EngineSettings) -> CliResult<f64> {
    let mut engine = DiffEngine::with_settings(regression_problem(data, alpha)?, settings);
    solve(&mut engine)?;
    let w = engine.primal_vector().map_err(CliError::solve)?;
    Ok(test_residual(data, &w).0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub w: Vec<f64>,
    pub test_loss: f64,
    /// `∂l_test/∂α`.
    pub d_alpha: f64,
    pub approximate: bool,
}

/// Fits at `alpha`, then chains `∂w/∂α` (objective tangent `⟨w, w⟩/(2D)`)
/// into the test loss.
pub fn test_loss_gradient(data: &Regression, alpha: f64, settings: EngineSettings) -> CliResult<LossGradient> {
    let d = data.features();
    let mut engine = DiffEngine::with_settings(regression_problem(data, alpha)?, settings);
    solve(&mut engine)?;
    let w = engine.primal_vector().map_err(CliError::solve)?;
    let mut tangent = ScalarQuadraticFunction::default();
    for k in 0..d {
        tangent.add_product(VariableId(k), VariableId(k), 0.5 / d as f64);
    }
    engine.set_forward_objective(tangent).map_err(CliError::solve)?;
    engine.forward_differentiate().map_err(CliError::solve)?;
    let dw = engine.forward_variable_primals().map_err(CliError::solve)?;
    let (loss, err) = test_residual(data, &w);
    let scale = 1.0 / (data.x_test.len() as f64 * d as f64);
    let d_alpha = scale
        * data
            .x_test
            .iter()
            .zip(&err)
            .map(|(r, e)| e * r.iter().zip(dw).map(|(a, b)| a * b).sum::<f64>())
            .sum::<f64>();
    Ok(LossGradient {
        w,
        test_loss: loss,
        d_alpha,
        approximate: engine.is_approximate(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentRow {
    pub iter: usize,
    pub alpha: f64,
    pub d_alpha: f64,
    pub test_loss: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentTrace {
    pub rows: Vec<DescentRow>,
    /// Stopped on `|∂α| ≤ grad_tol` rather than the iteration cap.
    pub converged: bool,
}

/// Fixed-step descent `α ← α − step·∂α`, floored at [`ALPHA_FLOOR`].
pub fn hyperparameter_descent(
    data: &Regression,
    alpha0: f64,
    max_iters: usize,
    step: f64,
    grad_tol: f64,
    settings: EngineSettings,
) -> CliResult<DescentTrace> {
    if alpha0.is_nan() || alpha0 <= 0.0 {
        return Err(CliError::Input(format!("alpha0 must be positive, got {alpha0}")));
    }
    let mut alpha = alpha0;
    let mut note = String::new();
    let mut rows = Vec::new();
    for iter in 0..max_iters {
        let g = test_loss_gradient(data, alpha, settings)?;
        rows.push(DescentRow {
            iter,
            alpha,
            d_alpha: g.d_alpha,
            test_loss: g.test_loss,
            note: std::mem::take(&mut note),
        });
        if g.d_alpha.abs() <= grad_tol {
            return Ok(DescentTrace { rows, converged: true });
        }
        alpha -= step * g.d_alpha;
        if alpha < ALPHA_FLOOR {
            alpha = ALPHA_FLOOR;
            note = "alpha clamped to 1e-8".into();
        }
    }
    Ok(DescentTrace { rows, converged: false })
}

// ---- batched projection layers ----

fn projection_names(batch: usize, size: usize) -> Vec<String> {
    (0..batch)
        .flat_map(|s| (0..size).map(move |k| format!("x[{s}][{k}]")))
        .collect()
}

/// `Σₛ ‖xₛ‖² − 2yₛᵀxₛ`, variables ordered sample-major.
fn projection_objective(y: &[Vec<f64>]) -> ScalarQuadraticFunction {
    let mut obj = ScalarQuadraticFunction::default();
    let size = y.first().map_or(0, |r| r.len());
    for (s, row) in y.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            let var = VariableId(s * size + k);
            obj.add_product(var, var, 1.0);
            obj.add_linear(var, -2.0 * v);
        }
    }
    obj
}

fn check_batch(y: &[Vec<f64>]) -> CliResult<(usize, usize)> {
    let batch = y.len();
    let size = y.first().map_or(0, |r| r.len());
    if batch == 0 || size == 0 || y.iter().any(|r| r.len() != size) {
        return Err(CliError::Input("batch and size must be at least 1".into()));
    }
    Ok((batch, size))
}

/// Projection of every sample onto the nonnegative orthant, one vector
/// constraint `x ∈ ℝ₊^(batch·size)` named `nonneg`.
pub fn relu_problem(y: &[Vec<f64>]) -> CliResult<NamedModel> {
    let (batch, size) = check_batch(y)?;
    let vars: Vec<VariableId> = (0..batch * size).map(VariableId).collect();
    let mut b = ProblemBuilder::with_variables(batch * size);
    b.minimize(projection_objective(y));
    b.add_constraint("nonneg", VectorAffineFunction::variables(&vars), ConeSet::Nonnegative(batch * size));
    Ok(NamedModel {
        model: build(&b)?,
        names: projection_names(batch, size),
    })
}

/// Projection onto `{x : wᵢᵀx ≥ bᵢ}` per sample; constraint `halfspace[i][s]`.
pub fn polytope_problem(y: &[Vec<f64>], w: &[Vec<f64>], bias: &[f64]) -> CliResult<NamedModel> {
    let (batch, size) = check_batch(y)?;
    if w.len() != bias.len() || w.iter().any(|r| r.len() != size) {
        return Err(CliError::Input("hyperplane dimensions do not match".into()));
    }
    let mut b = ProblemBuilder::with_variables(batch * size);
    b.minimize(projection_objective(y));
    for (i, (wi, bi)) in w.iter().zip(bias).enumerate() {
        for s in 0..batch {
            let terms = wi.iter().enumerate().map(|(k, c)| (VariableId(s * size + k), *c)).collect();
            b.add_constraint(
                format!("halfspace[{i}][{s}]"),
                ScalarAffineFunction::new(terms, 0.0),
                ConeSet::GreaterThan(*bi),
            );
        }
    }
    Ok(NamedModel {
        model: build(&b)?,
        names: projection_names(batch, size),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    /// Projected points, `batch × size`.
    pub x: Vec<Vec<f64>>,
    pub dl_dy: Vec<Vec<f64>>,
    /// Polytope mode only: batch-averaged `∂l/∂wᵢ` and `∂l/∂bᵢ`.
    pub dl_dw: Vec<Vec<f64>>,
    pub dl_db: Vec<f64>,
    pub approximate: bool,
}

fn unflatten(v: &[f64], size: usize) -> Vec<Vec<f64>> {
    v.chunks(size).map(|c| c.to_vec()).collect()
}

/// Solves the layer and pulls `dl/dx` back. `Ok(None)` when the problem is
/// infeasible.
pub fn projection_layer(
    problem: &NamedModel,
    y: &[Vec<f64>],
    hyperplanes: usize,
    dl_dx: &[Vec<f64>],
    settings: EngineSettings,
) -> CliResult<Option<LayerGradients>> {
    let (batch, size) = check_batch(y)?;
    let mut engine = DiffEngine::with_settings(problem.model.clone(), settings);
    match engine.optimize().map_err(CliError::solve)? {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Ok(None),
        other => return Err(CliError::Solve(format!("solver finished with status {}", other.as_str()))),
    }
    for (s, row) in dl_dx.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            engine.set_reverse_variable(VariableId(s * size + k), *v).map_err(CliError::solve)?;
        }
    }
    engine.reverse_differentiate().map_err(CliError::solve)?;
    let obj = engine.reverse_objective().map_err(CliError::solve)?;
    // the linear objective coefficient is −2y
    let dl_dy: Vec<f64> = (0..batch * size).map(|v| -2.0 * obj.coefficient(VariableId(v))).collect();

    let mut dl_dw = vec![vec![0.0; size]; hyperplanes];
    let mut dl_db = vec![0.0; hyperplanes];
    for i in 0..hyperplanes {
        for s in 0..batch {
            let g = engine
                .reverse_constraint(&format!("halfspace[{i}][{s}]").into())
                .map_err(CliError::solve)?;
            let row = &g.rows()[0];
            for (k, g) in dl_dw[i].iter_mut().enumerate() {
                *g += row.coefficient(VariableId(s * size + k)) / batch as f64;
            }
            dl_db[i] += row.constant / batch as f64;
        }
    }
    let x = engine.primal_vector().map_err(CliError::solve)?;
    Ok(Some(LayerGradients {
        x: unflatten(&x, size),
        dl_dy: unflatten(&dl_dy, size),
        dl_dw,
        dl_db,
        approximate: engine.is_approximate(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    #[test]
    fn square_svm_has_unit_normal() {
        let data = synthetic::svm_square();
        let fit = svm_sensitivity(&data, 0.05, engine_settings(1e-9)).unwrap();
        assert!((fit.w[0] - 1.0).abs() < 1e-7 && fit.w[1].abs() < 1e-7 && fit.b.abs() < 1e-7);
        assert!((fit.duals[0] - 0.05).abs() < 1e-7 && (fit.duals[2] - 0.05).abs() < 1e-7);
        assert!(fit.sensitivity[1] <= 1e-6 && fit.sensitivity[3] <= 1e-6);
        assert!(fit.sensitivity[0] > 1e-4 && fit.sensitivity[2] > 1e-4);
    }

    #[test]
    fn ridge_tangents_are_objective_derivatives() {
        // d/dxᵢ of the objective, checked against the model's own evaluation
        let (x, y) = synthetic::ridge_dataset(5, 2);
        let (wv, bv, h) = (0.7, -0.2, 1e-6);
        for i in 0..5 {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let f = |xs: &[f64]| ridge_problem(xs, &y, 0.1).unwrap().model.objective().eval(&[wv, bv]);
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!((ridge_x_tangent(x[i], y[i], 5).eval(&[wv, bv]) - fd).abs() < 1e-8);
            let mut yp = y.clone();
            yp[i] += h;
            let mut ym = y.clone();
            ym[i] -= h;
            let g = |ys: &[f64]| ridge_problem(&x, ys, 0.1).unwrap().model.objective().eval(&[wv, bv]);
            let fd = (g(&yp) - g(&ym)) / (2.0 * h);
            assert!((ridge_y_tangent(x[i], y[i], 5).eval(&[wv, bv]) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_step_keeps_alpha() {
        let data = synthetic::regression_split(6, 10, 3, 1.0, 1);
        let trace = hyperparameter_descent(&data, 0.3, 4, 0.0, 0.0, engine_settings(1e-9)).unwrap();
        assert_eq!(trace.rows.len(), 4);
        assert!(trace.rows.iter().all(|r| r.alpha == 0.3));
        assert!(hyperparameter_descent(&data, 0.0, 4, 0.0, 0.0, engine_settings(1e-9)).is_err());
    }

    #[test]
    fn relu_layer_with_positive_inputs_is_identity() {
        let y = vec![vec![0.5, 1.0], vec![2.0, 0.25]];
        let seed = vec![vec![1.0, -2.0], vec![0.5, 3.0]];
        let p = relu_problem(&y).unwrap();
        let g = projection_layer(&p, &y, 0, &seed, engine_settings(1e-9)).unwrap().unwrap();
        for s in 0..2 {
            for k in 0..2 {
                assert!((g.x[s][k] - y[s][k]).abs() < 1e-9);
                assert!((g.dl_dy[s][k] - seed[s][k]).abs() < 1e-9);
            }
        }
    }
}
