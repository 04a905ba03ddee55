//! Subcommand arguments and their file-level drivers.

use clap::{Args, Parser, Subcommand, ValueEnum};
use optdiff::{DiffEngine, EngineSettings, SolverChoice};
use rand::Rng;
use serde::Serialize;
use serde_json::json;

use crate::demos::{self, engine_settings};
use crate::error::{CliError, CliResult};
use crate::format::{fmt_f64, read_file, write_file, write_json, Csv};
use crate::schema::{self, ProblemFile, TangentFile};
use crate::synthetic;

/// Attempts at drawing a feasible polytope before giving up.
pub const POLYTOPE_DRAWS: usize = 10;

#[derive(Debug, Parser)]
#[command(name = "optdiff", version, about = "Differentiate quadratic and conic programs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a problem file and differentiate it in forward or reverse mode.
    SolveDiff(SolveDiffArgs),
    /// Per-point sensitivity of a soft-margin SVM to its training data.
    SvmSensitivity(SvmArgs),
    /// Per-point sensitivity of a univariate ridge fit.
    RidgeSensitivity(RidgeArgs),
    /// Tune a ridge penalty by gradient descent on the test loss.
    HyperparamDescent(DescentArgs),
    /// Batched projection layer (ReLU or polytope) with a random pullback.
    ProjectionLayer(ProjectionArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Ipm,
    Admm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayerMode {
    Relu,
    Polytope,
}

#[derive(Debug, Clone, Args)]
pub struct SolveDiffArgs {
    #[arg(long)]
    pub problem: String,
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[arg(long)]
    pub tangent: String,
    #[arg(long)]
    pub out: String,
    /// Force the inner solver; by default it follows the problem class.
    #[arg(long, value_enum)]
    pub solver: Option<SolverArg>,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SvmArgs {
    #[arg(long, default_value_t = 40)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub lambda: f64,
    #[arg(long)]
    pub out: String,
    /// Also write the fitted SVM problem as a problem file.
    #[arg(long)]
    pub export_problem: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct RidgeArgs {
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: String,
    #[arg(long)]
    pub export_problem: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct DescentArgs {
    #[arg(long, default_value_t = 0.1)]
    pub alpha0: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub grad_tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Clone, Args)]
pub struct ProjectionArgs {
    #[arg(long, value_enum)]
    pub mode: LayerMode,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 3)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: String,
    #[arg(long)]
    pub export_problem: Option<String>,
    /// Also write the random reverse seed as a tangent file.
    #[arg(long)]
    pub export_tangent: Option<String>,
}

/// Shape of the descent dataset.
pub const DESCENT_TRAIN: usize = 20;
pub const DESCENT_TEST: usize = 200;
pub const DESCENT_FEATURES: usize = 15;
pub const DESCENT_NOISE: f64 = 3.0;
pub const DEFAULT_STEP: f64 = 1.0;

pub fn descent_data(seed: u64) -> synthetic::Regression {
    synthetic::regression_split(DESCENT_TRAIN, DESCENT_TEST, DESCENT_FEATURES, DESCENT_NOISE, seed)
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::SolveDiff(a) => run_solve_diff(a),
        Command::SvmSensitivity(a) => run_svm(a),
        Command::RidgeSensitivity(a) => run_ridge(a),
        Command::HyperparamDescent(a) => run_descent(a),
        Command::ProjectionLayer(a) => run_projection(a),
    }
}

// ---- solve-diff ----

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum DiffOutput {
    Forward(schema::ForwardOutput),
    Reverse(schema::ReverseOutput),
}

pub fn solver_settings(solver: Option<SolverArg>, tol: f64) -> EngineSettings {
    let mut s = engine_settings(tol);
    s.choice = match solver {
        None => SolverChoice::Auto,
        Some(SolverArg::Ipm) => SolverChoice::Ipm,
        Some(SolverArg::Admm) => SolverChoice::Admm,
    };
    s
}

/// Solves `problem` and applies `tangent` in the given mode.
pub fn solve_diff(
    problem: &ProblemFile,
    tangent: &TangentFile,
    mode: Mode,
    settings: EngineSettings,
    meta: serde_json::Value,
) -> CliResult<DiffOutput> {
    let model = problem.to_model()?;
    let mut engine = DiffEngine::with_settings(model, settings);
    match mode {
        Mode::Forward => tangent.apply_forward(&mut engine)?,
        Mode::Reverse => tangent.apply_reverse(&mut engine)?,
    }
    demos::solve(&mut engine)?;
    Ok(match mode {
        Mode::Forward => {
            engine.forward_differentiate().map_err(CliError::solve)?;
            DiffOutput::Forward(schema::forward_output(&engine, &problem.variables, meta)?)
        }
        Mode::Reverse => {
            engine.reverse_differentiate().map_err(CliError::solve)?;
            DiffOutput::Reverse(schema::reverse_output(&engine, meta)?)
        }
    })
}

pub fn run_solve_diff(a: &SolveDiffArgs) -> CliResult<()> {
    if a.tol.is_nan() || a.tol <= 0.0 {
        return Err(CliError::Input(format!("--tol must be positive, got {}", a.tol)));
    }
    let problem = ProblemFile::parse(&read_file(&a.problem)?)?;
    let tangent = TangentFile::parse(&read_file(&a.tangent)?)?;
    let meta = json!({
        "command": "solve-diff",
        "problem": a.problem,
        "tangent": a.tangent,
        "mode": format!("{:?}", a.mode).to_lowercase(),
        "solver": a.solver.map_or("auto".to_string(), |s| format!("{s:?}").to_lowercase()),
        "tol": a.tol,
    });
    let out = solve_diff(&problem, &tangent, a.mode, solver_settings(a.solver, a.tol), meta)?;
    write_json(&a.out, &out)
}

// ---- svm-sensitivity ----

pub fn run_svm(a: &SvmArgs) -> CliResult<()> {
    let data = synthetic::svm_dataset(a.n, a.d, a.seed);
    if let Some(path) = &a.export_problem {
        let p = demos::svm_problem(&data, a.lambda)?;
        write_json(path, &ProblemFile::from_model(&p.model, &p.names))?;
    }
    let fit = demos::svm_sensitivity(&data, a.lambda, engine_settings(1e-9))?;
    let mut header: Vec<String> = (1..=a.d).map(|k| format!("x{k}")).collect();
    header.extend(["y", "sensitivity", "dual"].map(String::from));
    let mut csv = Csv::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    csv.meta("command", "svm-sensitivity")
        .meta("n", a.n)
        .meta("d", a.d)
        .meta("seed", a.seed)
        .meta("lambda", fmt_f64(a.lambda))
        .meta("w", fit.w.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" "))
        .meta("b", fmt_f64(fit.b))
        .meta("approximate", fit.approximate);
    for i in 0..a.n {
        let mut row: Vec<String> = data.x[i].iter().map(|v| fmt_f64(*v)).collect();
        row.push(fmt_f64(data.y[i]));
        row.push(fmt_f64(fit.sensitivity[i]));
        row.push(fmt_f64(fit.duals[i]));
        csv.push(row);
    }
    write_file(&a.out, &csv.render())
}

// ---- ridge-sensitivity ----

pub fn run_ridge(a: &RidgeArgs) -> CliResult<()> {
    let (x, y) = synthetic::ridge_dataset(a.n, a.seed);
    if let Some(path) = &a.export_problem {
        let p = demos::ridge_problem(&x, &y, a.alpha)?;
        write_json(path, &ProblemFile::from_model(&p.model, &p.names))?;
    }
    let fit = demos::ridge_sensitivity(&x, &y, a.alpha, engine_settings(1e-9))?;
    let mut csv = Csv::new(&["x", "y", "dw_dx", "dw_dy", "db_dx", "db_dy"]);
    csv.meta("command", "ridge-sensitivity")
        .meta("n", a.n)
        .meta("alpha", fmt_f64(a.alpha))
        .meta("seed", a.seed)
        .meta("w", fmt_f64(fit.w))
        .meta("b", fmt_f64(fit.b))
        .meta("approximate", fit.approximate);
    for i in 0..a.n {
        csv.push(
            [x[i], y[i], fit.dw_dx[i], fit.dw_dy[i], fit.db_dx[i], fit.db_dy[i]]
                .iter()
                .map(|v| fmt_f64(*v))
                .collect(),
        );
    }
    write_file(&a.out, &csv.render())
}

// ---- hyperparam-descent ----

pub fn run_descent(a: &DescentArgs) -> CliResult<()> {
    let data = descent_data(a.seed);
    let trace = demos::hyperparameter_descent(&data, a.alpha0, a.max_iters, a.step, a.grad_tol, engine_settings(1e-9))?;
    let mut csv = Csv::new(&["iter", "alpha", "d_alpha", "test_loss", "note"]);
    csv.meta("command", "hyperparam-descent")
        .meta("alpha0", fmt_f64(a.alpha0))
        .meta("max_iters", a.max_iters)
        .meta("step", fmt_f64(a.step))
        .meta("grad_tol", fmt_f64(a.grad_tol))
        .meta("seed", a.seed)
        .meta("n_train", DESCENT_TRAIN)
        .meta("n_test", DESCENT_TEST)
        .meta("features", DESCENT_FEATURES)
        .meta("noise", fmt_f64(DESCENT_NOISE))
        .meta("converged", trace.converged);
    for r in &trace.rows {
        csv.push(vec![
            r.iter.to_string(),
            fmt_f64(r.alpha),
            fmt_f64(r.d_alpha),
            fmt_f64(r.test_loss),
            r.note.clone(),
        ]);
    }
    write_file(&a.out, &csv.render())
}

// ---- projection-layer ----

/// Number of hyperplanes in polytope mode.
pub const HYPERPLANES: usize = 3;

pub fn run_projection(a: &ProjectionArgs) -> CliResult<()> {
    if a.batch == 0 || a.size == 0 {
        return Err(CliError::Input("--batch and --size must be at least 1".into()));
    }
    let mut r = synthetic::rng(a.seed);
    let y = synthetic::normal_matrix(&mut r, a.batch, a.size);
    let dl_dx = synthetic::normal_matrix(&mut r, a.batch, a.size);
    let settings = engine_settings(1e-9);

    let (problem, grads, w, b, draws) = match a.mode {
        LayerMode::Relu => {
            let p = demos::relu_problem(&y)?;
            let g = demos::projection_layer(&p, &y, 0, &dl_dx, settings)?
                .ok_or_else(|| CliError::Solve("projection problem infeasible".into()))?;
            (p, g, Vec::new(), Vec::new(), 0)
        }
        LayerMode::Polytope => {
            let mut found = None;
            for draw in 1..=POLYTOPE_DRAWS {
                let w = synthetic::normal_matrix(&mut r, HYPERPLANES, a.size);
                let b: Vec<f64> = (0..HYPERPLANES).map(|_| r.random_range(-1.0..1.0)).collect();
                let p = demos::polytope_problem(&y, &w, &b)?;
                if let Some(g) = demos::projection_layer(&p, &y, HYPERPLANES, &dl_dx, settings)? {
                    found = Some((p, g, w, b, draw));
                    break;
                }
            }
            found.ok_or_else(|| {
                CliError::Solve(format!("no feasible polytope in {POLYTOPE_DRAWS} draws"))
            })?
        }
    };

    if let Some(path) = &a.export_problem {
        write_json(path, &ProblemFile::from_model(&problem.model, &problem.names))?;
    }
    if let Some(path) = &a.export_tangent {
        let seeds = dl_dx.iter().flatten().copied().enumerate().collect();
        write_json(path, &TangentFile { seeds, ..TangentFile::default() })?;
    }

    let mode = format!("{:?}", a.mode).to_lowercase();
    let mut out = json!({
        "settings": {
            "command": "projection-layer",
            "mode": mode,
            "batch": a.batch,
            "size": a.size,
            "seed": a.seed,
            "tol": settings.solver.tol,
        },
        "approximate": grads.approximate,
        "y": y,
        "x": grads.x,
        "dl_dx": dl_dx,
        "dl_dy": grads.dl_dy,
    });
    if a.mode == LayerMode::Polytope {
        out["settings"]["draws"] = json!(draws);
        out["w"] = json!(w);
        out["b"] = json!(b);
        out["dl_dw"] = json!(grads.dl_dw);
        out["dl_db"] = json!(grads.dl_db);
    }
    write_json(&a.out, &out)
}

