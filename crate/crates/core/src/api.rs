//! Differentiation engine: caches a user model, lowers it through bridges,
//! solves it with the inner solver matching its class, and exposes the
//! forward/reverse tangent attributes on the user model.
//!
//! Tangents and gradients of constraint functions carry their constant term
//! with right-hand-side sign: a constant `δ` stands for the perturbation
//! `f(x) − δ ∈ S`, so raising the bound of `x ≥ 3` by one unit is the
//! constant `1`. Coefficients have their plain meaning.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::bridges::{self, AffineTangent};
use crate::conic_diff::{ConicDerivative, ConicSolution, ConicTangentIn};
use crate::error::{Error, Result};
use crate::model::{
    classify_problem, compile_conic_form, compile_qp_form, Block, ConicForm, ConstraintFunction,
    ConstraintId, ProblemClass, ProblemModel, QpForm, RowMapEntry, ScalarAffineFunction, ScalarQuadraticFunction,
    VariableId,
};
use crate::qp_diff::{QpDerivative, QpSolution, QpTangentIn};
use crate::solvers::{solve_conic, solve_qp, SolveInfo, SolveStatus, SolverSettings};

/// Inner solver selection. `Auto` follows [`classify_problem`]; the other
/// two force a path (an LP can go either way).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverChoice {
    #[default]
    Auto,
    Ipm,
    Admm,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EngineSettings {
    pub solver: SolverSettings,
    pub choice: SolverChoice,
}

#[derive(Debug, Clone)]
enum Solved {
    Qp { form: QpForm, sol: QpSolution },
    Conic { form: ConicForm, sol: ConicSolution },
}

impl Solved {
    fn x(&self) -> &DVector<f64> {
        match self {
            Solved::Qp { sol, .. } => &sol.x,
            Solved::Conic { sol, .. } => &sol.x,
        }
    }

    fn row_map(&self) -> &[RowMapEntry] {
        match self {
            Solved::Qp { form, .. } => &form.row_map,
            Solved::Conic { form, .. } => &form.row_map,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Inputs {
    objective: Option<ScalarQuadraticFunction>,
    constraints: BTreeMap<ConstraintId, ConstraintFunction>,
    seeds: BTreeMap<VariableId, f64>,
}

#[derive(Debug, Clone, Default)]
struct Outputs {
    variables: Option<Vec<f64>>,
    objective: Option<ScalarQuadraticFunction>,
    constraints: Option<BTreeMap<ConstraintId, ConstraintFunction>>,
}

#[derive(Debug, Clone)]
pub struct DiffEngine {
    model: ProblemModel,
    settings: EngineSettings,
    class: Option<ProblemClass>,
    solved: Option<Solved>,
    info: Option<SolveInfo>,
    inputs: Inputs,
    outputs: Outputs,
    approximate: bool,
}

impl DiffEngine {
    pub fn new(model: ProblemModel) -> Self {
        Self::with_settings(model, EngineSettings::default())
    }

    pub fn with_settings(model: ProblemModel, settings: EngineSettings) -> Self {
        DiffEngine {
            model,
            settings,
            class: None,
            solved: None,
            info: None,
            inputs: Inputs::default(),
            outputs: Outputs::default(),
            approximate: false,
        }
    }

    pub fn model(&self) -> &ProblemModel {
        &self.model
    }

    /// Replaces the model, dropping the solution and all tangents.
    pub fn set_model(&mut self, model: ProblemModel) {
        *self = Self::with_settings(model, self.settings);
    }

    pub fn settings(&self) -> &EngineSettings {
        &self.settings
    }

    /// Class of the path used by the last [`optimize`](Self::optimize).
    pub fn problem_class(&self) -> Option<ProblemClass> {
        self.class
    }

    pub fn solve_info(&self) -> Option<&SolveInfo> {
        self.info.as_ref()
    }

    pub fn status(&self) -> Option<SolveStatus> {
        self.info.map(|i| i.status)
    }

    /// Set when the last differentiation hit a rank-deficient system.
    pub fn is_approximate(&self) -> bool {
        self.approximate
    }

    pub fn optimize(&mut self) -> Result<SolveStatus> {
        self.solved = None;
        self.info = None;
        self.class = None;
        self.outputs = Outputs::default();
        self.approximate = false;

        let natural = classify_problem(&self.model)?;
        let class = match self.settings.choice {
            SolverChoice::Auto => natural,
            SolverChoice::Ipm => ProblemClass::Qp,
            SolverChoice::Admm => ProblemClass::Conic,
        };
        let (solved, info) = match class {
            ProblemClass::Qp => {
                let form = compile_qp_form(&self.model)?;
                let (sol, info) = solve_qp(&form, &self.settings.solver)?;
                (Solved::Qp { form, sol }, info)
            }
            ProblemClass::Conic => {
                let form = compile_conic_form(&self.model)?;
                let (sol, info) = solve_conic(&form, &self.settings.solver)?;
                (Solved::Conic { form, sol }, info)
            }
        };
        self.class = Some(class);
        self.info = Some(info);
        self.solved = Some(solved);
        Ok(info.status)
    }

    fn solution(&self) -> Result<&Solved> {
        match (&self.solved, self.info) {
            (Some(s), Some(info)) if info.is_optimal() => Ok(s),
            _ => Err(Error::NotSolved),
        }
    }

    pub fn primal(&self, v: VariableId) -> Result<f64> {
        let x = self.solution()?.x();
        x.get(v.0).copied().ok_or(Error::UnknownVariable(v.0))
    }

    pub fn primal_vector(&self) -> Result<Vec<f64>> {
        Ok(self.solution()?.x().iter().copied().collect())
    }

    pub fn objective_value(&self) -> Result<f64> {
        let x = self.solution()?.x();
        Ok(self.model.objective().eval(x.as_slice()))
    }

    /// Value of the constraint function at the solution.
    pub fn constraint_primal(&self, id: &ConstraintId) -> Result<Vec<f64>> {
        let x = self.solution()?.x();
        let con = self
            .model
            .constraint(id)
            .ok_or_else(|| Error::UnknownConstraint(id.clone()))?;
        Ok(con.function.eval(x.as_slice()))
    }

    /// Dual of a user constraint, with stationarity
    /// `∇f₀(x) = Σ Cᵢᵀ yᵢ` over constraints `Cᵢx + kᵢ ∈ Sᵢ`.
    pub fn constraint_dual(&self, id: &ConstraintId) -> Result<Vec<f64>> {
        let solved = self.solution()?;
        let entry = find_entry(solved.row_map(), id)?;
        let rows = entry.rows.clone();
        let target = match solved {
            Solved::Qp { sol, .. } => match entry.block {
                Block::Equality => -sol.mu.rows(rows.start, rows.len()),
                _ => sol.lambda.rows(rows.start, rows.len()).clone_owned(),
            },
            Solved::Conic { sol, .. } => sol.y.rows(rows.start, rows.len()).clone_owned(),
        };
        let dual = match &entry.bridge {
            None => target,
            Some(bridge) => {
                let con = self.model.constraint(id).ok_or_else(|| Error::UnknownConstraint(id.clone()))?;
                let (c, k) = con.function.to_dense(self.model.n_vars());
                let lowered_value = &bridge.map * (c * solved.x() + k) + &bridge.shift;
                bridges::unbridge_solution(bridge, &lowered_value, &target)?.1
            }
        };
        Ok(dual.iter().copied().collect())
    }

    // ---- inputs ----

    pub fn set_forward_objective(&mut self, f: ScalarQuadraticFunction) -> Result<()> {
        check_quadratic_vars(&f, self.model.n_vars())?;
        self.inputs.objective = Some(f);
        Ok(())
    }

    pub fn forward_objective(&self) -> Option<&ScalarQuadraticFunction> {
        self.inputs.objective.as_ref()
    }

    pub fn set_forward_constraint(&mut self, id: impl Into<ConstraintId>, f: impl Into<ConstraintFunction>) -> Result<()> {
        let id = id.into();
        let f = f.into();
        let con = self
            .model
            .constraint(&id)
            .ok_or_else(|| Error::UnknownConstraint(id.clone()))?;
        if f.dim() != con.function.dim() {
            return Err(Error::DimensionMismatch {
                expected: con.function.dim(),
                got: f.dim(),
                context: "constraint tangent rows",
            });
        }
        for row in f.rows() {
            check_affine_vars(row, self.model.n_vars())?;
        }
        self.inputs.constraints.insert(id, f);
        Ok(())
    }

    pub fn forward_constraint(&self, id: &ConstraintId) -> Option<&ConstraintFunction> {
        self.inputs.constraints.get(id)
    }

    pub fn set_reverse_variable(&mut self, v: VariableId, seed: f64) -> Result<()> {
        if v.0 >= self.model.n_vars() {
            return Err(Error::UnknownVariable(v.0));
        }
        self.inputs.seeds.insert(v, seed);
        Ok(())
    }

    pub fn reverse_variable(&self, v: VariableId) -> Option<f64> {
        self.inputs.seeds.get(&v).copied()
    }

    /// Clears inputs and outputs; the solution is kept.
    pub fn reset_tangents(&mut self) {
        self.inputs = Inputs::default();
        self.outputs = Outputs::default();
        self.approximate = false;
    }

    // ---- differentiation ----

    pub fn forward_differentiate(&mut self) -> Result<()> {
        let n = self.model.n_vars();
        let solved = self.solution()?;
        let (dq, dc) = match &self.inputs.objective {
            Some(f) => (f.q_matrix(n), f.affine.to_dense(n)),
            None => (DMatrix::zeros(n, n), DVector::zeros(n)),
        };
        let (dx, approximate) = match solved {
            Solved::Qp { form, sol } => {
                let mut t = QpTangentIn::zeros(form);
                t.dq = dq;
                t.dc = dc;
                for (id, f) in &self.inputs.constraints {
                    let entry = find_entry(&form.row_map, id)?;
                    let lowered = lower_tangent(entry, f, n)?;
                    let r = entry.rows.clone();
                    match entry.block {
                        Block::Equality => {
                            t.da.rows_mut(r.start, r.len()).copy_from(&lowered.coefficients);
                            t.db.rows_mut(r.start, r.len()).copy_from(&(-&lowered.constants));
                        }
                        _ => {
                            t.dg.rows_mut(r.start, r.len()).copy_from(&(-&lowered.coefficients));
                            t.dh.rows_mut(r.start, r.len()).copy_from(&lowered.constants);
                        }
                    }
                }
                let out = QpDerivative::new(form, sol)?.forward(&t)?;
                (out.dx, out.approximate)
            }
            Solved::Conic { form, sol } => {
                if dq.iter().any(|v| *v != 0.0) {
                    return Err(Error::UnsupportedClass(
                        "quadratic objective tangent on a conic problem",
                    ));
                }
                let mut t = ConicTangentIn::zeros(form);
                t.dc = dc;
                for (id, f) in &self.inputs.constraints {
                    let entry = find_entry(&form.row_map, id)?;
                    let lowered = lower_tangent(entry, f, n)?;
                    let r = entry.rows.clone();
                    t.da.rows_mut(r.start, r.len()).copy_from(&(-&lowered.coefficients));
                    t.db.rows_mut(r.start, r.len()).copy_from(&lowered.constants);
                }
                let out = ConicDerivative::new(form, sol)?.forward(&t)?;
                (out.dx, out.approximate)
            }
        };
        self.approximate = approximate;
        self.outputs.variables = Some(dx.iter().copied().collect());
        Ok(())
    }

    pub fn reverse_differentiate(&mut self) -> Result<()> {
        let n = self.model.n_vars();
        let solved = self.solution()?;
        let mut dl_dx = DVector::zeros(n);
        for (v, s) in &self.inputs.seeds {
            dl_dx[v.0] = *s;
        }
        // gradients with respect to the lowered rows C x + k, per constraint
        let mut lowered: Vec<(&RowMapEntry, AffineTangent)> = Vec::new();
        let (gq, gc, approximate) = match solved {
            Solved::Qp { form, sol } => {
                let g = QpDerivative::new(form, sol)?.reverse(&dl_dx)?;
                for entry in &form.row_map {
                    let r = entry.rows.clone();
                    let tangent = match entry.block {
                        Block::Equality => AffineTangent {
                            coefficients: g.ga.rows(r.start, r.len()).clone_owned(),
                            constants: -g.gb.rows(r.start, r.len()),
                        },
                        _ => AffineTangent {
                            coefficients: -g.gg.rows(r.start, r.len()),
                            constants: g.gh.rows(r.start, r.len()).clone_owned(),
                        },
                    };
                    lowered.push((entry, tangent));
                }
                (g.gq, g.gc, g.approximate)
            }
            Solved::Conic { form, sol } => {
                let m = form.m();
                let g = ConicDerivative::new(form, sol)?.reverse(&dl_dx, &DVector::zeros(m), &DVector::zeros(m))?;
                for entry in &form.row_map {
                    let r = entry.rows.clone();
                    let tangent = AffineTangent {
                        coefficients: -g.ga.rows(r.start, r.len()),
                        constants: g.gb.rows(r.start, r.len()).clone_owned(),
                    };
                    lowered.push((entry, tangent));
                }
                (DMatrix::zeros(n, n), g.gc, g.approximate)
            }
        };

        let mut constraints = BTreeMap::new();
        for (entry, tangent) in lowered {
            let user = match &entry.bridge {
                Some(bridge) => bridges::map_reverse_tangent(bridge, &tangent)?,
                None => tangent,
            };
            let f = ConstraintFunction::from_dense(&user.coefficients, &(-user.constants), entry.scalar);
            constraints.insert(entry.id.clone(), f);
        }

        let mut objective = ScalarQuadraticFunction::affine(ScalarAffineFunction::from_dense(gc.iter().copied(), 0.0));
        for j in 0..n {
            for i in 0..=j {
                let v = if i == j { gq[(i, i)] } else { gq[(i, j)] + gq[(j, i)] };
                if v != 0.0 {
                    objective.quadratic_terms.push((VariableId(i), VariableId(j), v));
                }
            }
        }
        objective.quadratic_terms.sort_by_key(|t| (t.0, t.1));

        self.approximate = approximate;
        self.outputs.objective = Some(objective);
        self.outputs.constraints = Some(constraints);
        Ok(())
    }

    // ---- outputs ----

    pub fn forward_variable_primal(&self, v: VariableId) -> Result<f64> {
        let out = self
            .outputs
            .variables
            .as_ref()
            .ok_or(Error::NotComputed("forward variable tangent"))?;
        out.get(v.0).copied().ok_or(Error::UnknownVariable(v.0))
    }

    pub fn forward_variable_primals(&self) -> Result<&[f64]> {
        self.outputs
            .variables
            .as_deref()
            .ok_or(Error::NotComputed("forward variable tangent"))
    }

    pub fn reverse_objective(&self) -> Result<&ScalarQuadraticFunction> {
        self.outputs
            .objective
            .as_ref()
            .ok_or(Error::NotComputed("reverse objective gradient"))
    }

    pub fn reverse_constraint(&self, id: &ConstraintId) -> Result<&ConstraintFunction> {
        let all = self
            .outputs
            .constraints
            .as_ref()
            .ok_or(Error::NotComputed("reverse constraint gradient"))?;
        all.get(id).ok_or_else(|| Error::UnknownConstraint(id.clone()))
    }
}

fn find_entry<'a>(map: &'a [RowMapEntry], id: &ConstraintId) -> Result<&'a RowMapEntry> {
    map.iter()
        .find(|e| &e.id == id)
        .ok_or_else(|| Error::UnknownConstraint(id.clone()))
}

/// User tangent (right-hand-side constant) to the lowered-row tangent.
fn lower_tangent(entry: &RowMapEntry, f: &ConstraintFunction, n: usize) -> Result<AffineTangent> {
    let (c, k) = f.to_dense(n);
    let tangent = AffineTangent {
        coefficients: c,
        constants: -k,
    };
    match &entry.bridge {
        Some(bridge) => bridges::map_forward_tangent(bridge, &tangent),
        None => Ok(tangent),
    }
}

fn check_affine_vars(f: &ScalarAffineFunction, n: usize) -> Result<()> {
    for (v, c) in &f.terms {
        if v.0 >= n {
            return Err(Error::VariableOutOfRange { index: v.0, n_vars: n });
        }
        if !c.is_finite() {
            return Err(Error::NonFinite("tangent coefficient"));
        }
    }
    if !f.constant.is_finite() {
        return Err(Error::NonFinite("tangent constant"));
    }
    Ok(())
}

fn check_quadratic_vars(f: &ScalarQuadraticFunction, n: usize) -> Result<()> {
    for (i, j, c) in &f.quadratic_terms {
        let k = i.0.max(j.0);
        if k >= n {
            return Err(Error::VariableOutOfRange { index: k, n_vars: n });
        }
        if !c.is_finite() {
            return Err(Error::NonFinite("tangent coefficient"));
        }
    }
    check_affine_vars(&f.affine, n)
}
