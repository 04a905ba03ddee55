//! Function-in-set problem representation and its compilation to the two
//! matrix standard forms.
//!
//! The objective of every model is read as `½ xᵀQx + cᵀx + constant`, where a
//! quadratic term `(i, j, v)` with `i ≤ j` sets `Q[i][j] = Q[j][i] = v`. A
//! diagonal term `(i, i, v)` therefore contributes `½ v xᵢ²` and an
//! off-diagonal term contributes `v xᵢ xⱼ`.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::bridges::{self, AffineBridge};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VariableId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConstraintId(String);

impl ConstraintId {
    pub fn new(id: impl Into<String>) -> Self {
        ConstraintId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ConstraintId {
    fn from(s: &str) -> Self {
        ConstraintId(s.to_owned())
    }
}

impl From<String> for ConstraintId {
    fn from(s: String) -> Self {
        ConstraintId(s)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScalarAffineFunction {
    pub terms: Vec<(VariableId, f64)>,
    pub constant: f64,
}

impl ScalarAffineFunction {
    pub fn new(terms: Vec<(VariableId, f64)>, constant: f64) -> Self {
        ScalarAffineFunction { terms, constant }
    }

    pub fn constant(value: f64) -> Self {
        ScalarAffineFunction {
            terms: Vec::new(),
            constant: value,
        }
    }

    pub fn variable(v: VariableId) -> Self {
        ScalarAffineFunction {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    /// Sorts terms by variable and merges duplicates.
    pub fn canonicalize(&mut self) {
        self.terms.sort_by_key(|t| t.0);
        let mut merged: Vec<(VariableId, f64)> = Vec::with_capacity(self.terms.len());
        for &(v, c) in &self.terms {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => merged.push((v, c)),
            }
        }
        self.terms = merged;
    }

    pub fn coefficient(&self, v: VariableId) -> f64 {
        self.terms.iter().filter(|t| t.0 == v).map(|t| t.1).sum()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * x[v.0]).sum::<f64>()
    }

    pub fn to_dense(&self, n: usize) -> DVector<f64> {
        let mut row = DVector::zeros(n);
        for &(v, c) in &self.terms {
            row[v.0] += c;
        }
        row
    }

    /// Builds a function from a dense coefficient row, keeping every entry.
    pub fn from_dense(coefficients: impl IntoIterator<Item = f64>, constant: f64) -> Self {
        let terms = coefficients
            .into_iter()
            .enumerate()
            .map(|(i, c)| (VariableId(i), c))
            .collect();
        ScalarAffineFunction { terms, constant }
    }

    fn max_var(&self) -> Option<usize> {
        self.terms.iter().map(|t| t.0 .0).max()
    }

    fn is_finite(&self) -> bool {
        self.constant.is_finite() && self.terms.iter().all(|t| t.1.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScalarQuadraticFunction {
    pub quadratic_terms: Vec<(VariableId, VariableId, f64)>,
    pub affine: ScalarAffineFunction,
}

impl ScalarQuadraticFunction {
    pub fn new(
        quadratic_terms: Vec<(VariableId, VariableId, f64)>,
        affine: ScalarAffineFunction,
    ) -> Self {
        ScalarQuadraticFunction {
            quadratic_terms,
            affine,
        }
    }

    pub fn affine(affine: ScalarAffineFunction) -> Self {
        ScalarQuadraticFunction {
            quadratic_terms: Vec::new(),
            affine,
        }
    }

    /// Adds the monomial `coef · xᵢ · xⱼ`, translating it to the halved
    /// diagonal convention.
    pub fn add_product(&mut self, i: VariableId, j: VariableId, coef: f64) {
        let v = if i == j { 2.0 * coef } else { coef };
        self.quadratic_terms.push((i.min(j), i.max(j), v));
    }

    pub fn add_linear(&mut self, v: VariableId, coef: f64) {
        self.affine.terms.push((v, coef));
    }

    pub fn canonicalize(&mut self) {
        for t in &mut self.quadratic_terms {
            if t.0 > t.1 {
                std::mem::swap(&mut t.0, &mut t.1);
            }
        }
        self.quadratic_terms.sort_by_key(|t| (t.0, t.1));
        let mut merged: Vec<(VariableId, VariableId, f64)> = Vec::new();
        for &(i, j, c) in &self.quadratic_terms {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += c,
                _ => merged.push((i, j, c)),
            }
        }
        self.quadratic_terms = merged;
        self.affine.canonicalize();
    }

    /// Entry `Q[i][j]` of the symmetric matrix this function encodes.
    pub fn quadratic_coefficient(&self, i: VariableId, j: VariableId) -> f64 {
        let (a, b) = (i.min(j), i.max(j));
        self.quadratic_terms
            .iter()
            .filter(|t| t.0.min(t.1) == a && t.0.max(t.1) == b)
            .map(|t| t.2)
            .sum()
    }

    pub fn coefficient(&self, v: VariableId) -> f64 {
        self.affine.coefficient(v)
    }

    pub fn constant(&self) -> f64 {
        self.affine.constant
    }

    pub fn has_quadratic(&self) -> bool {
        self.quadratic_terms.iter().any(|t| t.2 != 0.0)
    }

    pub fn q_matrix(&self, n: usize) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(n, n);
        for &(i, j, v) in &self.quadratic_terms {
            q[(i.0, j.0)] += v;
            if i != j {
                q[(j.0, i.0)] += v;
            }
        }
        q
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let quad: f64 = self
            .quadratic_terms
            .iter()
            .map(|&(i, j, v)| {
                if i == j {
                    0.5 * v * x[i.0] * x[i.0]
                } else {
                    v * x[i.0] * x[j.0]
                }
            })
            .sum();
        quad + self.affine.eval(x)
    }

    fn max_var(&self) -> Option<usize> {
        self.quadratic_terms
            .iter()
            .map(|t| t.0 .0.max(t.1 .0))
            .chain(self.affine.max_var())
            .max()
    }

    fn is_finite(&self) -> bool {
        self.affine.is_finite() && self.quadratic_terms.iter().all(|t| t.2.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VectorAffineFunction {
    pub rows: Vec<ScalarAffineFunction>,
}

impl VectorAffineFunction {
    pub fn new(rows: Vec<ScalarAffineFunction>) -> Self {
        VectorAffineFunction { rows }
    }

    /// `(x_{v₀}, x_{v₁}, …)` as a vector function.
    pub fn variables(vars: &[VariableId]) -> Self {
        VectorAffineFunction {
            rows: vars.iter().map(|&v| ScalarAffineFunction::variable(v)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintFunction {
    Scalar(ScalarAffineFunction),
    Vector(VectorAffineFunction),
}

impl ConstraintFunction {
    pub fn dim(&self) -> usize {
        match self {
            ConstraintFunction::Scalar(_) => 1,
            ConstraintFunction::Vector(f) => f.rows.len(),
        }
    }

    pub fn rows(&self) -> &[ScalarAffineFunction] {
        match self {
            ConstraintFunction::Scalar(f) => std::slice::from_ref(f),
            ConstraintFunction::Vector(f) => &f.rows,
        }
    }

    /// Dense `(C, k)` with `f(x) = C x + k`.
    pub fn to_dense(&self, n: usize) -> (DMatrix<f64>, DVector<f64>) {
        let rows = self.rows();
        let mut c = DMatrix::zeros(rows.len(), n);
        let mut k = DVector::zeros(rows.len());
        for (r, f) in rows.iter().enumerate() {
            for &(v, coef) in &f.terms {
                c[(r, v.0)] += coef;
            }
            k[r] = f.constant;
        }
        (c, k)
    }

    /// Inverse of [`to_dense`](Self::to_dense); `scalar` selects the variant.
    pub fn from_dense(c: &DMatrix<f64>, k: &DVector<f64>, scalar: bool) -> Self {
        let rows: Vec<ScalarAffineFunction> = (0..c.nrows())
            .map(|r| ScalarAffineFunction::from_dense(c.row(r).iter().copied(), k[r]))
            .collect();
        if scalar && rows.len() == 1 {
            ConstraintFunction::Scalar(rows.into_iter().next().unwrap())
        } else {
            ConstraintFunction::Vector(VectorAffineFunction { rows })
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.rows().iter().map(|f| f.eval(x)).collect()
    }

    fn canonicalize(&mut self) {
        match self {
            ConstraintFunction::Scalar(f) => f.canonicalize(),
            ConstraintFunction::Vector(f) => f.rows.iter_mut().for_each(|r| r.canonicalize()),
        }
    }
}

impl From<ScalarAffineFunction> for ConstraintFunction {
    fn from(f: ScalarAffineFunction) -> Self {
        ConstraintFunction::Scalar(f)
    }
}

impl From<VectorAffineFunction> for ConstraintFunction {
    fn from(f: VectorAffineFunction) -> Self {
        ConstraintFunction::Vector(f)
    }
}

/// Constraint sets. `PsdTriangle(side)` uses the scaled upper-triangle
/// vectorization: column-major `(X₁₁, √2 X₁₂, X₂₂, √2 X₁₃, …)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConeSet {
    Zero(usize),
    Nonnegative(usize),
    Nonpositive(usize),
    SecondOrder(usize),
    PsdTriangle(usize),
    EqualTo(f64),
    LessThan(f64),
    GreaterThan(f64),
}

impl ConeSet {
    pub fn dim(&self) -> usize {
        match *self {
            ConeSet::Zero(d)
            | ConeSet::Nonnegative(d)
            | ConeSet::Nonpositive(d)
            | ConeSet::SecondOrder(d) => d,
            ConeSet::PsdTriangle(s) => s * (s + 1) / 2,
            ConeSet::EqualTo(_) | ConeSet::LessThan(_) | ConeSet::GreaterThan(_) => 1,
        }
    }

    pub fn is_scalar(&self) -> bool {
        matches!(
            self,
            ConeSet::EqualTo(_) | ConeSet::LessThan(_) | ConeSet::GreaterThan(_)
        )
    }

    /// Second-order and semidefinite sets need the conic path.
    pub fn is_nonpolyhedral(&self) -> bool {
        matches!(self, ConeSet::SecondOrder(_) | ConeSet::PsdTriangle(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            ConeSet::Zero(_) => "Zero",
            ConeSet::Nonnegative(_) => "Nonnegative",
            ConeSet::Nonpositive(_) => "Nonpositive",
            ConeSet::SecondOrder(_) => "SecondOrder",
            ConeSet::PsdTriangle(_) => "PsdTriangle",
            ConeSet::EqualTo(_) => "EqualTo",
            ConeSet::LessThan(_) => "LessThan",
            ConeSet::GreaterThan(_) => "GreaterThan",
        }
    }

    /// Solver-friendly ordering of compiled cone blocks.
    fn order_key(&self) -> u8 {
        match self {
            ConeSet::Zero(_) => 0,
            ConeSet::Nonnegative(_) => 1,
            ConeSet::SecondOrder(_) => 2,
            ConeSet::PsdTriangle(_) => 3,
            _ => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sense {
    #[default]
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub id: ConstraintId,
    pub function: ConstraintFunction,
    pub set: ConeSet,
}

/// Validated, canonicalized problem. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemModel {
    n_vars: usize,
    objective: ScalarQuadraticFunction,
    constraints: Vec<Constraint>,
}

impl ProblemModel {
    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn objective(&self) -> &ScalarQuadraticFunction {
        &self.objective
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn constraint(&self, id: &ConstraintId) -> Option<&Constraint> {
        self.constraints.iter().find(|c| &c.id == id)
    }

    pub fn variables(&self) -> impl Iterator<Item = VariableId> {
        (0..self.n_vars).map(VariableId)
    }
}

/// Declarative description of a problem, checked and canonicalized by
/// [`build`](ProblemBuilder::build).
#[derive(Debug, Clone, Default)]
pub struct ProblemBuilder {
    n_vars: usize,
    sense: Sense,
    objective: ScalarQuadraticFunction,
    constraints: Vec<Constraint>,
}

impl ProblemBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_variables(n_vars: usize) -> Self {
        ProblemBuilder {
            n_vars,
            ..Self::default()
        }
    }

    pub fn add_variable(&mut self) -> VariableId {
        self.n_vars += 1;
        VariableId(self.n_vars - 1)
    }

    pub fn add_variables(&mut self, count: usize) -> Vec<VariableId> {
        (0..count).map(|_| self.add_variable()).collect()
    }

    pub fn set_objective(&mut self, sense: Sense, objective: ScalarQuadraticFunction) -> &mut Self {
        self.sense = sense;
        self.objective = objective;
        self
    }

    pub fn minimize(&mut self, objective: ScalarQuadraticFunction) -> &mut Self {
        self.set_objective(Sense::Minimize, objective)
    }

    pub fn add_constraint(
        &mut self,
        id: impl Into<ConstraintId>,
        function: impl Into<ConstraintFunction>,
        set: ConeSet,
    ) -> &mut Self {
        self.constraints.push(Constraint {
            id: id.into(),
            function: function.into(),
            set,
        });
        self
    }

    pub fn build(&self) -> Result<ProblemModel> {
        if self.sense == Sense::Maximize {
            return Err(Error::Maximization);
        }
        let n = self.n_vars;
        let check_vars = |max: Option<usize>| match max {
            Some(i) if i >= n => Err(Error::VariableOutOfRange {
                index: i,
                n_vars: n,
            }),
            _ => Ok(()),
        };
        check_vars(self.objective.max_var())?;
        if !self.objective.is_finite() {
            return Err(Error::NonFinite("objective"));
        }
        let mut objective = self.objective.clone();
        objective.canonicalize();

        let mut seen = HashSet::new();
        let mut constraints = Vec::with_capacity(self.constraints.len());
        for con in &self.constraints {
            if !seen.insert(con.id.clone()) {
                return Err(Error::DuplicateConstraintId(con.id.clone()));
            }
            validate_set(&con.set)?;
            if con.function.dim() != con.set.dim() {
                return Err(Error::DimensionMismatch {
                    expected: con.set.dim(),
                    got: con.function.dim(),
                    context: "constraint function vs set dimension",
                });
            }
            for row in con.function.rows() {
                check_vars(row.max_var())?;
                if !row.is_finite() {
                    return Err(Error::NonFinite("constraint function"));
                }
            }
            let mut con = con.clone();
            con.function.canonicalize();
            constraints.push(con);
        }
        Ok(ProblemModel {
            n_vars: n,
            objective,
            constraints,
        })
    }
}

fn validate_set(set: &ConeSet) -> Result<()> {
    match *set {
        ConeSet::Zero(0)
        | ConeSet::Nonnegative(0)
        | ConeSet::Nonpositive(0)
        | ConeSet::SecondOrder(0)
        | ConeSet::PsdTriangle(0) => Err(Error::UnsupportedSet(format!(
            "{} of dimension 0",
            set.name()
        ))),
        ConeSet::EqualTo(v) | ConeSet::LessThan(v) | ConeSet::GreaterThan(v) if !v.is_finite() => {
            Err(Error::NonFinite("set constant"))
        }
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemClass {
    Qp,
    Conic,
}

/// Picks the problem class from the objective and the constraint sets.
///
/// Purely polyhedral models (including LPs) are QPs; an affine objective with
/// second-order or semidefinite sets is conic.
pub fn classify_problem(model: &ProblemModel) -> Result<ProblemClass> {
    let conic = model.constraints.iter().any(|c| c.set.is_nonpolyhedral());
    match (model.objective.has_quadratic(), conic) {
        (true, true) => Err(Error::UnsupportedClass(
            "quadratic objective combined with second-order or semidefinite constraints",
        )),
        (_, true) => Ok(ProblemClass::Conic),
        (_, false) => Ok(ProblemClass::Qp),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// Rows of `A x = b` in the QP form.
    Equality,
    /// Rows of `G x ≤ h` in the QP form.
    Inequality,
    /// Rows of `A x + s = b, s ∈ K` in the conic form.
    Conic,
}

/// Where one user constraint landed in a compiled form, and how it got there.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMapEntry {
    pub id: ConstraintId,
    pub block: Block,
    pub rows: Range<usize>,
    pub bridge: Option<AffineBridge>,
    /// The user's function was scalar.
    pub scalar: bool,
}

/// `min ½xᵀQx + cᵀx  s.t.  Gx ≤ h : (λ),  Ax = b : (μ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpForm {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub row_map: Vec<RowMapEntry>,
    pub col_map: Vec<usize>,
}

impl QpForm {
    /// Form without any constraint bookkeeping, for direct matrix use.
    pub fn from_matrices(
        q: DMatrix<f64>,
        c: DVector<f64>,
        g: DMatrix<f64>,
        h: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
    ) -> Self {
        let n = c.len();
        QpForm {
            q,
            c,
            g,
            h,
            a,
            b,
            row_map: Vec::new(),
            col_map: (0..n).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn p(&self) -> usize {
        self.h.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn entry(&self, id: &ConstraintId) -> Option<&RowMapEntry> {
        self.row_map.iter().find(|e| &e.id == id)
    }

    /// Constraint owning a given row of a block.
    pub fn owner_of(&self, block: Block, row: usize) -> Option<&ConstraintId> {
        find_owner(&self.row_map, block, row)
    }

    pub fn objective_value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }
}

/// `min cᵀx  s.t.  Ax + s = b,  s ∈ K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicForm {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub cones: Vec<ConeSet>,
    pub row_map: Vec<RowMapEntry>,
    pub col_map: Vec<usize>,
}

impl ConicForm {
    pub fn from_matrices(
        a: DMatrix<f64>,
        b: DVector<f64>,
        c: DVector<f64>,
        cones: Vec<ConeSet>,
    ) -> Self {
        let n = c.len();
        ConicForm {
            a,
            b,
            c,
            cones,
            row_map: Vec::new(),
            col_map: (0..n).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn entry(&self, id: &ConstraintId) -> Option<&RowMapEntry> {
        self.row_map.iter().find(|e| &e.id == id)
    }

    pub fn owner_of(&self, row: usize) -> Option<&ConstraintId> {
        find_owner(&self.row_map, Block::Conic, row)
    }
}

fn find_owner(map: &[RowMapEntry], block: Block, row: usize) -> Option<&ConstraintId> {
    map.iter()
        .find(|e| e.block == block && e.rows.contains(&row))
        .map(|e| &e.id)
}

fn stack(rows: &[DMatrix<f64>], n: usize) -> DMatrix<f64> {
    let total: usize = rows.iter().map(|r| r.nrows()).sum();
    let mut out = DMatrix::zeros(total, n);
    let mut at = 0;
    for r in rows {
        out.rows_mut(at, r.nrows()).copy_from(r);
        at += r.nrows();
    }
    out
}

fn stack_vec(parts: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(
        parts.iter().map(|p| p.len()).sum(),
        parts.iter().flat_map(|p| p.iter().copied()),
    )
}

/// Compiles a QP-class model. Scalar and nonpositive sets are lowered through
/// [`bridges`] first, so each constraint becomes `g(x) = C x + k` in `Zero`
/// (→ `C x = −k`) or `Nonnegative` (→ `−C x ≤ k`).
pub fn compile_qp_form(model: &ProblemModel) -> Result<QpForm> {
    if classify_problem(model)? != ProblemClass::Qp {
        return Err(Error::UnsupportedClass(
            "QP form cannot hold second-order or semidefinite constraints",
        ));
    }
    let n = model.n_vars;
    let (mut g_rows, mut h_parts, mut a_rows, mut b_parts) = (vec![], vec![], vec![], vec![]);
    let (mut p, mut m) = (0, 0);
    let mut row_map = Vec::with_capacity(model.constraints.len());
    for con in &model.constraints {
        let lowered = bridges::lower_constraint(con, n)?;
        let d = lowered.coefficients.nrows();
        let (block, rows) = match lowered.set {
            ConeSet::Zero(_) => {
                a_rows.push(lowered.coefficients.clone());
                b_parts.push(-&lowered.constants);
                m += d;
                (Block::Equality, m - d..m)
            }
            ConeSet::Nonnegative(_) => {
                g_rows.push(-&lowered.coefficients);
                h_parts.push(lowered.constants.clone());
                p += d;
                (Block::Inequality, p - d..p)
            }
            other => return Err(Error::UnsupportedSet(other.name().to_owned())),
        };
        row_map.push(RowMapEntry {
            id: con.id.clone(),
            block,
            rows,
            bridge: lowered.bridge,
            scalar: matches!(con.function, ConstraintFunction::Scalar(_)),
        });
    }
    Ok(QpForm {
        q: model.objective.q_matrix(n),
        c: model.objective.affine.to_dense(n),
        g: stack(&g_rows, n),
        h: stack_vec(&h_parts),
        a: stack(&a_rows, n),
        b: stack_vec(&b_parts),
        row_map,
        col_map: (0..n).collect(),
    })
}

/// Compiles to `Ax + s = b, s ∈ K` with `A = −C`, `b = k` for each lowered
/// constraint `C x + k ∈ K`. Blocks are ordered Zero, Nonnegative,
/// SecondOrder, PsdTriangle; the order within a kind follows the model.
pub fn compile_conic_form(model: &ProblemModel) -> Result<ConicForm> {
    if model.objective.has_quadratic() {
        return Err(Error::UnsupportedClass(
            "conic form requires an affine objective",
        ));
    }
    let n = model.n_vars;
    let mut lowered = Vec::with_capacity(model.constraints.len());
    for con in &model.constraints {
        lowered.push((con, bridges::lower_constraint(con, n)?));
    }
    lowered.sort_by_key(|(_, l)| l.set.order_key());

    let (mut a_rows, mut b_parts, mut cones, mut row_map) = (vec![], vec![], vec![], vec![]);
    let mut at = 0;
    for (con, l) in lowered {
        let d = l.coefficients.nrows();
        a_rows.push(-&l.coefficients);
        b_parts.push(l.constants.clone());
        cones.push(l.set);
        row_map.push(RowMapEntry {
            id: con.id.clone(),
            block: Block::Conic,
            rows: at..at + d,
            bridge: l.bridge,
            scalar: matches!(con.function, ConstraintFunction::Scalar(_)),
        });
        at += d;
    }
    Ok(ConicForm {
        a: stack(&a_rows, n),
        b: stack_vec(&b_parts),
        c: model.objective.affine.to_dense(n),
        cones,
        row_map,
        col_map: (0..n).collect(),
    })
}
