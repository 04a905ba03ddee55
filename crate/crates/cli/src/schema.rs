//! JSON documents: problem files, tangent files and differentiation
//! results, with their conversions to and from the engine types.
//!
//! Variables are referenced by their 0-based index in `variables`. The
//! objective is `½xᵀQx + cᵀx + constant` with `Q` assembled symmetric from
//! upper-triangular triplets `[i, j, v]` (`i ≤ j` sets `Q[i][j] = Q[j][i] = v`).
//! Constraint rows are triplets `[row, var, coeff]` plus one constant per row.

use std::collections::{BTreeMap, HashSet};

use optdiff::{
    ConeSet, ConstraintFunction, DiffEngine, ProblemBuilder, ProblemModel, ScalarAffineFunction,
    ScalarQuadraticFunction, VariableId, VectorAffineFunction,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    #[serde(default)]
    pub quadratic: Vec<(usize, usize, f64)>,
    #[serde(default)]
    pub linear: Vec<(usize, f64)>,
    #[serde(default)]
    pub constant: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum SetSpec {
    Zero { dim: usize },
    Nonnegative { dim: usize },
    Nonpositive { dim: usize },
    SecondOrder { dim: usize },
    PsdTriangle { side: usize },
    EqualTo { value: f64 },
    LessThan { value: f64 },
    GreaterThan { value: f64 },
}

impl SetSpec {
    pub fn to_set(self) -> ConeSet {
        match self {
            SetSpec::Zero { dim } => ConeSet::Zero(dim),
            SetSpec::Nonnegative { dim } => ConeSet::Nonnegative(dim),
            SetSpec::Nonpositive { dim } => ConeSet::Nonpositive(dim),
            SetSpec::SecondOrder { dim } => ConeSet::SecondOrder(dim),
            SetSpec::PsdTriangle { side } => ConeSet::PsdTriangle(side),
            SetSpec::EqualTo { value } => ConeSet::EqualTo(value),
            SetSpec::LessThan { value } => ConeSet::LessThan(value),
            SetSpec::GreaterThan { value } => ConeSet::GreaterThan(value),
        }
    }

    pub fn from_set(set: &ConeSet) -> Self {
        match *set {
            ConeSet::Zero(dim) => SetSpec::Zero { dim },
            ConeSet::Nonnegative(dim) => SetSpec::Nonnegative { dim },
            ConeSet::Nonpositive(dim) => SetSpec::Nonpositive { dim },
            ConeSet::SecondOrder(dim) => SetSpec::SecondOrder { dim },
            ConeSet::PsdTriangle(side) => SetSpec::PsdTriangle { side },
            ConeSet::EqualTo(value) => SetSpec::EqualTo { value },
            ConeSet::LessThan(value) => SetSpec::LessThan { value },
            ConeSet::GreaterThan(value) => SetSpec::GreaterThan { value },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub id: String,
    #[serde(default)]
    pub rows: Vec<(usize, usize, f64)>,
    #[serde(default)]
    pub constants: Vec<f64>,
    pub set: SetSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub variables: Vec<String>,
    #[serde(default)]
    pub objective: FunctionSpec,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
}

/// Constraint tangent: same row layout as a constraint, without the set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintTangentSpec {
    pub id: String,
    #[serde(default)]
    pub rows: Vec<(usize, usize, f64)>,
    #[serde(default)]
    pub constants: Vec<f64>,
}

/// Forward inputs (`objective`, `constraints`) or reverse seeds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TangentFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<FunctionSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<ConstraintTangentSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<(usize, f64)>,
}

fn parse_json<'a, T: Deserialize<'a>>(text: &'a str, what: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| CliError::Input(format!("malformed {what}: {e}")))
}

fn check_var(v: usize, n: usize, context: &str) -> CliResult<VariableId> {
    if v >= n {
        return Err(CliError::Input(format!(
            "{context}: variable index {v} out of range ({n} variables)"
        )));
    }
    Ok(VariableId(v))
}

impl FunctionSpec {
    pub fn to_function(&self, n: usize, context: &str) -> CliResult<ScalarQuadraticFunction> {
        let mut f = ScalarQuadraticFunction::affine(ScalarAffineFunction::constant(self.constant));
        for &(i, j, v) in &self.quadratic {
            if i > j {
                return Err(CliError::Input(format!(
                    "{context}: quadratic triplet [{i}, {j}] is below the diagonal"
                )));
            }
            f.quadratic_terms
                .push((check_var(i, n, context)?, check_var(j, n, context)?, v));
        }
        for &(i, v) in &self.linear {
            f.affine.terms.push((check_var(i, n, context)?, v));
        }
        Ok(f)
    }

    pub fn from_function(f: &ScalarQuadraticFunction) -> Self {
        FunctionSpec {
            quadratic: f.quadratic_terms.iter().map(|t| (t.0 .0, t.1 .0, t.2)).collect(),
            linear: f.affine.terms.iter().map(|t| (t.0 .0, t.1)).collect(),
            constant: f.affine.constant,
        }
    }
}

/// Rows and constants to a function of the given dimension.
fn build_function(
    rows: &[(usize, usize, f64)],
    constants: &[f64],
    dim: usize,
    scalar: bool,
    n: usize,
    context: &str,
) -> CliResult<ConstraintFunction> {
    if !(constants.is_empty() || constants.len() == dim) {
        return Err(CliError::Input(format!(
            "{context}: {} constants for dimension {dim}",
            constants.len()
        )));
    }
    let mut out: Vec<ScalarAffineFunction> = (0..dim)
        .map(|r| ScalarAffineFunction::constant(constants.get(r).copied().unwrap_or(0.0)))
        .collect();
    for &(r, v, c) in rows {
        if r >= dim {
            return Err(CliError::Input(format!("{context}: row {r} out of range (dimension {dim})")));
        }
        out[r].terms.push((check_var(v, n, context)?, c));
    }
    Ok(if scalar {
        out.remove(0).into()
    } else {
        VectorAffineFunction::new(out).into()
    })
}

fn function_rows(f: &ConstraintFunction) -> (Vec<(usize, usize, f64)>, Vec<f64>) {
    let mut rows = Vec::new();
    let mut constants = Vec::new();
    for (r, row) in f.rows().iter().enumerate() {
        rows.extend(row.terms.iter().map(|t| (r, t.0 .0, t.1)));
        constants.push(row.constant);
    }
    (rows, constants)
}

impl ProblemFile {
    pub fn parse(text: &str) -> CliResult<Self> {
        parse_json(text, "problem file")
    }

    pub fn to_model(&self) -> CliResult<ProblemModel> {
        let n = self.variables.len();
        let mut names = HashSet::new();
        for name in &self.variables {
            if !names.insert(name) {
                return Err(CliError::Input(format!("duplicate variable name {name:?}")));
            }
        }
        let mut b = ProblemBuilder::with_variables(n);
        b.minimize(self.objective.to_function(n, "objective")?);
        for con in &self.constraints {
            let set = con.set.to_set();
            let context = format!("constraint {:?}", con.id);
            let f = build_function(&con.rows, &con.constants, set.dim(), set.is_scalar(), n, &context)?;
            b.add_constraint(con.id.as_str(), f, set);
        }
        b.build().map_err(CliError::input)
    }

    pub fn from_model(model: &ProblemModel, names: &[String]) -> Self {
        let constraints = model
            .constraints()
            .iter()
            .map(|con| {
                let (rows, constants) = function_rows(&con.function);
                ConstraintSpec {
                    id: con.id.to_string(),
                    rows,
                    constants,
                    set: SetSpec::from_set(&con.set),
                }
            })
            .collect();
        ProblemFile {
            variables: names.to_vec(),
            objective: FunctionSpec::from_function(model.objective()),
            constraints,
        }
    }
}

impl TangentFile {
    /// An empty (or whitespace-only) document is the zero tangent.
    pub fn parse(text: &str) -> CliResult<Self> {
        if text.trim().is_empty() {
            return Ok(TangentFile::default());
        }
        parse_json(text, "tangent file")
    }

    pub fn apply_forward(&self, engine: &mut DiffEngine) -> CliResult<()> {
        if !self.seeds.is_empty() {
            return Err(CliError::Input("forward mode does not take seeds".into()));
        }
        let model = engine.model().clone();
        let n = model.n_vars();
        if let Some(obj) = &self.objective {
            engine
                .set_forward_objective(obj.to_function(n, "objective tangent")?)
                .map_err(CliError::input)?;
        }
        for t in &self.constraints {
            let con = model
                .constraint(&t.id.as_str().into())
                .ok_or_else(|| CliError::Input(format!("tangent for unknown constraint {:?}", t.id)))?;
            let context = format!("tangent of {:?}", t.id);
            let f = build_function(&t.rows, &t.constants, con.set.dim(), con.set.is_scalar(), n, &context)?;
            engine.set_forward_constraint(t.id.as_str(), f).map_err(CliError::input)?;
        }
        Ok(())
    }

    pub fn apply_reverse(&self, engine: &mut DiffEngine) -> CliResult<()> {
        if self.objective.is_some() || !self.constraints.is_empty() {
            return Err(CliError::Input("reverse mode takes only seeds".into()));
        }
        for &(v, s) in &self.seeds {
            engine.set_reverse_variable(VariableId(v), s).map_err(CliError::input)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardOutput {
    pub settings: serde_json::Value,
    pub status: String,
    pub approximate: bool,
    pub variable_tangents: BTreeMap<String, f64>,
}

/// Gradient with respect to one constraint function. Scalar constraints list
/// the nonzero coefficients and the constant; vector constraints use the
/// row-triplet layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GradientSpec {
    Scalar {
        linear: Vec<(usize, f64)>,
        constant: f64,
    },
    Vector {
        rows: Vec<(usize, usize, f64)>,
        constants: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseOutput {
    pub settings: serde_json::Value,
    pub status: String,
    pub approximate: bool,
    pub objective_gradient: FunctionSpec,
    pub constraint_gradients: BTreeMap<String, GradientSpec>,
}

pub fn forward_output(engine: &DiffEngine, names: &[String], settings: serde_json::Value) -> CliResult<ForwardOutput> {
    let dx = engine.forward_variable_primals().map_err(CliError::solve)?;
    Ok(ForwardOutput {
        settings,
        status: status_name(engine),
        approximate: engine.is_approximate(),
        variable_tangents: names.iter().cloned().zip(dx.iter().copied()).collect(),
    })
}

pub fn reverse_output(engine: &DiffEngine, settings: serde_json::Value) -> CliResult<ReverseOutput> {
    let obj = engine.reverse_objective().map_err(CliError::solve)?;
    let mut objective_gradient = FunctionSpec::from_function(obj);
    objective_gradient.linear.retain(|t| t.1 != 0.0);
    let mut constraint_gradients = BTreeMap::new();
    for con in engine.model().constraints() {
        let g = engine.reverse_constraint(&con.id).map_err(CliError::solve)?;
        let spec = match g {
            ConstraintFunction::Scalar(f) => GradientSpec::Scalar {
                linear: f.terms.iter().filter(|t| t.1 != 0.0).map(|t| (t.0 .0, t.1)).collect(),
                constant: f.constant,
            },
            ConstraintFunction::Vector(_) => {
                let (mut rows, constants) = function_rows(g);
                rows.retain(|t| t.2 != 0.0);
                GradientSpec::Vector { rows, constants }
            }
        };
        constraint_gradients.insert(con.id.to_string(), spec);
    }
    Ok(ReverseOutput {
        settings,
        status: status_name(engine),
        approximate: engine.is_approximate(),
        objective_gradient,
        constraint_gradients,
    })
}

fn status_name(engine: &DiffEngine) -> String {
    engine.status().map(|s| s.as_str()).unwrap_or("NotSolved").to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOLDEN: &str = r#"{
        "variables": ["x"],
        "objective": {"linear": [[0, 2.0]]},
        "constraints": [{"id": "cons", "rows": [[0, 0, 1.0]], "constants": [0.0],
                         "set": {"type": "GreaterThan", "value": 3.0}}]
    }"#;

    #[test]
    fn parses_the_worked_example() {
        let p = ProblemFile::parse(GOLDEN).unwrap();
        let model = p.to_model().unwrap();
        assert_eq!(model.n_vars(), 1);
        assert_eq!(model.constraints()[0].set, ConeSet::GreaterThan(3.0));
        assert!(matches!(model.constraints()[0].function, ConstraintFunction::Scalar(_)));
        assert_eq!(ProblemFile::from_model(&model, &p.variables).to_model().unwrap(), model);
    }

    #[test]
    fn rejects_lower_triangular_triplets() {
        let text = r#"{"variables": ["a", "b"], "objective": {"quadratic": [[1, 0, 1.0]]}}"#;
        assert!(matches!(ProblemFile::parse(text).unwrap().to_model(), Err(CliError::Input(_))));
    }

    #[test]
    fn rejects_bad_references() {
        let text = r#"{"variables": ["a"], "objective": {"linear": [[3, 1.0]]}}"#;
        assert!(ProblemFile::parse(text).unwrap().to_model().is_err());
        let text = r#"{"variables": ["a"], "constraints": [{"id": "c", "rows": [[1, 0, 1.0]],
                       "set": {"type": "Nonnegative", "dim": 1}}]}"#;
        assert!(ProblemFile::parse(text).unwrap().to_model().is_err());
        let text = r#"{"variables": ["a", "a"]}"#;
        assert!(ProblemFile::parse(text).unwrap().to_model().is_err());
    }

    #[test]
    fn empty_tangent_document() {
        assert_eq!(TangentFile::parse("  \n").unwrap(), TangentFile::default());
        assert_eq!(TangentFile::parse("{}").unwrap(), TangentFile::default());
        assert!(TangentFile::parse("{\"seeds\": [[0, ").is_err());
        assert!(TangentFile::parse("{\"unknown\": 1}").is_err());
    }
}
