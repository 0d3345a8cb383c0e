//! Self-contained small-scale mixed-integer linear programming.
//!
//! A bounded-variable two-phase primal simplex solves LP relaxations; a
//! best-first branch-and-bound over binary variables solves MILPs exactly at
//! the scales produced by the price-transform pipeline (hundreds of
//! constraints). Instances export to CPLEX-LP-format text so any mainstream
//! external solver can cross-check objectives.
//!
//! The solver works in `f64` regardless of the scalar type used elsewhere:
//! the stated tolerances (1e-7 feasibility, 1e-6 integrality) are double
//! precision scale and would be meaningless in `f32`.

mod branch;
mod lp_text;
mod simplex;

pub use branch::solve_milp;
pub use lp_text::{export_lp_text, parse_lp_text};

use thiserror::Error;

/// Index of a variable within a [`MilpInstance`].
pub type VarId = usize;

/// Feasibility tolerance: a solution satisfies a constraint if the violation
/// is at most this.
pub const FEASIBILITY_TOL: f64 = 1e-7;
/// Integrality tolerance: a binary is integral if within this of 0 or 1.
pub const INTEGRALITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintSense {
    Le,
    Ge,
    Eq,
}

impl std::fmt::Display for ConstraintSense {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConstraintSense::Le => "<=",
            ConstraintSense::Ge => ">=",
            ConstraintSense::Eq => "=",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveSense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub is_binary: bool,
}

/// One linear constraint: sparse coefficient list (by variable id), sense,
/// right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coefficients: Vec<(VarId, f64)>,
    pub sense: ConstraintSense,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub sense: ObjectiveSense,
    pub coefficients: Vec<(VarId, f64)>,
}

impl Default for Objective {
    fn default() -> Self {
        Objective {
            sense: ObjectiveSense::Minimize,
            coefficients: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MilpInstance {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub objective: Objective,
}

#[derive(Debug, Error)]
pub enum MilpError {
    /// The instance violates a structural requirement. Distinct from an
    /// [`MilpStatus::Infeasible`] outcome, which is a property of a
    /// well-formed instance.
    #[error("malformed instance: {0}")]
    Malformed(String),
    /// The solver failed internally (iteration limit, numerical breakdown).
    #[error("solver internal failure: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MilpStatus {
    Optimal,
    Infeasible,
    /// Defensive: unreachable for validated instances, whose variable bounds
    /// are all finite.
    Unbounded,
}

/// Solver output. `values` is indexed by [`VarId`] and is empty unless the
/// status is `Optimal`; `objective` is in the instance's own sense and is NaN
/// unless `Optimal`. `nodes` counts LP solves (1 for a plain LP solve).
#[derive(Debug, Clone, PartialEq)]
pub struct MilpSolution {
    pub status: MilpStatus,
    pub values: Vec<f64>,
    pub objective: f64,
    pub nodes: usize,
    pub iterations: usize,
}

impl MilpSolution {
    pub fn value(&self, id: VarId) -> f64 {
        self.values.get(id).copied().unwrap_or(f64::NAN)
    }

    pub fn value_named(&self, inst: &MilpInstance, name: &str) -> Option<f64> {
        inst.var_id(name).map(|id| self.value(id))
    }
}

impl MilpInstance {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a continuous variable and returns its id.
    pub fn add_continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.variables.push(Variable {
            name: name.into(),
            lower,
            upper,
            is_binary: false,
        });
        self.variables.len() - 1
    }

    /// Adds a binary variable (bounds fixed to [0, 1]) and returns its id.
    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.variables.push(Variable {
            name: name.into(),
            lower: 0.0,
            upper: 1.0,
            is_binary: true,
        });
        self.variables.len() - 1
    }

    pub fn add_constraint(
        &mut self,
        coefficients: Vec<(VarId, f64)>,
        sense: ConstraintSense,
        rhs: f64,
    ) {
        self.constraints.push(Constraint {
            coefficients,
            sense,
            rhs,
        });
    }

    pub fn set_objective(&mut self, sense: ObjectiveSense, coefficients: Vec<(VarId, f64)>) {
        self.objective = Objective {
            sense,
            coefficients,
        };
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn num_binaries(&self) -> usize {
        self.variables.iter().filter(|v| v.is_binary).count()
    }

    pub fn var_id(&self, name: &str) -> Option<VarId> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Structural well-formedness: valid unique names, finite ordered bounds,
    /// binaries exactly [0, 1], coefficient lists referencing declared
    /// variables at most once each, no NaNs anywhere.
    pub fn validate(&self) -> Result<(), MilpError> {
        let mut seen = std::collections::HashSet::new();
        for (i, v) in self.variables.iter().enumerate() {
            if !valid_name(&v.name) {
                return Err(MilpError::Malformed(format!(
                    "variable {i} has invalid name {:?}",
                    v.name
                )));
            }
            if !seen.insert(v.name.as_str()) {
                return Err(MilpError::Malformed(format!(
                    "duplicate variable name {:?}",
                    v.name
                )));
            }
            if !v.lower.is_finite() || !v.upper.is_finite() {
                return Err(MilpError::Malformed(format!(
                    "variable {:?} has non-finite bounds [{}, {}]",
                    v.name, v.lower, v.upper
                )));
            }
            if v.lower > v.upper {
                return Err(MilpError::Malformed(format!(
                    "variable {:?} has empty bound interval [{}, {}]",
                    v.name, v.lower, v.upper
                )));
            }
            if v.is_binary && (v.lower != 0.0 || v.upper != 1.0) {
                return Err(MilpError::Malformed(format!(
                    "binary variable {:?} must have bounds [0, 1]",
                    v.name
                )));
            }
        }
        for (ci, c) in self.constraints.iter().enumerate() {
            check_coeffs(&c.coefficients, self.variables.len(), &format!("constraint {ci}"))?;
            if !c.rhs.is_finite() {
                return Err(MilpError::Malformed(format!(
                    "constraint {ci} has non-finite rhs {}",
                    c.rhs
                )));
            }
        }
        check_coeffs(
            &self.objective.coefficients,
            self.variables.len(),
            "objective",
        )?;
        Ok(())
    }

    pub(crate) fn lower_bounds(&self) -> Vec<f64> {
        self.variables.iter().map(|v| v.lower).collect()
    }

    pub(crate) fn upper_bounds(&self) -> Vec<f64> {
        self.variables.iter().map(|v| v.upper).collect()
    }
}

fn check_coeffs(coeffs: &[(VarId, f64)], nvars: usize, what: &str) -> Result<(), MilpError> {
    let mut seen = std::collections::HashSet::new();
    for &(id, c) in coeffs {
        if id >= nvars {
            return Err(MilpError::Malformed(format!(
                "{what} references undeclared variable id {id}"
            )));
        }
        if !seen.insert(id) {
            return Err(MilpError::Malformed(format!(
                "{what} references variable id {id} more than once"
            )));
        }
        if !c.is_finite() {
            return Err(MilpError::Malformed(format!(
                "{what} has non-finite coefficient {c} on variable id {id}"
            )));
        }
    }
    Ok(())
}

/// LP-format identifier: starts with a letter or underscore, continues with
/// alphanumerics/underscores, and is not a keyword of the text format.
fn valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    if !chars.all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return false;
    }
    !matches!(
        name.to_ascii_lowercase().as_str(),
        "free"
            | "inf"
            | "infinity"
            | "nan"
            | "min"
            | "max"
            | "minimize"
            | "maximize"
            | "st"
            | "bounds"
            | "bin"
            | "binary"
            | "binaries"
            | "general"
            | "generals"
            | "integers"
            | "end"
    )
}

/// Objective value of `values` in the instance's own sense.
pub fn objective_value(inst: &MilpInstance, values: &[f64]) -> f64 {
    inst.objective
        .coefficients
        .iter()
        .map(|&(id, c)| c * values[id])
        .sum()
}

/// Re-verifies a reported-Optimal solution by direct substitution: bounds and
/// constraints within `tol`, binaries within [`INTEGRALITY_TOL`] of {0, 1}.
pub fn check_solution(inst: &MilpInstance, values: &[f64], tol: f64) -> Result<(), String> {
    if values.len() != self_len(inst) {
        return Err(format!(
            "value vector length {} does not match {} variables",
            values.len(),
            inst.variables.len()
        ));
    }
    for (v, &x) in inst.variables.iter().zip(values) {
        if x < v.lower - tol || x > v.upper + tol {
            return Err(format!(
                "variable {:?} = {x} outside bounds [{}, {}]",
                v.name, v.lower, v.upper
            ));
        }
        if v.is_binary && (x - x.round()).abs() > INTEGRALITY_TOL {
            return Err(format!("binary variable {:?} = {x} is not integral", v.name));
        }
    }
    for (ci, c) in inst.constraints.iter().enumerate() {
        let lhs: f64 = c.coefficients.iter().map(|&(id, a)| a * values[id]).sum();
        let ok = match c.sense {
            ConstraintSense::Le => lhs <= c.rhs + tol,
            ConstraintSense::Ge => lhs >= c.rhs - tol,
            ConstraintSense::Eq => (lhs - c.rhs).abs() <= tol,
        };
        if !ok {
            return Err(format!(
                "constraint {ci}: lhs {lhs} violates {} {}",
                c.sense, c.rhs
            ));
        }
    }
    Ok(())
}

fn self_len(inst: &MilpInstance) -> usize {
    inst.variables.len()
}

/// Solves the LP relaxation (binary integrality ignored; declared bounds
/// kept). Returns `Optimal` with a basic solution, or `Infeasible`;
/// `Unbounded` cannot occur for validated (finite-bound) instances.
pub fn solve_lp(inst: &MilpInstance) -> Result<MilpSolution, MilpError> {
    inst.validate()?;
    let lower = inst.lower_bounds();
    let upper = inst.upper_bounds();
    let out = simplex::solve_bounded_lp(inst, &lower, &upper)?;
    Ok(finish_lp(inst, out))
}

pub(crate) fn finish_lp(inst: &MilpInstance, out: simplex::LpResult) -> MilpSolution {
    match out.status {
        simplex::LpStatus::Optimal => {
            let objective = objective_value(inst, &out.values);
            MilpSolution {
                status: MilpStatus::Optimal,
                values: out.values,
                objective,
                nodes: 1,
                iterations: out.iterations,
            }
        }
        simplex::LpStatus::Infeasible => MilpSolution {
            status: MilpStatus::Infeasible,
            values: Vec::new(),
            objective: f64::NAN,
            nodes: 1,
            iterations: out.iterations,
        },
        simplex::LpStatus::Unbounded => MilpSolution {
            status: MilpStatus::Unbounded,
            values: Vec::new(),
            objective: f64::NAN,
            nodes: 1,
            iterations: out.iterations,
        },
    }
}
