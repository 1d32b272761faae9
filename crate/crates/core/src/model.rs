//! Structural causal models: variables, value domains, mechanisms, and the
//! forward solution of an acyclic model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::expr::{EvalError, Expr, Semantics};
use crate::rational::{self, format_rational, Rational};

/// A (possibly partial) setting of named variables.
pub type Assignment = BTreeMap<String, Rational>;

/// Upper bound on the number of parent settings `validate` enumerates for
/// a single mechanism's domain check.
const EXHAUSTIVE_LIMIT: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ValueDomain {
    Boolean,
    Real,
    /// Sorted, duplicate-free.
    Finite(Vec<Rational>),
}

impl ValueDomain {
    pub fn finite(values: impl IntoIterator<Item = Rational>) -> Self {
        let mut values: Vec<Rational> = values.into_iter().collect();
        values.sort();
        values.dedup();
        ValueDomain::Finite(values)
    }

    pub fn contains(&self, value: &Rational) -> bool {
        match self {
            ValueDomain::Boolean => rational::is_boolean(value),
            ValueDomain::Real => true,
            ValueDomain::Finite(values) => values.binary_search(value).is_ok(),
        }
    }

    /// The enumerable values, or `None` for real domains.
    pub fn values(&self) -> Option<Vec<Rational>> {
        match self {
            ValueDomain::Boolean => Some(vec![rational::zero(), rational::one()]),
            ValueDomain::Real => None,
            ValueDomain::Finite(values) => Some(values.clone()),
        }
    }

    pub fn is_finite(&self) -> bool {
        !matches!(self, ValueDomain::Real)
    }

    fn is_well_formed(&self) -> bool {
        match self {
            ValueDomain::Finite(values) => values.windows(2).all(|w| w[0] < w[1]),
            _ => true,
        }
    }
}

impl fmt::Display for ValueDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueDomain::Boolean => write!(f, "boolean"),
            ValueDomain::Real => write!(f, "real"),
            ValueDomain::Finite(values) => {
                write!(f, "finite")?;
                for v in values {
                    write!(f, " {}", format_rational(v))?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variable {
    pub name: String,
    pub domain: ValueDomain,
}

/// An acyclic set of variables, one mechanism each. A mechanism's free
/// variables are its parents; parentless variables carry constants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalModel {
    variables: Vec<Variable>,
    mechanisms: BTreeMap<String, Expr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("variable `{0}` is declared more than once")]
    DuplicateVariable(String),
    #[error("variable `{0}` has no mechanism")]
    MissingMechanism(String),
    #[error("mechanism given for undeclared variable `{0}`")]
    UndeclaredTarget(String),
    #[error("mechanism of `{variable}` references unknown variable `{unknown}`")]
    UnknownVariable { variable: String, unknown: String },
    #[error("cycle at {}: {}", .0[0], .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("domain of `{0}` is not sorted and duplicate-free")]
    MalformedDomain(String),
    #[error("mechanism of `{variable}` yields {value} outside its domain at {parents}")]
    OutOfDomain {
        variable: String,
        value: String,
        parents: String,
    },
    #[error("mechanism of `{variable}` fails to evaluate at {parents}: {error}")]
    Evaluation {
        variable: String,
        parents: String,
        error: EvalError,
    },
}

impl Violation {
    /// Variables the violation is about.
    pub fn variables(&self) -> Vec<&str> {
        match self {
            Violation::DuplicateVariable(v)
            | Violation::MissingMechanism(v)
            | Violation::UndeclaredTarget(v)
            | Violation::MalformedDomain(v) => vec![v],
            Violation::UnknownVariable { variable, unknown } => vec![variable, unknown],
            Violation::Cycle(path) => path.iter().map(String::as_str).collect(),
            Violation::OutOfDomain { variable, .. } | Violation::Evaluation { variable, .. } => {
                vec![variable]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error("model is invalid: {0}")]
    Invalid(Violation),
    #[error("evaluating `{variable}`: {error}")]
    Eval { variable: String, error: EvalError },
    #[error("`{variable}` took value {value} outside its domain")]
    OutOfDomain { variable: String, value: String },
    #[error("override targets unknown variable `{0}`")]
    UnknownOverride(String),
}

pub fn describe_assignment(assignment: &Assignment) -> String {
    let body: Vec<String> = assignment
        .iter()
        .map(|(k, v)| format!("{k}: {}", format_rational(v)))
        .collect();
    format!("{{{}}}", body.join(", "))
}

impl CausalModel {
    /// Builds a model without validating it; see [`CausalModel::validate`].
    pub fn new(variables: Vec<Variable>, mechanisms: BTreeMap<String, Expr>) -> Self {
        Self {
            variables,
            mechanisms,
        }
    }

    pub fn from_parts<'a>(
        variables: impl IntoIterator<Item = (&'a str, ValueDomain)>,
        mechanisms: impl IntoIterator<Item = (&'a str, Expr)>,
    ) -> Self {
        Self::new(
            variables
                .into_iter()
                .map(|(name, domain)| Variable {
                    name: name.to_string(),
                    domain,
                })
                .collect(),
            mechanisms
                .into_iter()
                .map(|(name, e)| (name.to_string(), e))
                .collect(),
        )
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable_names(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.name.clone()).collect()
    }

    pub fn has_variable(&self, name: &str) -> bool {
        self.variables.iter().any(|v| v.name == name)
    }

    pub fn domain(&self, name: &str) -> Option<&ValueDomain> {
        self.variables.iter().find(|v| v.name == name).map(|v| &v.domain)
    }

    pub fn mechanisms(&self) -> &BTreeMap<String, Expr> {
        &self.mechanisms
    }

    pub fn mechanism(&self, name: &str) -> Option<&Expr> {
        self.mechanisms.get(name)
    }

    pub fn parents(&self, name: &str) -> BTreeSet<String> {
        self.mechanisms
            .get(name)
            .map(Expr::free_vars)
            .unwrap_or_default()
    }

    /// Parentless variables in declaration order.
    pub fn input_variables(&self) -> Vec<String> {
        self.variables
            .iter()
            .filter(|v| self.parents(&v.name).is_empty())
            .map(|v| v.name.clone())
            .collect()
    }

    /// Variables that no mechanism reads, in declaration order.
    pub fn sink_variables(&self) -> Vec<String> {
        let read: BTreeSet<String> = self.mechanisms.values().flat_map(Expr::free_vars).collect();
        self.variables
            .iter()
            .filter(|v| !read.contains(&v.name))
            .map(|v| v.name.clone())
            .collect()
    }

    /// Variables reachable from `name` along parent -> child edges,
    /// excluding `name` itself.
    pub fn descendants(&self, name: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut frontier = vec![name.to_string()];
        while let Some(current) = frontier.pop() {
            for (child, mech) in &self.mechanisms {
                if mech.free_vars().contains(&current) && out.insert(child.clone()) {
                    frontier.push(child.clone());
                }
            }
        }
        out.remove(name);
        out
    }

    /// Copy of the model with one mechanism replaced (no validation).
    pub fn with_mechanism(&self, name: &str, mechanism: Expr) -> Self {
        let mut out = self.clone();
        out.mechanisms.insert(name.to_string(), mechanism);
        out
    }

    /// Structural problems only (no domain enumeration).
    fn structural_violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for v in &self.variables {
            if !seen.insert(v.name.clone()) {
                out.push(Violation::DuplicateVariable(v.name.clone()));
            }
            if !v.domain.is_well_formed() {
                out.push(Violation::MalformedDomain(v.name.clone()));
            }
        }
        for v in &self.variables {
            if !self.mechanisms.contains_key(&v.name) {
                out.push(Violation::MissingMechanism(v.name.clone()));
            }
        }
        for (target, mech) in &self.mechanisms {
            if !seen.contains(target) {
                out.push(Violation::UndeclaredTarget(target.clone()));
            }
            for name in mech.free_vars() {
                if !seen.contains(&name) {
                    out.push(Violation::UnknownVariable {
                        variable: target.clone(),
                        unknown: name,
                    });
                }
            }
        }
        if out.is_empty() {
            if let Err(cycle) = self.topological_order() {
                out.push(Violation::Cycle(cycle));
            }
        }
        out
    }

    /// Every invariant violation; empty iff the model is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = self.structural_violations();
        if !out.is_empty() {
            return out;
        }
        for v in &self.variables {
            if let Some(violation) = self.check_mechanism_domain(&v.name, &v.domain) {
                out.push(violation);
            }
        }
        out
    }

    fn check_mechanism_domain(&self, name: &str, domain: &ValueDomain) -> Option<Violation> {
        let mech = &self.mechanisms[name];
        let parents: Vec<String> = mech.free_vars().into_iter().collect();
        let mut parent_values = Vec::new();
        let mut total = 1usize;
        for p in &parents {
            let values = self.domain(p)?.values()?;
            total = total.saturating_mul(values.len());
            parent_values.push(values);
        }
        if total > EXHAUSTIVE_LIMIT {
            return None;
        }
        for setting in cartesian(&parent_values) {
            let env: Assignment = parents.iter().cloned().zip(setting).collect();
            match mech.evaluate(&env) {
                Ok(value) if domain.contains(&value) => {}
                Ok(value) => {
                    return Some(Violation::OutOfDomain {
                        variable: name.to_string(),
                        value: format_rational(&value),
                        parents: describe_assignment(&env),
                    })
                }
                Err(error) => {
                    return Some(Violation::Evaluation {
                        variable: name.to_string(),
                        parents: describe_assignment(&env),
                        error,
                    })
                }
            }
        }
        None
    }

    /// Kahn's algorithm, ties broken by declaration order. On failure
    /// returns a cycle `[X, .., X]`.
    pub fn topological_order(&self) -> Result<Vec<String>, Vec<String>> {
        let index: BTreeMap<&str, usize> = self
            .variables
            .iter()
            .enumerate()
            .map(|(i, v)| (v.name.as_str(), i))
            .collect();
        let n = self.variables.len();
        let mut indegree = vec![0usize; n];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, v) in self.variables.iter().enumerate() {
            for p in self.parents(&v.name) {
                if let Some(&j) = index.get(p.as_str()) {
                    indegree[i] += 1;
                    children[j].push(i);
                }
            }
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(self.variables[i].name.clone());
            for &c in &children[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() == n {
            return Ok(order);
        }
        // Walk parents among the unresolved variables until one repeats.
        let unresolved: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] > 0).collect();
        let mut path = vec![*unresolved.first().unwrap()];
        loop {
            let current = *path.last().unwrap();
            let next = self
                .parents(&self.variables[current].name)
                .iter()
                .filter_map(|p| index.get(p.as_str()).copied())
                .find(|j| unresolved.contains(j))
                .unwrap();
            if let Some(pos) = path.iter().position(|&k| k == next) {
                let mut cycle: Vec<String> = path[pos..]
                    .iter()
                    .rev()
                    .map(|&k| self.variables[k].name.clone())
                    .collect();
                cycle.push(cycle[0].clone());
                return Err(cycle);
            }
            path.push(next);
        }
    }

    pub fn plan(&self) -> Result<Plan<'_>, RunError> {
        if let Some(v) = self.structural_violations().into_iter().next() {
            return Err(RunError::Invalid(v));
        }
        let order = self.topological_order().map_err(|c| RunError::Invalid(Violation::Cycle(c)))?;
        let steps = order
            .into_iter()
            .map(|name| {
                let domain = self.domain(&name).unwrap();
                let mech = &self.mechanisms[&name];
                (name, mech, domain)
            })
            .collect();
        Ok(Plan { steps })
    }

    /// The unique solution, evaluating mechanisms in topological order.
    pub fn run(&self) -> Result<Assignment, RunError> {
        self.plan()?.run(&Assignment::new(), &Semantics::Exact)
    }

    /// Runs with some mechanisms replaced by constants (a hard intervention
    /// applied on the fly).
    pub fn run_with(&self, overrides: &Assignment) -> Result<Assignment, RunError> {
        self.plan()?.run(overrides, &Semantics::Exact)
    }
}

/// A validated evaluation order, reusable across many runs.
#[derive(Debug, Clone)]
pub struct Plan<'a> {
    steps: Vec<(String, &'a Expr, &'a ValueDomain)>,
}

impl Plan<'_> {
    pub fn run(&self, overrides: &Assignment, sem: &Semantics) -> Result<Assignment, RunError> {
        for name in overrides.keys() {
            if !self.steps.iter().any(|(n, _, _)| n == name) {
                return Err(RunError::UnknownOverride(name.clone()));
            }
        }
        let mut values = Assignment::new();
        for (name, mech, domain) in &self.steps {
            let value = match overrides.get(name) {
                Some(v) => v.clone(),
                None => mech.evaluate_with(&values, sem).map_err(|error| RunError::Eval {
                    variable: name.clone(),
                    error,
                })?,
            };
            if !domain.contains(&value) {
                return Err(RunError::OutOfDomain {
                    variable: name.clone(),
                    value: format_rational(&value),
                });
            }
            values.insert(name.clone(), value);
        }
        Ok(values)
    }

    pub fn order(&self) -> impl Iterator<Item = &str> {
        self.steps.iter().map(|(n, _, _)| n.as_str())
    }
}

/// Cartesian product of value lists, first list varying slowest.
pub fn cartesian(lists: &[Vec<Rational>]) -> Vec<Vec<Rational>> {
    let mut out = vec![Vec::new()];
    for list in lists {
        let mut next = Vec::with_capacity(out.len() * list.len());
        for prefix in &out {
            for v in list {
                let mut row = prefix.clone();
                row.push(v.clone());
                next.push(row);
            }
        }
        out = next;
    }
    out
}

/// Every assignment of the given finite-domain variables, first variable
/// varying slowest. `None` if some variable is real-valued.
pub fn enumerate_settings(model: &CausalModel, names: &[String]) -> Option<Vec<Assignment>> {
    let lists = names
        .iter()
        .map(|n| model.domain(n)?.values())
        .collect::<Option<Vec<_>>>()?;
    Some(
        cartesian(&lists)
            .into_iter()
            .map(|row| names.iter().cloned().zip(row).collect())
            .collect(),
    )
}

/// All boolean settings of the model's parentless variables, in
/// lexicographic order (first input most significant).
pub fn all_boolean_inputs(model: &CausalModel) -> Vec<Assignment> {
    let inputs = model.input_variables();
    let lists = vec![vec![rational::zero(), rational::one()]; inputs.len()];
    cartesian(&lists)
        .into_iter()
        .map(|row| inputs.iter().cloned().zip(row).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::int;

    fn chain() -> CausalModel {
        CausalModel::from_parts(
            [("A", ValueDomain::Boolean), ("B", ValueDomain::Boolean), ("C", ValueDomain::Boolean)],
            [
                ("A", Expr::int(1)),
                ("B", Expr::not(Expr::var("A"))),
                ("C", Expr::xnor(Expr::var("A"), Expr::var("B"))),
            ],
        )
    }

    #[test]
    fn valid_chain_runs() {
        let m = chain();
        assert!(m.validate().is_empty());
        let run = m.run().unwrap();
        assert_eq!(run["B"], int(0));
        assert_eq!(run["C"], int(0));
    }

    #[test]
    fn self_loop_is_a_cycle_at_x() {
        let m = CausalModel::from_parts(
            [("X", ValueDomain::Boolean)],
            [("X", Expr::not(Expr::var("X")))],
        );
        assert_eq!(m.validate(), vec![Violation::Cycle(vec!["X".into(), "X".into()])]);
        assert!(matches!(m.run(), Err(RunError::Invalid(Violation::Cycle(_)))));
    }

    #[test]
    fn longer_cycle_is_reported_as_a_path() {
        let m = CausalModel::from_parts(
            [("P", ValueDomain::Boolean), ("Q", ValueDomain::Boolean), ("R", ValueDomain::Boolean)],
            [
                ("P", Expr::var("R")),
                ("Q", Expr::var("P")),
                ("R", Expr::var("Q")),
            ],
        );
        let violations = m.validate();
        let Violation::Cycle(path) = &violations[0] else {
            panic!("expected cycle, got {violations:?}")
        };
        assert_eq!(path.first(), path.last());
        assert_eq!(path.len(), 4);
        for w in path.windows(2) {
            assert!(m.parents(&w[1]).contains(&w[0]), "{path:?}");
        }
    }

    #[test]
    fn unknown_variable_is_named() {
        let m = CausalModel::from_parts([("X", ValueDomain::Boolean)], [("X", Expr::var("Z"))]);
        assert_eq!(
            m.validate(),
            vec![Violation::UnknownVariable {
                variable: "X".into(),
                unknown: "Z".into()
            }]
        );
        assert_eq!(m.validate()[0].variables(), vec!["X", "Z"]);
    }

    #[test]
    fn domain_violation_found_exhaustively() {
        let m = CausalModel::from_parts(
            [("A", ValueDomain::Boolean), ("B", ValueDomain::Boolean)],
            [("A", Expr::int(0)), ("B", Expr::Add(vec![Expr::var("A"), Expr::int(1)]))],
        );
        let v = m.validate();
        assert!(matches!(&v[0], Violation::OutOfDomain { variable, .. } if variable == "B"), "{v:?}");
    }

    #[test]
    fn missing_and_duplicate() {
        let m = CausalModel::from_parts(
            [("A", ValueDomain::Boolean), ("A", ValueDomain::Boolean), ("B", ValueDomain::Real)],
            [("A", Expr::int(0))],
        );
        let v = m.validate();
        assert!(v.contains(&Violation::DuplicateVariable("A".into())));
        assert!(v.contains(&Violation::MissingMechanism("B".into())));
    }

    #[test]
    fn finite_domain_normalizes() {
        let d = ValueDomain::finite([int(3), int(1), int(3)]);
        assert_eq!(d, ValueDomain::Finite(vec![int(1), int(3)]));
        assert!(d.contains(&int(3)) && !d.contains(&int(2)));
    }

    #[test]
    fn inputs_sinks_descendants() {
        let m = chain();
        assert_eq!(m.input_variables(), vec!["A"]);
        assert_eq!(m.sink_variables(), vec!["C"]);
        assert_eq!(m.descendants("A"), ["B", "C"].iter().map(|s| s.to_string()).collect());
        assert!(m.descendants("C").is_empty());
    }

    #[test]
    fn overrides_act_as_hard_interventions() {
        let m = chain();
        let run = m.run_with(&[("B".to_string(), int(1))].into()).unwrap();
        assert_eq!(run["C"], int(1));
        assert!(m.run_with(&[("Nope".to_string(), int(1))].into()).is_err());
    }

    #[test]
    fn boolean_inputs_are_lexicographic() {
        let m = CausalModel::from_parts(
            [("P", ValueDomain::Boolean), ("Q", ValueDomain::Boolean)],
            [("P", Expr::int(0)), ("Q", Expr::int(0))],
        );
        let inputs = all_boolean_inputs(&m);
        assert_eq!(inputs.len(), 4);
        assert_eq!(inputs[1]["P"], int(0));
        assert_eq!(inputs[1]["Q"], int(1));
    }
}
