//! Interventionals (mechanism replacements), interchange interventions and
//! checks of the algebraic laws hard interventions obey.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{Expr, Semantics};
use crate::model::{describe_assignment, Assignment, CausalModel, RunError, Violation};
use crate::rational::Rational;

/// Deepest supported nesting of interchange sources.
pub const MAX_INTERCHANGE_DEPTH: usize = 3;

#[derive(Debug, Clone)]
pub enum InterventionKind {
    Hard(BTreeMap<String, Rational>),
    Replace(BTreeMap<String, Expr>),
    /// Applied left to right.
    Compose(Vec<Interventional>),
}

/// A model-to-model transform built from mechanism replacements.
///
/// Equality compares the effect (the flattened replacement map), never the
/// label.
#[derive(Debug, Clone)]
pub struct Interventional {
    pub label: String,
    pub kind: InterventionKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApplyError {
    #[error("interventional targets unknown variable `{0}`")]
    UnknownTarget(String),
    #[error("replacement for `{variable}` references unknown variable `{unknown}`")]
    UnknownReference { variable: String, unknown: String },
    #[error("replacement creates a cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("intervened model is invalid: {0}")]
    Invalid(Violation),
}

impl PartialEq for Interventional {
    fn eq(&self, other: &Self) -> bool {
        self.effective() == other.effective()
    }
}

impl Eq for Interventional {}

impl Interventional {
    /// The identity interventional.
    pub fn null() -> Self {
        Self::compose(Vec::new())
    }

    pub fn hard(values: impl IntoIterator<Item = (String, Rational)>) -> Self {
        let values: BTreeMap<String, Rational> = values.into_iter().collect();
        let label = format!("hard{}", describe_assignment(&values));
        Self {
            label,
            kind: InterventionKind::Hard(values),
        }
    }

    pub fn replace(mechanisms: impl IntoIterator<Item = (String, Expr)>) -> Self {
        let mechanisms: BTreeMap<String, Expr> = mechanisms.into_iter().collect();
        let body: Vec<String> = mechanisms.iter().map(|(k, e)| format!("{k} <- {e}")).collect();
        Self {
            label: format!("replace{{{}}}", body.join(", ")),
            kind: InterventionKind::Replace(mechanisms),
        }
    }

    pub fn compose(parts: Vec<Interventional>) -> Self {
        let label = if parts.is_empty() {
            "null".to_string()
        } else {
            parts.iter().map(|p| p.label.as_str()).collect::<Vec<_>>().join(" ; ")
        };
        Self {
            label,
            kind: InterventionKind::Compose(parts),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Net replacement map; for repeated targets the later entry wins.
    pub fn effective(&self) -> BTreeMap<String, Expr> {
        let mut out = BTreeMap::new();
        self.collect_effective(&mut out);
        out
    }

    fn collect_effective(&self, out: &mut BTreeMap<String, Expr>) {
        match &self.kind {
            InterventionKind::Hard(values) => {
                for (k, v) in values {
                    out.insert(k.clone(), Expr::Const(v.clone()));
                }
            }
            InterventionKind::Replace(mechanisms) => {
                for (k, e) in mechanisms {
                    out.insert(k.clone(), e.clone());
                }
            }
            InterventionKind::Compose(parts) => {
                for part in parts {
                    part.collect_effective(out);
                }
            }
        }
    }

    pub fn targets(&self) -> BTreeSet<String> {
        self.effective().into_keys().collect()
    }

    pub fn is_null(&self) -> bool {
        self.effective().is_empty()
    }

    /// The constant assignment, if every net replacement is a constant.
    pub fn as_hard(&self) -> Option<Assignment> {
        self.effective()
            .into_iter()
            .map(|(k, e)| e.as_const().cloned().map(|v| (k, v)))
            .collect()
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Interventional) -> Interventional {
        Interventional::compose(vec![self.clone(), next.clone()])
    }

    /// A copy with target names (and names inside replacement expressions)
    /// renamed; names absent from the map are kept.
    pub fn renamed(&self, names: &BTreeMap<String, String>) -> Interventional {
        let rename = |k: &String| names.get(k).cloned().unwrap_or_else(|| k.clone());
        let kind = match &self.kind {
            InterventionKind::Hard(values) => InterventionKind::Hard(
                values.iter().map(|(k, v)| (rename(k), v.clone())).collect(),
            ),
            InterventionKind::Replace(mechanisms) => InterventionKind::Replace(
                mechanisms.iter().map(|(k, e)| (rename(k), e.rename(names))).collect(),
            ),
            InterventionKind::Compose(parts) => {
                InterventionKind::Compose(parts.iter().map(|p| p.renamed(names)).collect())
            }
        };
        Interventional {
            label: self.label.clone(),
            kind,
        }
    }

    /// Applies the interventional, returning a new model. The input model is
    /// untouched; untargeted mechanisms are carried over unchanged.
    pub fn apply(&self, model: &CausalModel) -> Result<CausalModel, ApplyError> {
        match &self.kind {
            InterventionKind::Compose(parts) => {
                let mut current = model.clone();
                for part in parts {
                    current = part.apply(&current)?;
                }
                Ok(current)
            }
            _ => apply_replacements(model, &self.effective()),
        }
    }
}

impl Serialize for Interventional {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let set: BTreeMap<String, String> = self
            .effective()
            .into_iter()
            .map(|(k, e)| (k, e.to_string()))
            .collect();
        let mut s = serializer.serialize_struct("Interventional", 2)?;
        s.serialize_field("label", &self.label)?;
        s.serialize_field("set", &set)?;
        s.end()
    }
}

impl fmt::Display for Interventional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

fn apply_replacements(
    model: &CausalModel,
    replacements: &BTreeMap<String, Expr>,
) -> Result<CausalModel, ApplyError> {
    let mut mechanisms = model.mechanisms().clone();
    for (target, expr) in replacements {
        if !model.has_variable(target) {
            return Err(ApplyError::UnknownTarget(target.clone()));
        }
        for name in expr.free_vars() {
            if !model.has_variable(&name) {
                return Err(ApplyError::UnknownReference {
                    variable: target.clone(),
                    unknown: name,
                });
            }
        }
        mechanisms.insert(target.clone(), expr.clone());
    }
    let out = CausalModel::new(model.variables().to_vec(), mechanisms);
    if let Some(violation) = out.validate().into_iter().next() {
        return Err(match violation {
            Violation::Cycle(path) => ApplyError::Cycle(path),
            other => ApplyError::Invalid(other),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Interchange interventions

/// Where an interchange takes its patched values from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Input(Assignment),
    /// The run produced by another interchange (a recursive interchange).
    Interchange(Box<InterchangeSpec>),
}

/// Run at `base`, with `targets` fixed to the values they take in the
/// source run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterchangeSpec {
    pub base: Assignment,
    pub source: Source,
    pub targets: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterchangeError {
    #[error("interchange has no targets")]
    NoTargets,
    #[error("interchange nesting depth {0} exceeds {MAX_INTERCHANGE_DEPTH}")]
    TooDeep(usize),
    #[error("{which} input must assign exactly the parentless variables {expected:?}, got {got:?}")]
    BadInput {
        which: &'static str,
        expected: Vec<String>,
        got: Vec<String>,
    },
    #[error("interchange target `{0}` is not a model variable")]
    UnknownTarget(String),
    #[error(transparent)]
    Run(#[from] RunError),
}

impl InterchangeSpec {
    pub fn new(base: Assignment, source: Assignment, targets: impl IntoIterator<Item = String>) -> Self {
        Self {
            base,
            source: Source::Input(source),
            targets: targets.into_iter().collect(),
        }
    }

    pub fn nested(base: Assignment, source: InterchangeSpec, targets: impl IntoIterator<Item = String>) -> Self {
        Self {
            base,
            source: Source::Interchange(Box::new(source)),
            targets: targets.into_iter().collect(),
        }
    }

    pub fn depth(&self) -> usize {
        match &self.source {
            Source::Input(_) => 1,
            Source::Interchange(inner) => 1 + inner.depth(),
        }
    }

    fn check(&self, model: &CausalModel) -> Result<(), InterchangeError> {
        if self.depth() > MAX_INTERCHANGE_DEPTH {
            return Err(InterchangeError::TooDeep(self.depth()));
        }
        if self.targets.is_empty() {
            return Err(InterchangeError::NoTargets);
        }
        if let Some(t) = self.targets.iter().find(|t| !model.has_variable(t)) {
            return Err(InterchangeError::UnknownTarget(t.clone()));
        }
        let mut expected = model.input_variables();
        expected.sort();
        let check_input = |which, input: &Assignment| {
            let got: Vec<String> = input.keys().cloned().collect();
            if got != expected {
                return Err(InterchangeError::BadInput {
                    which,
                    expected: expected.clone(),
                    got,
                });
            }
            Ok(())
        };
        check_input("base", &self.base)?;
        match &self.source {
            Source::Input(input) => check_input("source", input),
            Source::Interchange(inner) => inner.check(model),
        }
    }
}

/// Values the targets are patched to, then the patched run at `base`.
pub fn interchange(model: &CausalModel, spec: &InterchangeSpec) -> Result<Assignment, InterchangeError> {
    spec.check(model)?;
    let plan = model.plan()?;
    interchange_with(&plan, spec, &Semantics::Exact)
}

fn interchange_with(
    plan: &crate::model::Plan<'_>,
    spec: &InterchangeSpec,
    sem: &Semantics,
) -> Result<Assignment, InterchangeError> {
    let source_run = match &spec.source {
        Source::Input(input) => plan.run(input, sem)?,
        Source::Interchange(inner) => interchange_with(plan, inner, sem)?,
    };
    let mut overrides = spec.base.clone();
    for t in &spec.targets {
        overrides.insert(t.clone(), source_run[t].clone());
    }
    Ok(plan.run(&overrides, sem)?)
}

// ---------------------------------------------------------------------------
// Algebraic laws

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LawOutcome {
    pub law: String,
    pub checked: usize,
    /// First counterexample in case order, if any.
    pub counterexample: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LawReport {
    pub pass: bool,
    pub laws: Vec<LawOutcome>,
}

/// One randomized case: a model and two hard interventionals on it.
#[derive(Debug, Clone)]
pub struct LawCase {
    pub model: CausalModel,
    pub first: Interventional,
    pub second: Interventional,
}

fn same_effect(a: &CausalModel, b: &CausalModel) -> bool {
    a == b && a.run().ok() == b.run().ok()
}

/// Checks, over every case, disjoint-target commutation, idempotence of
/// each interventional, and override when both hit the same targets.
pub fn check_algebra_laws(cases: &[LawCase]) -> LawReport {
    #[derive(Default)]
    struct CaseResult {
        commutation: Option<Option<String>>,
        idempotence: Option<String>,
        overrides: Option<Option<String>>,
    }
    let results: Vec<CaseResult> = cases
        .par_iter()
        .enumerate()
        .map(|(n, case)| {
            let m = &case.model;
            let (i, j) = (&case.first, &case.second);
            let mut out = CaseResult::default();
            let applied = |x: &Interventional, model: &CausalModel| x.apply(model).ok();

            let ii = applied(i, m).and_then(|once| Some((applied(i, &once)?, once)));
            out.idempotence = match ii {
                Some((twice, once)) if same_effect(&twice, &once) => None,
                _ => Some(format!("case {n}: {i} applied twice differs from once")),
            };

            let (ti, tj) = (i.targets(), j.targets());
            if ti.is_disjoint(&tj) {
                let ij = applied(i, m).and_then(|x| applied(j, &x));
                let ji = applied(j, m).and_then(|x| applied(i, &x));
                let ok = matches!((&ij, &ji), (Some(a), Some(b)) if same_effect(a, b));
                out.commutation = Some((!ok).then(|| format!("case {n}: {i} and {j} do not commute")));
            }
            if ti == tj {
                let ij = applied(i, m).and_then(|x| applied(j, &x));
                let j_only = applied(j, m);
                let ok = match (&ij, &j_only) {
                    (Some(a), Some(b)) => {
                        same_effect(a, b)
                            && j.effective().iter().all(|(k, e)| a.mechanism(k) == Some(e))
                    }
                    _ => false,
                };
                out.overrides = Some((!ok).then(|| format!("case {n}: {j} after {i} does not win")));
            }
            out
        })
        .collect();

    let mut laws = vec![
        LawOutcome {
            law: "disjoint-commutation".into(),
            checked: 0,
            counterexample: None,
        },
        LawOutcome {
            law: "idempotence".into(),
            checked: 0,
            counterexample: None,
        },
        LawOutcome {
            law: "override".into(),
            checked: 0,
            counterexample: None,
        },
    ];
    for r in results {
        let entries = [
            (0, r.commutation),
            (1, Some(r.idempotence)),
            (2, r.overrides),
        ];
        for (k, entry) in entries {
            if let Some(result) = entry {
                laws[k].checked += 1;
                if laws[k].counterexample.is_none() {
                    laws[k].counterexample = result;
                }
            }
        }
    }
    LawReport {
        pass: laws.iter().all(|l| l.counterexample.is_none()),
        laws,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ValueDomain;
    use crate::rational::int;

    fn xnor_circuit() -> CausalModel {
        let b = ValueDomain::Boolean;
        CausalModel::from_parts(
            [
                ("A1", b.clone()),
                ("A2", b.clone()),
                ("A3", b.clone()),
                ("A4", b.clone()),
                ("B1", b.clone()),
                ("B2", b.clone()),
                ("C", b),
            ],
            [
                ("A1", Expr::int(0)),
                ("A2", Expr::int(0)),
                ("A3", Expr::int(0)),
                ("A4", Expr::int(0)),
                ("B1", Expr::xnor(Expr::var("A1"), Expr::var("A2"))),
                ("B2", Expr::xnor(Expr::var("A3"), Expr::var("A4"))),
                ("C", Expr::xnor(Expr::var("B1"), Expr::var("B2"))),
            ],
        )
    }

    fn input(bits: [i64; 4]) -> Assignment {
        (1..=4).map(|k| (format!("A{k}"), int(bits[k - 1]))).collect()
    }

    #[test]
    fn hard_intervention_cuts_parents() {
        let m = xnor_circuit();
        let i = Interventional::hard([("B2".to_string(), int(1))]);
        let out = i.apply(&m).unwrap();
        assert!(out.parents("B2").is_empty());
        assert_eq!(out.mechanism("B1"), m.mechanism("B1"));
        assert_eq!(i.apply(&out).unwrap(), out);
    }

    #[test]
    fn unknown_target_and_cycle_rejected() {
        let m = xnor_circuit();
        let bad = Interventional::hard([("Z".to_string(), int(1))]);
        assert_eq!(bad.apply(&m), Err(ApplyError::UnknownTarget("Z".into())));
        let cyc = Interventional::replace([("A1".to_string(), Expr::var("C"))]);
        let Err(ApplyError::Cycle(path)) = cyc.apply(&m) else {
            panic!("expected a cycle")
        };
        assert_eq!(path.first(), path.last());
        assert!(path.contains(&"A1".to_string()) && path.contains(&"C".to_string()));
    }

    #[test]
    fn compose_is_left_to_right_and_empty_is_identity() {
        let m = xnor_circuit();
        let i = Interventional::hard([("C".to_string(), int(0))])
            .then(&Interventional::hard([("C".to_string(), int(1))]));
        assert_eq!(i.apply(&m).unwrap().mechanism("C"), Some(&Expr::int(1)));
        assert_eq!(Interventional::null().apply(&m).unwrap(), m);
        assert!(Interventional::null().is_null());
    }

    #[test]
    fn equality_ignores_labels() {
        let a = Interventional::hard([("C".to_string(), int(1))]);
        let b = Interventional::replace([("C".to_string(), Expr::int(1))]).with_label("other");
        assert_eq!(a, b);
    }

    #[test]
    fn interchange_on_b2() {
        let m = xnor_circuit();
        let spec = InterchangeSpec::new(input([0, 0, 0, 0]), input([0, 0, 1, 0]), ["B2".to_string()]);
        let out = interchange(&m, &spec).unwrap();
        assert_eq!(out["B2"], int(0));
        assert_eq!(out["C"], int(0));
    }

    #[test]
    fn interchange_with_same_source_is_factual() {
        let m = xnor_circuit();
        let x = input([1, 0, 1, 1]);
        let spec = InterchangeSpec::new(x.clone(), x.clone(), ["B1".to_string(), "C".to_string()]);
        assert_eq!(interchange(&m, &spec).unwrap(), m.run_with(&x).unwrap());
    }

    #[test]
    fn recursive_interchange_depth_limit() {
        let m = xnor_circuit();
        let t = || ["B2".to_string()];
        let mut spec = InterchangeSpec::new(input([0; 4]), input([0, 0, 1, 0]), t());
        for _ in 0..2 {
            spec = InterchangeSpec::nested(input([1, 1, 1, 1]), spec, t());
        }
        assert_eq!(spec.depth(), 3);
        assert_eq!(interchange(&m, &spec).unwrap()["B2"], int(0));
        let deeper = InterchangeSpec::nested(input([0; 4]), spec, t());
        assert_eq!(interchange(&m, &deeper), Err(InterchangeError::TooDeep(4)));
    }

    #[test]
    fn malformed_specs_rejected() {
        let m = xnor_circuit();
        let empty = InterchangeSpec::new(input([0; 4]), input([0; 4]), Vec::<String>::new());
        assert_eq!(interchange(&m, &empty), Err(InterchangeError::NoTargets));
        let mut partial = input([0; 4]);
        partial.remove("A4");
        let spec = InterchangeSpec::new(partial, input([0; 4]), ["B1".to_string()]);
        assert!(matches!(interchange(&m, &spec), Err(InterchangeError::BadInput { which: "base", .. })));
    }

    #[test]
    fn laws_on_the_circuit() {
        let m = xnor_circuit();
        let h = |k: &str, v| Interventional::hard([(k.to_string(), int(v))]);
        let cases = vec![
            LawCase {
                model: m.clone(),
                first: h("B1", 0),
                second: h("B2", 1),
            },
            LawCase {
                model: m.clone(),
                first: h("C", 0),
                second: h("C", 1),
            },
            LawCase {
                model: m,
                first: h("B1", 1),
                second: h("B1", 1),
            },
        ];
        let report = check_algebra_laws(&cases);
        assert!(report.pass, "{report:?}");
        assert_eq!(report.laws[0].checked, 1);
        assert_eq!(report.laws[1].checked, 3);
        assert_eq!(report.laws[2].checked, 2);
    }
}
