//! Bijective recarvings of a model's settings space.
//!
//! A [`Translation`] maps settings of a source variable set to settings of
//! a target variable set, one expression per coordinate, and carries its
//! inverse explicitly. [`translate_model`] builds the model the translation
//! induces by conjugating every mechanism, and [`pull_back`] carries a hard
//! intervention on the translated model back to an interventional on the
//! original one.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_traits::{One, Zero};
use thiserror::Error;

use crate::expr::{EvalError, Expr};
use crate::intervene::{ApplyError, Interventional};
use crate::model::{cartesian, describe_assignment, Assignment, CausalModel, RunError, ValueDomain, Variable};
use crate::rational::{self, Rational};

pub type Matrix = Vec<Vec<Rational>>;

/// Above this many settings a space is not enumerated.
const ENUMERATION_LIMIT: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Translation {
    source: Vec<Variable>,
    target: Vec<Variable>,
    /// Target variable -> expression over source variables.
    forward: BTreeMap<String, Expr>,
    /// Source variable -> expression over target variables.
    inverse: BTreeMap<String, Expr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranslateError {
    #[error("translation source variables {expected:?} do not match the model's {got:?}")]
    SourceMismatch { expected: Vec<String>, got: Vec<String> },
    #[error("{side} map is missing a component for `{variable}`")]
    MissingComponent { side: &'static str, variable: String },
    #[error("{side} component `{variable}` references `{unknown}`, which is not a {side} input")]
    StrayReference {
        side: &'static str,
        variable: String,
        unknown: String,
    },
    #[error("translation is not bijective: {first} and {second} both map to {image}")]
    Collision {
        first: String,
        second: String,
        image: String,
    },
    #[error("translation does not round-trip at {setting}: comes back as {returned}")]
    RoundTrip { setting: String, returned: String },
    #[error("translation leaves the declared space at {setting}: {detail}")]
    OutOfSpace { setting: String, detail: String },
    #[error("evaluating component `{variable}` at {setting}: {error}")]
    Eval {
        variable: String,
        setting: String,
        error: EvalError,
    },
    #[error("matrix must be square of size {expected}, got {rows}x{cols}")]
    MatrixShape { expected: usize, rows: usize, cols: usize },
    #[error("matrix is singular")]
    Singular,
    #[error("translated model is invalid: {0}")]
    InvalidResult(String),
    #[error(transparent)]
    Apply(#[from] ApplyError),
    #[error(transparent)]
    Run(#[from] RunError),
}

fn names(vars: &[Variable]) -> Vec<String> {
    vars.iter().map(|v| v.name.clone()).collect()
}

impl Translation {
    /// Builds a translation and checks that each side's components are
    /// complete and only read the other side's variables.
    pub fn new(
        source: Vec<Variable>,
        target: Vec<Variable>,
        forward: BTreeMap<String, Expr>,
        inverse: BTreeMap<String, Expr>,
    ) -> Result<Self, TranslateError> {
        let check = |side, outputs: &[Variable], inputs: &[Variable], map: &BTreeMap<String, Expr>| {
            let allowed: BTreeSet<&str> = inputs.iter().map(|v| v.name.as_str()).collect();
            for v in outputs {
                let expr = map.get(&v.name).ok_or_else(|| TranslateError::MissingComponent {
                    side,
                    variable: v.name.clone(),
                })?;
                if let Some(unknown) = expr.free_vars().into_iter().find(|n| !allowed.contains(n.as_str())) {
                    return Err(TranslateError::StrayReference {
                        side,
                        variable: v.name.clone(),
                        unknown,
                    });
                }
            }
            if let Some(extra) = map.keys().find(|k| !outputs.iter().any(|v| &v.name == *k)) {
                return Err(TranslateError::MissingComponent {
                    side,
                    variable: extra.clone(),
                });
            }
            Ok(())
        };
        check("forward", &target, &source, &forward)?;
        check("inverse", &source, &target, &inverse)?;
        Ok(Self {
            source,
            target,
            forward,
            inverse,
        })
    }

    pub fn identity(model: &CausalModel) -> Self {
        let vars = model.variables().to_vec();
        let map: BTreeMap<String, Expr> = vars.iter().map(|v| (v.name.clone(), Expr::var(&v.name))).collect();
        Self {
            source: vars.clone(),
            target: vars,
            forward: map.clone(),
            inverse: map,
        }
    }

    /// Linear change of basis on `layer`: target coordinate `targets[j]` is
    /// `sum_i layer[i] * matrix[i][j]`, every other variable is copied. The
    /// inverse is computed exactly. Target variables are real-valued.
    pub fn linear_layer(
        model: &CausalModel,
        layer: &[String],
        matrix: &Matrix,
        targets: &[String],
    ) -> Result<Self, TranslateError> {
        let n = layer.len();
        if matrix.len() != n || matrix.iter().any(|row| row.len() != n) || targets.len() != n {
            return Err(TranslateError::MatrixShape {
                expected: n,
                rows: matrix.len(),
                cols: matrix.first().map_or(0, Vec::len),
            });
        }
        let inv = invert(matrix).ok_or(TranslateError::Singular)?;
        let mut forward = BTreeMap::new();
        let mut inverse = BTreeMap::new();
        let mut target_vars = Vec::new();
        for v in model.variables() {
            match layer.iter().position(|l| l == &v.name) {
                Some(i) => {
                    let fwd = Expr::linear(
                        (0..n).map(|k| (matrix[k][i].clone(), layer[k].as_str())),
                        rational::zero(),
                    );
                    let inv_expr = Expr::linear(
                        (0..n).map(|k| (inv[k][i].clone(), targets[k].as_str())),
                        rational::zero(),
                    );
                    forward.insert(targets[i].clone(), fwd);
                    inverse.insert(v.name.clone(), inv_expr);
                    target_vars.push(Variable {
                        name: targets[i].clone(),
                        domain: ValueDomain::Real,
                    });
                }
                None => {
                    forward.insert(v.name.clone(), Expr::var(&v.name));
                    inverse.insert(v.name.clone(), Expr::var(&v.name));
                    target_vars.push(v.clone());
                }
            }
        }
        Self::new(model.variables().to_vec(), target_vars, forward, inverse)
    }

    /// The same bijection read in the other direction.
    pub fn inverted(&self) -> Self {
        Self {
            source: self.target.clone(),
            target: self.source.clone(),
            forward: self.inverse.clone(),
            inverse: self.forward.clone(),
        }
    }

    pub fn source(&self) -> &[Variable] {
        &self.source
    }

    pub fn target(&self) -> &[Variable] {
        &self.target
    }

    pub fn forward_map(&self) -> &BTreeMap<String, Expr> {
        &self.forward
    }

    pub fn inverse_map(&self) -> &BTreeMap<String, Expr> {
        &self.inverse
    }

    pub fn forward(&self, setting: &Assignment) -> Result<Assignment, TranslateError> {
        apply_map(&self.target, &self.forward, setting)
    }

    pub fn backward(&self, setting: &Assignment) -> Result<Assignment, TranslateError> {
        apply_map(&self.source, &self.inverse, setting)
    }

    /// Exhaustive bijectivity check over the source space when every domain
    /// on both sides is finite and small enough; otherwise `Ok(false)` is
    /// returned and callers should use [`Translation::check_round_trip`] on
    /// realized settings.
    pub fn check_bijective(&self) -> Result<bool, TranslateError> {
        let Some(sources) = enumerate(&self.source) else {
            return Ok(false);
        };
        let Some(targets) = enumerate(&self.target) else {
            return Ok(false);
        };
        let mut seen: HashMap<Vec<Rational>, Assignment> = HashMap::new();
        for s in &sources {
            let t = self.forward(s)?;
            self.check_in_space(&self.target, &t, s)?;
            let key: Vec<Rational> = t.values().cloned().collect();
            if let Some(previous) = seen.insert(key, s.clone()) {
                return Err(TranslateError::Collision {
                    first: describe_assignment(&previous),
                    second: describe_assignment(s),
                    image: describe_assignment(&t),
                });
            }
        }
        if sources.len() != targets.len() {
            // Injective but not onto: some target has no preimage.
            let missing = targets
                .iter()
                .find(|t| !seen.contains_key(&t.values().cloned().collect::<Vec<_>>()))
                .unwrap();
            return Err(TranslateError::OutOfSpace {
                setting: describe_assignment(missing),
                detail: "target setting has no preimage".into(),
            });
        }
        self.check_round_trip(&sources)?;
        Ok(true)
    }

    /// `backward(forward(s)) = s` and `forward(backward(forward(s))) =
    /// forward(s)` for each given source setting.
    pub fn check_round_trip(&self, settings: &[Assignment]) -> Result<(), TranslateError> {
        for s in settings {
            let t = self.forward(s)?;
            let back = self.backward(&t)?;
            if &back != s {
                return Err(TranslateError::RoundTrip {
                    setting: describe_assignment(s),
                    returned: describe_assignment(&back),
                });
            }
        }
        Ok(())
    }

    fn check_in_space(&self, vars: &[Variable], t: &Assignment, from: &Assignment) -> Result<(), TranslateError> {
        for v in vars {
            if !v.domain.contains(&t[&v.name]) {
                return Err(TranslateError::OutOfSpace {
                    setting: describe_assignment(from),
                    detail: format!("`{}` = {} is outside {}", v.name, rational::format_rational(&t[&v.name]), v.domain),
                });
            }
        }
        Ok(())
    }

    fn check_source(&self, model: &CausalModel) -> Result<(), TranslateError> {
        let mut expected = names(&self.source);
        let mut got = model.variable_names();
        expected.sort();
        got.sort();
        if expected != got {
            return Err(TranslateError::SourceMismatch { expected, got });
        }
        Ok(())
    }
}

fn apply_map(
    outputs: &[Variable],
    map: &BTreeMap<String, Expr>,
    setting: &Assignment,
) -> Result<Assignment, TranslateError> {
    outputs
        .iter()
        .map(|v| {
            map[&v.name]
                .evaluate(setting)
                .map(|value| (v.name.clone(), value))
                .map_err(|error| TranslateError::Eval {
                    variable: v.name.clone(),
                    setting: describe_assignment(setting),
                    error,
                })
        })
        .collect()
}

fn enumerate(vars: &[Variable]) -> Option<Vec<Assignment>> {
    let lists = vars.iter().map(|v| v.domain.values()).collect::<Option<Vec<_>>>()?;
    let size = lists.iter().try_fold(1usize, |acc, l| acc.checked_mul(l.len()))?;
    if size > ENUMERATION_LIMIT {
        return None;
    }
    let names = names(vars);
    Some(
        cartesian(&lists)
            .into_iter()
            .map(|row| names.iter().cloned().zip(row).collect())
            .collect(),
    )
}

/// Exact inverse by Gauss-Jordan elimination.
pub fn invert(matrix: &Matrix) -> Option<Matrix> {
    let n = matrix.len();
    let mut a: Vec<Vec<Rational>> = matrix
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { Rational::one() } else { Rational::zero() }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !a[r][col].is_zero())?;
        a.swap(col, pivot);
        let p = a[col][col].clone();
        for x in a[col].iter_mut() {
            *x /= &p;
        }
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let factor = a[r][col].clone();
                let pivot_row = a[col].clone();
                for (x, y) in a[r].iter_mut().zip(pivot_row) {
                    *x -= &factor * y;
                }
            }
        }
    }
    Some(a.into_iter().map(|row| row[n..].to_vec()).collect())
}

pub fn transpose(matrix: &Matrix) -> Matrix {
    let cols = matrix.first().map_or(0, Vec::len);
    (0..cols).map(|j| matrix.iter().map(|row| row[j].clone()).collect()).collect()
}

// ---------------------------------------------------------------------------
// Conjugation

/// The model induced on the target space: the mechanism of target `T` is
/// `forward_T(F(inverse(t)))`.
///
/// The conjugate is built symbolically. When every variable on both sides
/// has a small finite domain, each mechanism is then tabulated over the
/// variables it actually depends on and recompiled into a compact
/// expression, which drops spurious parents the symbolic form may carry.
pub fn translate_model(model: &CausalModel, t: &Translation) -> Result<CausalModel, TranslateError> {
    t.check_source(model)?;
    let finite = t.source.iter().chain(&t.target).all(|v| v.domain.is_finite());
    let mut mechanisms = BTreeMap::new();
    for target in &t.target {
        let through_model = t.forward[&target.name].substitute(model.mechanisms());
        let symbolic = through_model.substitute(&t.inverse).simplify();
        let mech = if finite {
            compile_finite(&symbolic, &t.target, &target.domain)?
        } else {
            symbolic
        };
        mechanisms.insert(target.name.clone(), mech);
    }
    let out = CausalModel::new(t.target.clone(), mechanisms);
    if let Some(v) = out.validate().into_iter().next() {
        return Err(TranslateError::InvalidResult(v.to_string()));
    }
    Ok(out)
}

/// Tabulates `expr` over its essential variables and rebuilds it.
fn compile_finite(expr: &Expr, vars: &[Variable], domain: &ValueDomain) -> Result<Expr, TranslateError> {
    let candidates: Vec<Variable> = vars
        .iter()
        .filter(|v| expr.free_vars().contains(&v.name))
        .cloned()
        .collect();
    let Some(settings) = enumerate(&candidates) else {
        return Ok(expr.clone());
    };
    let mut table = Vec::with_capacity(settings.len());
    for s in &settings {
        let value = expr.evaluate(s).map_err(|error| TranslateError::Eval {
            variable: "conjugated mechanism".into(),
            setting: describe_assignment(s),
            error,
        })?;
        table.push((s.clone(), value));
    }
    let essential: Vec<Variable> = candidates
        .iter()
        .filter(|v| depends_on(&table, &v.name))
        .cloned()
        .collect();
    let mut reduced: BTreeMap<Vec<Rational>, Rational> = BTreeMap::new();
    for (s, value) in &table {
        let key = essential.iter().map(|v| s[&v.name].clone()).collect();
        reduced.insert(key, value.clone());
    }
    Ok(tabulated_expr(&essential, &reduced, domain))
}

fn depends_on(table: &[(Assignment, Rational)], name: &str) -> bool {
    let mut by_rest: BTreeMap<Vec<(&String, &Rational)>, &Rational> = BTreeMap::new();
    for (s, value) in table {
        let rest: Vec<(&String, &Rational)> = s.iter().filter(|(k, _)| k.as_str() != name).collect();
        if let Some(previous) = by_rest.insert(rest, value) {
            if previous != value {
                return true;
            }
        }
    }
    false
}

/// Expression for a table over `vars` (rows keyed by values in `vars`
/// order). Boolean tables on up to two inputs get their gate form; other
/// boolean tables become a disjunction of minterms; anything else becomes
/// a sum of `value * [row matches]`.
pub fn tabulated_expr(vars: &[Variable], table: &BTreeMap<Vec<Rational>, Rational>, domain: &ValueDomain) -> Expr {
    let one = rational::one();
    let zero = rational::zero();
    let values: BTreeSet<&Rational> = table.values().collect();
    if values.len() == 1 {
        return Expr::Const((*values.iter().next().unwrap()).clone());
    }
    let boolean_inputs = vars.iter().all(|v| v.domain == ValueDomain::Boolean);
    let boolean_output = table.values().all(rational::is_boolean) && *domain != ValueDomain::Real;
    if boolean_inputs && boolean_output {
        let at = |bits: &[i64]| &table[&bits.iter().map(|&b| rational::int(b)).collect::<Vec<_>>()];
        if vars.len() == 1 {
            let x = Expr::var(&vars[0].name);
            return if *at(&[1]) == one { x } else { Expr::not(x) };
        }
        if vars.len() == 2 {
            let xnor = Expr::xnor(Expr::var(&vars[0].name), Expr::var(&vars[1].name));
            let pattern: Vec<&Rational> = [[0, 0], [0, 1], [1, 0], [1, 1]].iter().map(|b| at(b)).collect();
            if pattern == [&one, &zero, &zero, &one] {
                return xnor;
            }
            if pattern == [&zero, &one, &one, &zero] {
                return Expr::not(xnor);
            }
        }
        let minterms: Vec<Expr> = table
            .iter()
            .filter(|(_, v)| **v == one)
            .map(|(row, _)| {
                Expr::And(
                    vars.iter()
                        .zip(row)
                        .map(|(v, b)| {
                            if *b == one {
                                Expr::var(&v.name)
                            } else {
                                Expr::not(Expr::var(&v.name))
                            }
                        })
                        .collect(),
                )
            })
            .collect();
        return Expr::Or(minterms);
    }
    let terms: Vec<Expr> = table
        .iter()
        .filter(|(_, v)| !v.is_zero())
        .map(|(row, value)| {
            let matches: Vec<Expr> = vars
                .iter()
                .zip(row)
                .map(|(v, x)| Expr::eq(Expr::var(&v.name), Expr::Const(x.clone())))
                .collect();
            Expr::Mul(vec![Expr::Const(value.clone()), Expr::And(matches)])
        })
        .collect();
    Expr::Add(terms)
}

// ---------------------------------------------------------------------------
// Pull-backs

/// Whether two mechanisms agree on every setting of the model's variables
/// they read (finite domains), or are syntactically equal after
/// simplification (otherwise).
fn same_mechanism(model: &CausalModel, a: &Expr, b: &Expr) -> bool {
    if a == b || a.simplify() == b.simplify() {
        return true;
    }
    let support: Vec<Variable> = model
        .variables()
        .iter()
        .filter(|v| a.free_vars().contains(&v.name) || b.free_vars().contains(&v.name))
        .cloned()
        .collect();
    match enumerate(&support) {
        Some(settings) => settings.iter().all(|s| a.evaluate(s).ok() == b.evaluate(s).ok()),
        None => false,
    }
}

/// The low-level interventional simulating `high` (an interventional on
/// the translated model) in `context`: conjugate the intervened translated
/// model back through the inverse and keep the mechanisms that changed.
pub fn pull_back(t: &Translation, high: &Interventional, context: &CausalModel) -> Result<Interventional, TranslateError> {
    pull_back_from(t, high, context, &translate_model(context, t)?)
}

/// [`pull_back`] given `translated = translate_model(context, t)`.
pub fn pull_back_from(
    t: &Translation,
    high: &Interventional,
    context: &CausalModel,
    translated: &CausalModel,
) -> Result<Interventional, TranslateError> {
    let intervened = high.apply(translated)?;
    let back = translate_model(&intervened, &t.inverted())?;
    let changed: Vec<(String, Expr)> = context
        .variables()
        .iter()
        .filter_map(|v| {
            let old = context.mechanism(&v.name)?;
            let new = back.mechanism(&v.name)?;
            (!same_mechanism(context, old, new)).then(|| (v.name.clone(), new.clone()))
        })
        .collect();
    if changed.is_empty() {
        return Ok(Interventional::null().with_label(format!("pull-back of {high}")));
    }
    Ok(Interventional::replace(changed).with_label(format!("pull-back of {high}")))
}

/// Pulls back each interventional in turn, each in the context left by the
/// previous ones, and composes the results.
pub fn pull_back_sequence(
    t: &Translation,
    highs: &[Interventional],
    context: &CausalModel,
) -> Result<Interventional, TranslateError> {
    let mut current = context.clone();
    let mut parts = Vec::new();
    for h in highs {
        let low = pull_back(t, h, &current)?;
        current = low.apply(&current)?;
        parts.push(low);
    }
    let label = highs.iter().map(|h| h.label.as_str()).collect::<Vec<_>>().join(" ; ");
    Ok(Interventional::compose(parts).with_label(format!("pull-back of {label}")))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FamilyMember {
    pub high: Interventional,
    pub low: Interventional,
}

/// Every hard intervention on the translated model's non-input variables
/// (all domain values), plus every composition of two such interventions
/// on distinct variables, with their pull-backs. Compositions on distinct
/// variables commute, so each unordered pair appears once.
pub fn intervention_family(t: &Translation, context: &CausalModel) -> Result<Vec<FamilyMember>, TranslateError> {
    let translated = translate_model(context, t)?;
    let inputs: BTreeSet<String> = translated.input_variables().into_iter().collect();
    let mut singles: Vec<(String, Rational)> = Vec::new();
    for v in translated.variables() {
        if inputs.contains(&v.name) {
            continue;
        }
        let Some(values) = v.domain.values() else {
            continue;
        };
        for value in values {
            singles.push((v.name.clone(), value));
        }
    }
    let mut highs: Vec<Vec<Interventional>> = singles
        .iter()
        .map(|(k, v)| vec![Interventional::hard([(k.clone(), v.clone())])])
        .collect();
    for (i, (k1, v1)) in singles.iter().enumerate() {
        for (k2, v2) in &singles[i + 1..] {
            if k1 != k2 {
                highs.push(vec![
                    Interventional::hard([(k1.clone(), v1.clone())]),
                    Interventional::hard([(k2.clone(), v2.clone())]),
                ]);
            }
        }
    }
    highs
        .into_iter()
        .map(|seq| {
            let low = pull_back_sequence(t, &seq, context)?;
            let high = if seq.len() == 1 {
                seq.into_iter().next().unwrap()
            } else {
                Interventional::compose(seq)
            };
            Ok(FamilyMember { high, low })
        })
        .collect()
}

/// `forward(run(context_low at x)) = run(translated_high at forward(x))`
/// for every given source input setting; returns the first input where
/// it fails.
pub fn check_pull_back(
    t: &Translation,
    context: &CausalModel,
    member: &FamilyMember,
    inputs: &[Assignment],
) -> Result<Option<Assignment>, TranslateError> {
    let translated = translate_model(context, t)?;
    let high_model = member.high.apply(&translated)?;
    let low_model = member.low.apply(context)?;
    let high_inputs = high_model.input_variables();
    for x in inputs {
        let low_run = low_model.run_with(&restrict_to_inputs(&low_model, x))?;
        let mapped = t.forward(&low_run)?;
        let hx: Assignment = translated_inputs(&translated, t, context, x)?
            .into_iter()
            .filter(|(k, _)| high_inputs.contains(k))
            .collect();
        let high_run = high_model.run_with(&hx)?;
        if mapped != high_run {
            return Ok(Some(x.clone()));
        }
    }
    Ok(None)
}

fn restrict_to_inputs(model: &CausalModel, x: &Assignment) -> Assignment {
    let inputs = model.input_variables();
    x.iter()
        .filter(|(k, _)| inputs.contains(k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

/// The translated model's input setting for source input `x`: the forward
/// image of the factual run, restricted to the translated inputs.
pub fn translated_inputs(
    translated: &CausalModel,
    t: &Translation,
    context: &CausalModel,
    x: &Assignment,
) -> Result<Assignment, TranslateError> {
    let run = context.run_with(&restrict_to_inputs(context, x))?;
    let image = t.forward(&run)?;
    let inputs = translated.input_variables();
    Ok(image.into_iter().filter(|(k, _)| inputs.contains(k)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, ratio};

    #[test]
    fn inverse_of_rotation_is_transpose() {
        // 3-4-5 rotation.
        let r = vec![vec![ratio(3, 5), ratio(-4, 5)], vec![ratio(4, 5), ratio(3, 5)]];
        assert_eq!(invert(&r).unwrap(), transpose(&r));
        let singular = vec![vec![int(1), int(2)], vec![int(2), int(4)]];
        assert!(invert(&singular).is_none());
    }

    #[test]
    fn tabulation_finds_gate_forms() {
        let b = |n: &str| Variable {
            name: n.into(),
            domain: ValueDomain::Boolean,
        };
        let vars = vec![b("P"), b("Q")];
        let table: BTreeMap<Vec<Rational>, Rational> = [
            (vec![int(0), int(0)], int(0)),
            (vec![int(0), int(1)], int(1)),
            (vec![int(1), int(0)], int(1)),
            (vec![int(1), int(1)], int(0)),
        ]
        .into();
        assert_eq!(
            tabulated_expr(&vars, &table, &ValueDomain::Boolean),
            Expr::not(Expr::xnor(Expr::var("P"), Expr::var("Q")))
        );
        let and: BTreeMap<Vec<Rational>, Rational> = table
            .keys()
            .map(|k| (k.clone(), if k == &vec![int(1), int(1)] { int(1) } else { int(0) }))
            .collect();
        let e = tabulated_expr(&vars, &and, &ValueDomain::Boolean);
        for (row, value) in &and {
            let env: Assignment = [("P".to_string(), row[0].clone()), ("Q".to_string(), row[1].clone())].into();
            assert_eq!(&e.evaluate(&env).unwrap(), value);
        }
    }

    #[test]
    fn non_boolean_tables_use_indicator_sums() {
        let vars = vec![Variable {
            name: "K".into(),
            domain: ValueDomain::finite([int(0), int(1), int(2)]),
        }];
        let table: BTreeMap<Vec<Rational>, Rational> =
            [(vec![int(0)], int(5)), (vec![int(1)], int(0)), (vec![int(2)], ratio(1, 2))].into();
        let e = tabulated_expr(&vars, &table, &ValueDomain::Real);
        for (row, value) in &table {
            let env: Assignment = [("K".to_string(), row[0].clone())].into();
            assert_eq!(&e.evaluate(&env).unwrap(), value);
        }
    }

    #[test]
    fn collision_is_reported_with_both_settings() {
        let b = |n: &str| Variable {
            name: n.into(),
            domain: ValueDomain::Boolean,
        };
        let t = Translation::new(
            vec![b("P"), b("Q")],
            vec![b("R"), b("S")],
            [("R".to_string(), Expr::var("P")), ("S".to_string(), Expr::var("P"))].into(),
            [("P".to_string(), Expr::var("R")), ("Q".to_string(), Expr::var("S"))].into(),
        )
        .unwrap();
        assert!(matches!(t.check_bijective(), Err(TranslateError::Collision { .. })));
    }

    #[test]
    fn stray_references_are_rejected() {
        let b = |n: &str| Variable {
            name: n.into(),
            domain: ValueDomain::Boolean,
        };
        let err = Translation::new(
            vec![b("P")],
            vec![b("R")],
            [("R".to_string(), Expr::var("R"))].into(),
            [("P".to_string(), Expr::var("R"))].into(),
        )
        .unwrap_err();
        assert!(matches!(err, TranslateError::StrayReference { side: "forward", .. }));
    }
}
