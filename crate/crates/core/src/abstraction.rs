//! Exact transformations and constructive abstractions between a low-level
//! and a high-level model, and their composition with a translation.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::expr::{Expr, Semantics};
use crate::intervene::{ApplyError, Interventional};
use crate::model::{describe_assignment, Assignment, CausalModel, Plan, RunError};
use crate::rational::{format_rational, Rational};
use crate::translate::{self, TranslateError, Translation};

// ---------------------------------------------------------------------------
// Alignments and settings maps

/// One high-level variable, the low-level variables that realize it, and
/// the component map from their values to its value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub high: String,
    pub low: Vec<String>,
    /// Expression over `low`.
    pub map: Expr,
}

/// A partition of (some of) the low-level variables into cells, one per
/// aligned high-level variable. Unassigned low-level variables are
/// forgotten.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Alignment {
    cells: Vec<Cell>,
}

impl Alignment {
    pub fn new(cells: Vec<Cell>) -> Self {
        Self { cells }
    }

    /// Singleton cells with identity maps for every variable of `model`.
    pub fn identity(model: &CausalModel) -> Self {
        Self::new(
            model
                .variables()
                .iter()
                .map(|v| Cell {
                    high: v.name.clone(),
                    low: vec![v.name.clone()],
                    map: Expr::var(&v.name),
                })
                .collect(),
        )
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, high: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.high == high)
    }

    pub fn high_variables(&self) -> Vec<String> {
        self.cells.iter().map(|c| c.high.clone()).collect()
    }

    /// Structural problems: overlapping cells, unknown variables, maps
    /// reading outside their cell. Surjectivity is checked during
    /// verification, over realized values.
    pub fn problems(&self, low: &CausalModel, high: &CausalModel) -> Vec<String> {
        let mut out = Vec::new();
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        let mut highs = BTreeSet::new();
        for cell in &self.cells {
            if !highs.insert(cell.high.as_str()) {
                out.push(format!("high-level variable `{}` has two cells", cell.high));
            }
            if !high.has_variable(&cell.high) {
                out.push(format!("cell for `{}`, which the high-level model lacks", cell.high));
            }
            if cell.low.is_empty() {
                out.push(format!("cell for `{}` is empty", cell.high));
            }
            for l in &cell.low {
                if !low.has_variable(l) {
                    out.push(format!("cell for `{}` names unknown low-level variable `{l}`", cell.high));
                }
                if let Some(other) = owner.insert(l, &cell.high) {
                    out.push(format!("`{l}` belongs to the cells of both `{other}` and `{}`", cell.high));
                }
            }
            for v in cell.map.free_vars() {
                if !cell.low.contains(&v) {
                    out.push(format!("map for `{}` reads `{v}`, outside its cell", cell.high));
                }
            }
        }
        out
    }

    /// The component map of one cell, or why it is undefined there.
    pub fn apply_cell(&self, cell: &Cell, low: &Assignment, sem: &Semantics) -> Result<Rational, String> {
        cell.map.evaluate_with(low, sem).map_err(|e| e.to_string())
    }
}

/// A possibly partial high-level setting.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct PartialAssignment {
    #[serde(serialize_with = "ser_assignment")]
    pub values: Assignment,
    /// Variables where the map is undefined, with the reason.
    pub undefined: BTreeMap<String, String>,
}

/// A map from low-level settings to (partial) high-level settings.
pub trait SettingsMap: Sync {
    /// The high-level variables the map is meant to cover.
    fn image(&self) -> Vec<String>;
    fn map(&self, low: &Assignment, sem: &Semantics) -> PartialAssignment;
}

impl SettingsMap for Alignment {
    fn image(&self) -> Vec<String> {
        self.high_variables()
    }

    fn map(&self, low: &Assignment, sem: &Semantics) -> PartialAssignment {
        let mut out = PartialAssignment::default();
        for cell in &self.cells {
            match self.apply_cell(cell, low, sem) {
                Ok(v) => {
                    out.values.insert(cell.high.clone(), v);
                }
                Err(why) => {
                    out.undefined.insert(cell.high.clone(), why);
                }
            }
        }
        out
    }
}

impl SettingsMap for Translation {
    fn image(&self) -> Vec<String> {
        self.target().iter().map(|v| v.name.clone()).collect()
    }

    fn map(&self, low: &Assignment, _sem: &Semantics) -> PartialAssignment {
        match self.forward(low) {
            Ok(values) => PartialAssignment {
                values,
                undefined: BTreeMap::new(),
            },
            Err(e) => PartialAssignment {
                values: Assignment::new(),
                undefined: self.image().into_iter().map(|k| (k, e.to_string())).collect(),
            },
        }
    }
}

/// Copies values under new names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Renaming {
    pub names: BTreeMap<String, String>,
}

impl Renaming {
    /// Pairs variables by declaration position.
    pub fn positional(low: &CausalModel, high: &CausalModel) -> Self {
        Self {
            names: low
                .variable_names()
                .into_iter()
                .zip(high.variable_names())
                .collect(),
        }
    }
}

impl SettingsMap for Renaming {
    fn image(&self) -> Vec<String> {
        self.names.values().cloned().collect()
    }

    fn map(&self, low: &Assignment, _sem: &Semantics) -> PartialAssignment {
        let mut out = PartialAssignment::default();
        for (from, to) in &self.names {
            match low.get(from) {
                Some(v) => {
                    out.values.insert(to.clone(), v.clone());
                }
                None => {
                    out.undefined.insert(to.clone(), format!("`{from}` unset"));
                }
            }
        }
        out
    }
}

/// The alignment's settings map under exact semantics.
pub fn tau_of(alignment: &Alignment, low: &Assignment) -> PartialAssignment {
    alignment.map(low, &Semantics::Exact)
}

// ---------------------------------------------------------------------------
// Reports

pub(crate) fn ser_assignment<S: Serializer>(a: &Assignment, s: S) -> Result<S::Ok, S::Error> {
    let text: BTreeMap<&String, String> = a.iter().map(|(k, v)| (k, format_rational(v))).collect();
    text.serialize(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WitnessKind {
    /// A supplied interventional (exact-transformation check).
    Intervention,
    Factual,
    Interchange,
    /// A high-level value never realized under the component map.
    Surjectivity,
    /// A pulled-back interventional that fails extensionally.
    PullBack,
}

/// One failed commuting check, with enough data to re-run it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub kind: WitnessKind,
    pub description: String,
    pub low_interventional: Interventional,
    pub high_interventional: Interventional,
    #[serde(serialize_with = "ser_assignment")]
    pub low_result: Assignment,
    pub translated_result: PartialAssignment,
    #[serde(serialize_with = "ser_assignment")]
    pub high_result: Assignment,
    /// High-level variables where the two sides disagree.
    pub mismatched: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PullBackRecord {
    pub high: Interventional,
    pub low: Interventional,
    pub verified: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerificationReport {
    pub verdict: Verdict,
    /// Number of commuting checks performed.
    pub checked: usize,
    /// Number of failed checks; at most `max_witnesses` of them are listed.
    pub failed: usize,
    pub witnesses: Vec<Witness>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub pulled_back: Vec<PullBackRecord>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    fn from_outcomes(checked: usize, outcomes: impl IntoIterator<Item = Witness>, max_witnesses: usize) -> Self {
        let mut failed = 0;
        let mut witnesses = Vec::new();
        for w in outcomes {
            failed += 1;
            if witnesses.len() < max_witnesses {
                witnesses.push(w);
            }
        }
        Self {
            verdict: if failed == 0 { Verdict::Pass } else { Verdict::Fail },
            checked,
            failed,
            witnesses,
            pulled_back: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AbstractionError {
    #[error("omega is undefined on interventional `{0}`")]
    OmegaUndefined(String),
    #[error("invalid alignment: {}", .0.join("; "))]
    InvalidAlignment(Vec<String>),
    #[error("input space is empty")]
    EmptyInputSpace,
    #[error("input {input} must assign exactly the parentless variables {expected:?}")]
    BadInput { input: String, expected: Vec<String> },
    #[error("high-level input `{variable}` is not determined at input {input}: {reason}")]
    InputNotMapped {
        variable: String,
        input: String,
        reason: String,
    },
    #[error("interchange target `{0}` is not an aligned, non-input high-level variable")]
    BadTarget(String),
    #[error("recursion depth must be between 1 and {}", crate::intervene::MAX_INTERCHANGE_DEPTH)]
    BadDepth,
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Apply(#[from] ApplyError),
    #[error(transparent)]
    Translate(#[from] TranslateError),
}

/// Runs `model` under `i`, as plain overrides when `i` is hard.
pub fn run_interventional(model: &CausalModel, i: &Interventional, sem: &Semantics) -> Result<Assignment, AbstractionError> {
    if let Some(hard) = i.as_hard() {
        return Ok(model.plan()?.run(&hard, sem)?);
    }
    Ok(i.apply(model)?.plan()?.run(&Assignment::new(), sem)?)
}

fn compare(image: &[String], translated: &PartialAssignment, high: &Assignment) -> Vec<String> {
    image
        .iter()
        .filter(|k| match (translated.values.get(*k), high.get(*k)) {
            (Some(a), Some(b)) => a != b,
            _ => true,
        })
        .cloned()
        .collect()
}

impl Witness {
    /// Re-executes the witness; true if it still fails. Surjectivity
    /// witnesses summarize a whole enumeration and are not re-executable,
    /// so they always report true.
    pub fn recheck(&self, low: &CausalModel, high: &CausalModel, tau: &dyn SettingsMap, sem: &Semantics) -> bool {
        if self.kind == WitnessKind::Surjectivity {
            return true;
        }
        let Ok(low_run) = run_interventional(low, &self.low_interventional, sem) else {
            return true;
        };
        let translated = tau.map(&low_run, sem);
        let Ok(high_run) = run_interventional(high, &self.high_interventional, &Semantics::Exact) else {
            return true;
        };
        !compare(&self.mismatched, &translated, &high_run).is_empty()
            || !compare(&tau.image(), &translated, &high_run).is_empty()
    }
}

// ---------------------------------------------------------------------------
// Exact transformation

/// Checks `tau(Run(low_i)) = Run(high_omega(i))` for the null interventional
/// and for every supplied `i`, on every variable of `tau`'s image. The null
/// check is always run but not counted.
pub fn check_exact_transformation(
    low: &CausalModel,
    high: &CausalModel,
    tau: &dyn SettingsMap,
    omega: &(dyn Fn(&Interventional) -> Option<Interventional> + Sync),
    interventionals: &[Interventional],
    sem: &Semantics,
) -> Result<VerificationReport, AbstractionError> {
    let mut all = vec![Interventional::null()];
    all.extend(interventionals.iter().cloned());
    let paired: Vec<(Interventional, Interventional)> = all
        .into_iter()
        .map(|i| {
            let h = omega(&i).ok_or_else(|| AbstractionError::OmegaUndefined(i.label.clone()))?;
            Ok((i, h))
        })
        .collect::<Result<_, AbstractionError>>()?;
    let image = tau.image();
    let outcomes: Vec<Option<Witness>> = paired
        .par_iter()
        .map(|(i, h)| {
            let low_run = run_interventional(low, i, sem)?;
            let translated = tau.map(&low_run, sem);
            let high_run = run_interventional(high, h, &Semantics::Exact)?;
            let mismatched = compare(&image, &translated, &high_run);
            Ok((!mismatched.is_empty()).then(|| Witness {
                kind: WitnessKind::Intervention,
                description: format!("interventional {}", i.label),
                low_interventional: i.clone(),
                high_interventional: h.clone(),
                low_result: low_run,
                translated_result: translated,
                high_result: high_run,
                mismatched,
            }))
        })
        .collect::<Result<_, AbstractionError>>()?;
    Ok(VerificationReport::from_outcomes(
        interventionals.len(),
        outcomes.into_iter().flatten(),
        usize::MAX,
    ))
}

// ---------------------------------------------------------------------------
// Constructive abstraction

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractionOptions {
    /// Recursive interchange depth, 1 to 3.
    pub depth: usize,
    /// High-level interchange targets; defaults to the aligned variables
    /// that are neither inputs nor sinks of the high-level model.
    pub targets: Option<Vec<String>>,
    /// Semantics for low-level runs and component maps. High-level runs
    /// are always exact.
    pub semantics: Semantics,
    pub max_witnesses: usize,
}

impl Default for AbstractionOptions {
    fn default() -> Self {
        Self {
            depth: crate::intervene::MAX_INTERCHANGE_DEPTH,
            targets: None,
            semantics: Semantics::Exact,
            max_witnesses: 32,
        }
    }
}

/// A low-level hard intervention on the union of some cells.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CellPatch {
    pub targets: Vec<String>,
    pub values: Assignment,
}

struct Setup<'a> {
    low_plan: Plan<'a>,
    high_plan: Plan<'a>,
    alignment: &'a Alignment,
    sem: &'a Semantics,
    image: Vec<String>,
    high_inputs: Vec<String>,
}

struct Factual {
    low_run: Assignment,
    high_input: Assignment,
}

struct Check {
    base: usize,
    subset: usize,
    patch: Assignment,
    depth: usize,
    source: String,
}

struct CheckOutcome {
    low_run: Assignment,
    translated: PartialAssignment,
    witness: Option<Witness>,
}

impl Setup<'_> {
    fn factual(&self, x: &Assignment) -> Result<(Factual, CheckOutcome), AbstractionError> {
        let low_run = self.low_plan.run(x, self.sem)?;
        let translated = self.alignment.map(&low_run, self.sem);
        let mut high_input = Assignment::new();
        for h in &self.high_inputs {
            match translated.values.get(h) {
                Some(v) => {
                    high_input.insert(h.clone(), v.clone());
                }
                None => {
                    return Err(AbstractionError::InputNotMapped {
                        variable: h.clone(),
                        input: describe_assignment(x),
                        reason: translated
                            .undefined
                            .get(h)
                            .cloned()
                            .unwrap_or_else(|| "no cell".into()),
                    })
                }
            }
        }
        let high_run = self.high_plan.run(&high_input, &Semantics::Exact)?;
        let mismatched = compare(&self.image, &translated, &high_run);
        let witness = (!mismatched.is_empty()).then(|| Witness {
            kind: WitnessKind::Factual,
            description: format!("factual run at {}", describe_assignment(x)),
            low_interventional: Interventional::hard(x.clone()),
            high_interventional: Interventional::hard(high_input.clone()),
            low_result: low_run.clone(),
            translated_result: translated.clone(),
            high_result: high_run,
            mismatched,
        });
        Ok((
            Factual {
                low_run: low_run.clone(),
                high_input,
            },
            CheckOutcome {
                low_run,
                translated,
                witness,
            },
        ))
    }

    fn interchange(
        &self,
        inputs: &[Assignment],
        factual: &[Factual],
        subsets: &[Vec<&Cell>],
        check: &Check,
    ) -> CheckOutcome {
        let base = &inputs[check.base];
        let cells = &subsets[check.subset];
        let mut low_overrides = base.clone();
        low_overrides.extend(check.patch.clone());
        let low_i = || Interventional::hard(base.clone()).then(&Interventional::hard(check.patch.clone()));

        let mut high_overrides = factual[check.base].high_input.clone();
        let mut undefined = BTreeMap::new();
        for cell in cells {
            match self.alignment.apply_cell(cell, &check.patch, self.sem) {
                Ok(v) => {
                    high_overrides.insert(cell.high.clone(), v);
                }
                Err(why) => {
                    undefined.insert(cell.high.clone(), why);
                }
            }
        }
        let high_patch: Assignment = cells
            .iter()
            .filter_map(|c| high_overrides.get(&c.high).map(|v| (c.high.clone(), v.clone())))
            .collect();
        let high_i = || {
            Interventional::hard(factual[check.base].high_input.clone()).then(&Interventional::hard(high_patch.clone()))
        };
        // Witness details are only rendered for failing checks.
        let description = || {
            let targets: Vec<&str> = cells.iter().map(|c| c.high.as_str()).collect();
            format!(
                "interchange at base {} on [{}] with patch {} (depth {}, source {})",
                describe_assignment(base),
                targets.join(", "),
                describe_assignment(&check.patch),
                check.depth,
                check.source
            )
        };

        let low_run = match self.low_plan.run(&low_overrides, self.sem) {
            Ok(r) => r,
            Err(e) => {
                let mut translated = PartialAssignment::default();
                translated.undefined.insert("*".into(), e.to_string());
                return CheckOutcome {
                    low_run: Assignment::new(),
                    translated: translated.clone(),
                    witness: Some(Witness {
                        kind: WitnessKind::Interchange,
                        description: description(),
                        low_interventional: low_i(),
                        high_interventional: high_i(),
                        low_result: Assignment::new(),
                        translated_result: translated,
                        high_result: Assignment::new(),
                        mismatched: self.image.clone(),
                    }),
                };
            }
        };
        let mut translated = self.alignment.map(&low_run, self.sem);
        translated.undefined.extend(undefined.clone());
        let high_run = if undefined.is_empty() {
            self.high_plan.run(&high_overrides, &Semantics::Exact).unwrap_or_default()
        } else {
            Assignment::new()
        };
        let mismatched = compare(&self.image, &translated, &high_run);
        let witness = (!mismatched.is_empty()).then(|| Witness {
            kind: WitnessKind::Interchange,
            description: description(),
            low_interventional: low_i(),
            high_interventional: high_i(),
            low_result: low_run.clone(),
            translated_result: translated.clone(),
            high_result: high_run,
            mismatched,
        });
        CheckOutcome {
            low_run,
            translated,
            witness,
        }
    }
}

/// Nonempty subsets of `0..n`, by size, then lexicographically.
fn subsets(n: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = (1u32..(1 << n))
        .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
        .collect();
    out.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
    out
}

fn project(run: &Assignment, vars: &[String]) -> Assignment {
    vars.iter().filter_map(|v| run.get(v).map(|x| (v.clone(), x.clone()))).collect()
}

/// Checks that `high` is a constructive abstraction of `low` under
/// `alignment`, over the given low-level input settings.
///
/// Enumerates, in this order: the factual run at each input; every
/// interchange with base and source in the input space and targets any
/// nonempty subset of the target cells; then recursive interchanges whose
/// source is itself an interchange run, up to `options.depth`. Recursive
/// levels only add patches not already checked, so the count is
/// `inputs + inputs^2 * subsets + new recursive patches * inputs`.
/// Finally every finite-domain aligned variable must take each of its
/// values somewhere in the realized runs.
pub fn check_constructive_abstraction(
    low: &CausalModel,
    high: &CausalModel,
    alignment: &Alignment,
    inputs: &[Assignment],
    options: &AbstractionOptions,
) -> Result<VerificationReport, AbstractionError> {
    constructive(low, high, alignment, inputs, options).map(|(report, _)| report)
}

fn constructive(
    low: &CausalModel,
    high: &CausalModel,
    alignment: &Alignment,
    inputs: &[Assignment],
    options: &AbstractionOptions,
) -> Result<(VerificationReport, Vec<CellPatch>), AbstractionError> {
    let problems = alignment.problems(low, high);
    if !problems.is_empty() {
        return Err(AbstractionError::InvalidAlignment(problems));
    }
    if inputs.is_empty() {
        return Err(AbstractionError::EmptyInputSpace);
    }
    if options.depth == 0 || options.depth > crate::intervene::MAX_INTERCHANGE_DEPTH {
        return Err(AbstractionError::BadDepth);
    }
    let mut expected = low.input_variables();
    expected.sort();
    for x in inputs {
        if x.keys().cloned().collect::<Vec<_>>() != expected {
            return Err(AbstractionError::BadInput {
                input: describe_assignment(x),
                expected,
            });
        }
    }
    let high_inputs = high.input_variables();
    let high_sinks = high.sink_variables();
    let target_names: Vec<String> = match &options.targets {
        Some(t) => {
            for name in t {
                if alignment.cell(name).is_none() || high_inputs.contains(name) {
                    return Err(AbstractionError::BadTarget(name.clone()));
                }
            }
            t.clone()
        }
        None => high
            .variable_names()
            .into_iter()
            .filter(|v| alignment.cell(v).is_some() && !high_inputs.contains(v) && !high_sinks.contains(v))
            .collect(),
    };
    let target_cells: Vec<&Cell> = target_names.iter().map(|n| alignment.cell(n).unwrap()).collect();
    let cell_subsets: Vec<Vec<&Cell>> = subsets(target_cells.len())
        .into_iter()
        .map(|idx| idx.into_iter().map(|i| target_cells[i]).collect())
        .collect();
    let subset_vars: Vec<Vec<String>> = cell_subsets
        .iter()
        .map(|cells| cells.iter().flat_map(|c| c.low.iter().cloned()).collect())
        .collect();

    let setup = Setup {
        low_plan: low.plan()?,
        high_plan: high.plan()?,
        alignment,
        sem: &options.semantics,
        image: alignment.high_variables(),
        high_inputs,
    };

    let factual_results: Vec<(Factual, CheckOutcome)> = inputs
        .par_iter()
        .map(|x| setup.factual(x))
        .collect::<Result<_, _>>()?;
    let (factual, factual_outcomes): (Vec<Factual>, Vec<CheckOutcome>) = factual_results.into_iter().unzip();

    let mut checked = inputs.len();
    let mut all_outcomes: Vec<CheckOutcome> = factual_outcomes;
    let mut seen: Vec<BTreeSet<Assignment>> = vec![BTreeSet::new(); cell_subsets.len()];

    // Depth 1: every (base, subset, source) triple.
    let mut level: Vec<Check> = Vec::new();
    for base in 0..inputs.len() {
        for (subset, vars) in subset_vars.iter().enumerate() {
            for (s, source) in inputs.iter().enumerate() {
                let patch = project(&factual[s].low_run, vars);
                seen[subset].insert(patch.clone());
                level.push(Check {
                    base,
                    subset,
                    patch,
                    depth: 1,
                    source: describe_assignment(source),
                });
            }
        }
    }
    for depth in 1..=options.depth {
        if level.is_empty() {
            break;
        }
        checked += level.len();
        let outcomes: Vec<CheckOutcome> = level
            .par_iter()
            .map(|c| setup.interchange(inputs, &factual, &cell_subsets, c))
            .collect();
        // Patches realized by this level's runs seed the next level.
        let mut next = Vec::new();
        if depth < options.depth {
            for (subset, vars) in subset_vars.iter().enumerate() {
                for (c, outcome) in level.iter().zip(&outcomes) {
                    if outcome.low_run.is_empty() {
                        continue;
                    }
                    let patch = project(&outcome.low_run, vars);
                    if seen[subset].insert(patch.clone()) {
                        for base in 0..inputs.len() {
                            next.push(Check {
                                base,
                                subset,
                                patch: patch.clone(),
                                depth: depth + 1,
                                source: format!("depth-{} interchange {}", c.depth, c.source),
                            });
                        }
                    }
                }
            }
        }
        all_outcomes.extend(outcomes);
        level = next;
    }

    // Surjectivity over realized values.
    let mut realized: BTreeMap<&str, BTreeSet<Rational>> = BTreeMap::new();
    for outcome in &all_outcomes {
        for (k, v) in &outcome.translated.values {
            realized.entry(k.as_str()).or_default().insert(v.clone());
        }
    }
    let mut surjectivity = Vec::new();
    for cell in alignment.cells() {
        let Some(values) = high.domain(&cell.high).and_then(|d| d.values()) else {
            continue;
        };
        for value in values {
            if !realized.get(cell.high.as_str()).is_some_and(|r| r.contains(&value)) {
                surjectivity.push(Witness {
                    kind: WitnessKind::Surjectivity,
                    description: format!(
                        "`{}` = {} is never realized by its component map",
                        cell.high,
                        format_rational(&value)
                    ),
                    low_interventional: Interventional::null(),
                    high_interventional: Interventional::null(),
                    low_result: Assignment::new(),
                    translated_result: PartialAssignment::default(),
                    high_result: Assignment::new(),
                    mismatched: vec![cell.high.clone()],
                });
            }
        }
    }

    let patches: Vec<CellPatch> = seen
        .iter()
        .enumerate()
        .flat_map(|(subset, set)| {
            let targets: Vec<String> = cell_subsets[subset].iter().map(|c| c.high.clone()).collect();
            set.iter().map(move |values| CellPatch {
                targets: targets.clone(),
                values: values.clone(),
            })
        })
        .collect();
    let witnesses = all_outcomes
        .into_iter()
        .filter_map(|o| o.witness)
        .chain(surjectivity);
    Ok((
        VerificationReport::from_outcomes(checked, witnesses, options.max_witnesses),
        patches,
    ))
}

// ---------------------------------------------------------------------------
// Abstraction under translation

/// Translates `low` by `t`, then checks that `high` is a constructive
/// abstraction of the translated model. Every distinct cell patch used is
/// also pulled back to an interventional on `low` and verified
/// extensionally over the input space; the pull-backs are listed in the
/// report.
pub fn check_abstraction_under_translation(
    low: &CausalModel,
    high: &CausalModel,
    t: &Translation,
    alignment: &Alignment,
    inputs: &[Assignment],
    options: &AbstractionOptions,
) -> Result<VerificationReport, AbstractionError> {
    let runs: Vec<Assignment> = inputs.iter().map(|x| low.run_with(x)).collect::<Result<_, _>>()?;
    t.check_round_trip(&runs)?;
    t.check_bijective()?;
    let translated = translate::translate_model(low, t)?;
    let translated_inputs: Vec<Assignment> = inputs
        .iter()
        .map(|x| translate::translated_inputs(&translated, t, low, x))
        .collect::<Result<_, _>>()?;
    let (mut report, patches) = constructive(&translated, high, alignment, &translated_inputs, options)?;

    let records: Vec<(PullBackRecord, Option<Witness>)> = patches
        .par_iter()
        .map(|patch| {
            let high_i = Interventional::hard(patch.values.clone())
                .with_label(format!("patch [{}] {}", patch.targets.join(", "), describe_assignment(&patch.values)));
            let low_i = translate::pull_back_from(t, &high_i, low, &translated)?;
            let failure = verify_pull_back(low, &translated, t, &high_i, &low_i, inputs)?;
            let witness = failure.map(|(x, low_run, mapped, high_run)| {
                let mismatched = compare(&high_run.keys().cloned().collect::<Vec<_>>(), &mapped, &high_run);
                Witness {
                    kind: WitnessKind::PullBack,
                    description: format!("pull-back of {} disagrees at {}", high_i.label, describe_assignment(&x)),
                    low_interventional: Interventional::hard(x.clone()).then(&low_i),
                    high_interventional: high_i.clone(),
                    low_result: low_run,
                    translated_result: mapped,
                    high_result: high_run,
                    mismatched,
                }
            });
            Ok((
                PullBackRecord {
                    high: high_i,
                    low: low_i,
                    verified: witness.is_none(),
                },
                witness,
            ))
        })
        .collect::<Result<_, AbstractionError>>()?;
    for (record, witness) in records {
        if let Some(w) = witness {
            report.failed += 1;
            report.verdict = Verdict::Fail;
            if report.witnesses.len() < options.max_witnesses {
                report.witnesses.push(w);
            }
        }
        report.pulled_back.push(record);
    }
    Ok(report)
}

/// Checks a translation against a high-level model: `translate_model(low,
/// t)` must agree with `high` on every input under the null intervention
/// and every member of `t`'s intervention family, and each member's
/// pull-back must be extensionally correct. Each member counts once per
/// input; the null checks are run but not counted.
pub fn check_translation(
    low: &CausalModel,
    high: &CausalModel,
    t: &Translation,
    inputs: &[Assignment],
) -> Result<VerificationReport, AbstractionError> {
    if inputs.is_empty() {
        return Err(AbstractionError::EmptyInputSpace);
    }
    let translated = translate::translate_model(low, t)?;
    let family = translate::intervention_family(t, low)?;
    let mut members = vec![translate::FamilyMember {
        high: Interventional::null(),
        low: Interventional::null(),
    }];
    members.extend(family.iter().cloned());
    let outcomes: Vec<(Option<PullBackRecord>, Vec<Witness>)> = members
        .par_iter()
        .map(|m| {
            let mut witnesses = Vec::new();
            let ours = m.high.apply(&translated)?;
            let theirs = m.high.apply(high)?;
            let (ours_plan, theirs_plan) = (ours.plan()?, theirs.plan()?);
            let theirs_inputs = theirs.input_variables();
            for x in inputs {
                let hx: Assignment = translate::translated_inputs(&translated, t, low, x)?
                    .into_iter()
                    .filter(|(k, _)| theirs_inputs.contains(k))
                    .collect();
                let a = ours_plan.run(&hx, &Semantics::Exact)?;
                let b = theirs_plan.run(&hx, &Semantics::Exact)?;
                let mismatched: Vec<String> = b.keys().filter(|k| a.get(*k) != b.get(*k)).cloned().collect();
                if !mismatched.is_empty() {
                    witnesses.push(Witness {
                        kind: WitnessKind::Intervention,
                        description: format!("translated model and high-level model differ under {} at {}", m.high.label, describe_assignment(x)),
                        low_interventional: Interventional::hard(x.clone()).then(&m.low),
                        high_interventional: m.high.clone(),
                        low_result: x.clone(),
                        translated_result: PartialAssignment {
                            values: a,
                            undefined: BTreeMap::new(),
                        },
                        high_result: b,
                        mismatched,
                    });
                }
            }
            if m.high.is_null() {
                return Ok((None, witnesses));
            }
            let failure = verify_pull_back(low, &translated, t, &m.high, &m.low, inputs)?;
            let verified = failure.is_none();
            if let Some((x, low_run, mapped, high_run)) = failure {
                let mismatched = compare(&high_run.keys().cloned().collect::<Vec<_>>(), &mapped, &high_run);
                witnesses.push(Witness {
                    kind: WitnessKind::PullBack,
                    description: format!("pull-back of {} disagrees at {}", m.high.label, describe_assignment(&x)),
                    low_interventional: Interventional::hard(x).then(&m.low),
                    high_interventional: m.high.clone(),
                    low_result: low_run,
                    translated_result: mapped,
                    high_result: high_run,
                    mismatched,
                });
            }
            let record = PullBackRecord {
                high: m.high.clone(),
                low: m.low.clone(),
                verified,
            };
            Ok((Some(record), witnesses))
        })
        .collect::<Result<_, AbstractionError>>()?;
    let mut report = VerificationReport::from_outcomes(
        family.len() * inputs.len(),
        outcomes.iter().flat_map(|(_, w)| w.iter().cloned()),
        AbstractionOptions::default().max_witnesses,
    );
    report.pulled_back = outcomes.into_iter().filter_map(|(r, _)| r).collect();
    Ok(report)
}

type PullBackFailure = (Assignment, Assignment, PartialAssignment, Assignment);

fn verify_pull_back(
    low: &CausalModel,
    translated: &CausalModel,
    t: &Translation,
    high_i: &Interventional,
    low_i: &Interventional,
    inputs: &[Assignment],
) -> Result<Option<PullBackFailure>, AbstractionError> {
    let low_model = low_i.apply(low)?;
    let low_plan = low_model.plan()?;
    let high_plan = translated.plan()?;
    let patched = high_i.targets();
    let low_targets = low_i.targets();
    let high_patch = high_i.as_hard().unwrap_or_default();
    for x in inputs {
        let low_x: Assignment = x.iter().filter(|(k, _)| !low_targets.contains(*k)).map(|(k, v)| (k.clone(), v.clone())).collect();
        let low_run = low_plan.run(&low_x, &Semantics::Exact)?;
        let mapped = t.forward(&low_run)?;
        let mut high_x: Assignment = translate::translated_inputs(translated, t, low, x)?
            .into_iter()
            .filter(|(k, _)| !patched.contains(k))
            .collect();
        high_x.extend(high_patch.clone());
        let high_run = high_plan.run(&high_x, &Semantics::Exact)?;
        if mapped != high_run {
            let partial = PartialAssignment {
                values: mapped,
                undefined: BTreeMap::new(),
            };
            return Ok(Some((x.clone(), low_run, partial, high_run)));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{all_boolean_inputs, ValueDomain};
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

    #[test]
    fn subsets_are_ordered_by_size() {
        assert_eq!(subsets(2), vec![vec![0], vec![1], vec![0, 1]]);
        assert_eq!(subsets(3).len(), 7);
    }

    #[test]
    fn identity_tau_is_identity() {
        let m = xnor_circuit();
        let run = m.run().unwrap();
        let tau = tau_of(&Alignment::identity(&m), &run);
        assert_eq!(tau.values, run);
        assert!(tau.undefined.is_empty());
    }

    #[test]
    fn model_abstracts_itself() {
        let m = xnor_circuit();
        let inputs = all_boolean_inputs(&m);
        let report =
            check_constructive_abstraction(&m, &m, &Alignment::identity(&m), &inputs, &AbstractionOptions::default())
                .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.checked, 16 + 16 * 16 * 3);
    }

    #[test]
    fn wrong_high_model_fails_with_rechecking_witnesses() {
        let m = xnor_circuit();
        let wrong = m.with_mechanism("C", Expr::Or(vec![Expr::var("B1"), Expr::var("B2")]));
        let inputs = all_boolean_inputs(&m);
        let alignment = Alignment::identity(&m);
        let report =
            check_constructive_abstraction(&m, &wrong, &alignment, &inputs, &AbstractionOptions::default()).unwrap();
        assert!(!report.passed());
        assert!(!report.witnesses.is_empty());
        for w in &report.witnesses {
            assert!(w.recheck(&m, &wrong, &alignment, &Semantics::Exact), "{w:?}");
        }
    }

    #[test]
    fn overlapping_cells_are_rejected() {
        let m = xnor_circuit();
        let mut cells = Alignment::identity(&m).cells().to_vec();
        cells[4].low.push("A1".into());
        let err = check_constructive_abstraction(
            &m,
            &m,
            &Alignment::new(cells),
            &all_boolean_inputs(&m),
            &AbstractionOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, AbstractionError::InvalidAlignment(_)));
    }

    #[test]
    fn unrealized_value_fails_surjectivity() {
        let m = xnor_circuit();
        let inputs: Vec<Assignment> = all_boolean_inputs(&m)
            .into_iter()
            .filter(|x| x["A1"] == x["A2"] && x["A3"] == x["A4"])
            .collect();
        let options = AbstractionOptions {
            targets: Some(vec![]),
            ..AbstractionOptions::default()
        };
        let report = check_constructive_abstraction(&m, &m, &Alignment::identity(&m), &inputs, &options).unwrap();
        assert!(!report.passed());
        assert!(report.witnesses.iter().all(|w| w.kind == WitnessKind::Surjectivity));
        assert!(report.witnesses.iter().any(|w| w.description.contains("`B1` = 0")));
    }

    #[test]
    fn exact_transformation_counts_supplied_interventionals() {
        let m = xnor_circuit();
        let id = Alignment::identity(&m);
        let omega = |i: &Interventional| Some(i.clone());
        let empty = check_exact_transformation(&m, &m, &id, &omega, &[], &Semantics::Exact).unwrap();
        assert!(empty.passed());
        assert_eq!(empty.checked, 0);
        let i = Interventional::hard([("B1".to_string(), int(0))]);
        let none = |_: &Interventional| None;
        assert_eq!(
            check_exact_transformation(&m, &m, &id, &none, &[i], &Semantics::Exact),
            Err(AbstractionError::OmegaUndefined("null".into()))
        );
    }

    #[test]
    fn recarved_circuit_translates_to_the_circuit() {
        let (star, m) = (crate::fixtures::circuit_m_star(), crate::fixtures::circuit_m());
        let inputs = all_boolean_inputs(&star);
        let t = crate::fixtures::translation_m_star_to_m();
        let report = check_translation(&star, &m, &t, &inputs).unwrap();
        assert!(report.passed(), "{:?}", report.witnesses.first());
        assert_eq!(report.pulled_back.len(), 18);
        assert_eq!(report.checked, 18 * 16);
        let renamed = crate::translate::Translation::new(
            star.variables().to_vec(),
            m.variables().to_vec(),
            star.variable_names().into_iter().zip(m.variable_names()).map(|(a, b)| (b, Expr::var(a))).collect(),
            star.variable_names().into_iter().zip(m.variable_names()).map(|(a, b)| (a, Expr::var(b))).collect(),
        )
        .unwrap();
        assert!(!check_translation(&star, &m, &renamed, &inputs).unwrap().passed());
    }
}
