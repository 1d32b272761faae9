//! Representation audits for one aligned vehicle: does its value track a
//! property of the inputs, is it consumed the way the high-level model
//! says, and can a wrong value be planted and coherently consumed.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::abstraction::{ser_assignment, Alignment, Cell, PartialAssignment, SettingsMap, Verdict};
use crate::expr::{Expr, Semantics};
use crate::model::{Assignment, CausalModel, Plan, RunError};
use crate::rational::{format_rational, Rational};

/// A property of task inputs. The evaluator may read low-level input
/// variables and the high-level input variables whose cells consist only
/// of low-level inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PropertySpec {
    pub name: String,
    #[serde(serialize_with = "ser_display")]
    pub evaluator: Expr,
}

impl PropertySpec {
    pub fn new(name: impl Into<String>, evaluator: Expr) -> Self {
        Self {
            name: name.into(),
            evaluator,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("vehicle `{0}` has no cell in the alignment")]
    NoCell(String),
    #[error("property `{name}` is undefined at {input}: {reason}")]
    PropertyUndefined { name: String, input: String, reason: String },
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("no inputs to audit")]
    NoInputs,
}

fn ser_display<T: std::fmt::Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&v.to_string())
}

fn ser_opt_rational<S: Serializer>(v: &Option<Rational>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(q) => s.serialize_some(&format_rational(q)),
        None => s.serialize_none(),
    }
}

fn ser_rational<S: Serializer>(v: &Rational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format_rational(v))
}

fn describe(a: &Assignment) -> String {
    crate::model::describe_assignment(a)
}

/// Values of the high-level variables whose cells read only low-level
/// inputs, computed from a low-level input setting.
fn input_image(alignment: &Alignment, low: &CausalModel, input: &Assignment) -> Assignment {
    let inputs = low.input_variables();
    alignment
        .cells()
        .iter()
        .filter(|c| c.low.iter().all(|l| inputs.contains(l)))
        .filter_map(|c| Some((c.high.clone(), c.map.evaluate(input).ok()?)))
        .collect()
}

fn property_value(prop: &PropertySpec, alignment: &Alignment, low: &CausalModel, input: &Assignment) -> Result<Rational, AuditError> {
    let mut env = input.clone();
    env.extend(input_image(alignment, low, input));
    prop.evaluator.evaluate(&env).map_err(|e| AuditError::PropertyUndefined {
        name: prop.name.clone(),
        input: describe(input),
        reason: e.to_string(),
    })
}

fn vehicle_cell<'a>(alignment: &'a Alignment, vehicle: &str) -> Result<&'a Cell, AuditError> {
    alignment.cell(vehicle).ok_or_else(|| AuditError::NoCell(vehicle.to_string()))
}

fn restrict(run: &Assignment, names: &[String]) -> Assignment {
    names.iter().filter_map(|n| Some((n.clone(), run.get(n)?.clone()))).collect()
}

// ---------------------------------------------------------------------------
// Information

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InformationRow {
    #[serde(serialize_with = "ser_assignment")]
    pub input: Assignment,
    #[serde(serialize_with = "ser_opt_rational")]
    pub vehicle: Option<Rational>,
    #[serde(serialize_with = "ser_rational")]
    pub property: Rational,
    pub agrees: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub undefined: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InformationReport {
    pub verdict: Verdict,
    pub rows: Vec<InformationRow>,
    /// First disagreeing input in enumeration order.
    #[serde(serialize_with = "ser_opt_assignment")]
    pub first_failure: Option<Assignment>,
}

fn ser_opt_assignment<S: Serializer>(v: &Option<Assignment>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(a) => {
            let text: BTreeMap<&String, String> = a.iter().map(|(k, v)| (k, format_rational(v))).collect();
            s.serialize_some(&text)
        }
        None => s.serialize_none(),
    }
}

impl InformationReport {
    pub fn failing_inputs(&self) -> impl Iterator<Item = &Assignment> {
        self.rows.iter().filter(|r| !r.agrees).map(|r| &r.input)
    }
}

/// Passes iff the vehicle's mapped value equals the property on every
/// input.
pub fn audit_information(
    low: &CausalModel,
    alignment: &Alignment,
    vehicle: &str,
    prop: &PropertySpec,
    inputs: &[Assignment],
) -> Result<InformationReport, AuditError> {
    let cell = vehicle_cell(alignment, vehicle)?;
    let plan = low.plan()?;
    let rows = inputs
        .par_iter()
        .map(|input| {
            let run = plan.run(input, &Semantics::Exact)?;
            let property = property_value(prop, alignment, low, input)?;
            let (vehicle, undefined) = match alignment.apply_cell(cell, &run, &Semantics::Exact) {
                Ok(v) => (Some(v), None),
                Err(why) => (None, Some(why)),
            };
            Ok(InformationRow {
                input: input.clone(),
                agrees: vehicle.as_ref() == Some(&property),
                vehicle,
                property,
                undefined,
            })
        })
        .collect::<Result<Vec<_>, AuditError>>()?;
    let first_failure = rows.iter().find(|r| !r.agrees).map(|r| r.input.clone());
    Ok(InformationReport {
        verdict: if first_failure.is_none() { Verdict::Pass } else { Verdict::Fail },
        rows,
        first_failure,
    })
}

// ---------------------------------------------------------------------------
// Shared machinery for interventions on the vehicle

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Alignedness {
    Aligned,
    NotAligned { reason: String },
}

struct Harness<'a> {
    low_plan: Plan<'a>,
    high_plan: Plan<'a>,
    alignment: &'a Alignment,
    cell: &'a Cell,
    vehicle: &'a str,
    outputs: Vec<String>,
    high_inputs: Vec<String>,
}

/// Outputs of one patched run on both levels.
struct Outcome {
    vehicle_value: Result<Rational, String>,
    factual: PartialAssignment,
    low: PartialAssignment,
    high: Assignment,
}

impl<'a> Harness<'a> {
    fn new(low: &'a CausalModel, high: &'a CausalModel, alignment: &'a Alignment, vehicle: &'a str) -> Result<Result<Self, String>, AuditError> {
        let cell = vehicle_cell(alignment, vehicle)?;
        if !high.has_variable(vehicle) {
            return Ok(Err(format!("the high-level model has no variable `{vehicle}`")));
        }
        let outputs: Vec<String> = high
            .sink_variables()
            .into_iter()
            .filter(|s| alignment.cell(s).is_some())
            .collect();
        if outputs.is_empty() {
            return Ok(Err("no high-level output variable is aligned".into()));
        }
        if outputs.iter().any(|o| o == vehicle) {
            return Ok(Err(format!("`{vehicle}` is the task output")));
        }
        let high_inputs = high.input_variables();
        if let Some(missing) = high_inputs.iter().find(|v| alignment.cell(v).is_none()) {
            return Ok(Err(format!("high-level input `{missing}` has no cell")));
        }
        Ok(Ok(Self {
            low_plan: low.plan()?,
            high_plan: high.plan()?,
            alignment,
            cell,
            vehicle,
            outputs,
            high_inputs,
        }))
    }

    fn output_image(&self, run: &Assignment) -> PartialAssignment {
        let full = self.alignment.map(run, &Semantics::Exact);
        PartialAssignment {
            values: restrict(&full.values, &self.outputs),
            undefined: full
                .undefined
                .into_iter()
                .filter(|(k, _)| self.outputs.contains(k))
                .collect(),
        }
    }

    fn cell_values(&self, run: &Assignment) -> Assignment {
        restrict(run, &self.cell.low)
    }

    fn high_input(&self, low_run: &Assignment) -> Result<Assignment, String> {
        let image = self.alignment.map(low_run, &Semantics::Exact);
        self.high_inputs
            .iter()
            .map(|v| match image.values.get(v) {
                Some(x) => Ok((v.clone(), x.clone())),
                None => Err(format!("high-level input `{v}` is undefined on the base run")),
            })
            .collect()
    }

    /// Runs `input` with the vehicle's cell forced to `patch` and the
    /// high-level model with the vehicle forced to the mapped value.
    fn outcome(&self, input: &Assignment, patch: &Assignment) -> Result<Outcome, AuditError> {
        let factual_run = self.low_plan.run(input, &Semantics::Exact)?;
        let mut overrides = input.clone();
        overrides.extend(patch.clone());
        let low_run = self.low_plan.run(&overrides, &Semantics::Exact)?;
        let vehicle_value = self.alignment.apply_cell(self.cell, patch, &Semantics::Exact);
        let high = match (&vehicle_value, self.high_input(&factual_run)) {
            (Ok(v), Ok(mut h)) => {
                h.insert(self.vehicle.to_string(), v.clone());
                restrict(&self.high_plan.run(&h, &Semantics::Exact)?, &self.outputs)
            }
            _ => Assignment::new(),
        };
        Ok(Outcome {
            vehicle_value,
            factual: self.output_image(&factual_run),
            low: self.output_image(&low_run),
            high,
        })
    }

    /// Distinct cell settings realized on factual runs, each with the
    /// first input that realizes it.
    fn realized(&self, inputs: &[Assignment]) -> Result<Vec<(Assignment, Assignment)>, AuditError> {
        let runs = inputs
            .par_iter()
            .map(|i| Ok((i.clone(), self.cell_values(&self.low_plan.run(i, &Semantics::Exact)?))))
            .collect::<Result<Vec<_>, AuditError>>()?;
        let mut seen = std::collections::BTreeSet::new();
        Ok(runs.into_iter().filter(|(_, s)| seen.insert(s.clone())).collect())
    }
}

fn agrees(low: &PartialAssignment, high: &Assignment) -> bool {
    low.undefined.is_empty() && !high.is_empty() && &low.values == high
}

// ---------------------------------------------------------------------------
// Use

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UseCase {
    #[serde(serialize_with = "ser_assignment")]
    pub base: Assignment,
    #[serde(serialize_with = "ser_assignment")]
    pub source: Assignment,
    /// Values written into the vehicle's cell.
    #[serde(serialize_with = "ser_assignment")]
    pub patch: Assignment,
    #[serde(serialize_with = "ser_opt_rational")]
    pub vehicle_value: Option<Rational>,
    pub low_output: PartialAssignment,
    #[serde(serialize_with = "ser_assignment")]
    pub high_output: Assignment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UseReport {
    pub verdict: Verdict,
    pub alignment: Alignedness,
    /// Interchange interventions performed (base, source pairs).
    pub checked: usize,
    pub failed: usize,
    /// Up to `MAX_EVIDENCE` failing cases.
    pub counterexamples: Vec<UseCase>,
}

pub const MAX_EVIDENCE: usize = 32;

/// Passes iff, for every base and source input, writing the source's cell
/// values into the base run gives the task output that the high-level
/// model gives when the vehicle is set to the mapped source value.
pub fn audit_use(
    low: &CausalModel,
    high: &CausalModel,
    alignment: &Alignment,
    vehicle: &str,
    inputs: &[Assignment],
) -> Result<UseReport, AuditError> {
    if inputs.is_empty() {
        return Err(AuditError::NoInputs);
    }
    let harness = match Harness::new(low, high, alignment, vehicle)? {
        Ok(h) => h,
        Err(reason) => {
            return Ok(UseReport {
                verdict: Verdict::Fail,
                alignment: Alignedness::NotAligned { reason },
                checked: 0,
                failed: 0,
                counterexamples: Vec::new(),
            })
        }
    };
    let sources = inputs
        .par_iter()
        .map(|s| Ok(harness.cell_values(&harness.low_plan.run(s, &Semantics::Exact)?)))
        .collect::<Result<Vec<_>, AuditError>>()?;
    let pairs: Vec<(usize, usize)> = (0..inputs.len())
        .flat_map(|b| (0..inputs.len()).map(move |s| (b, s)))
        .collect();
    let failures = pairs
        .par_iter()
        .map(|&(b, s)| {
            let o = harness.outcome(&inputs[b], &sources[s])?;
            Ok((!agrees(&o.low, &o.high)).then(|| UseCase {
                base: inputs[b].clone(),
                source: inputs[s].clone(),
                patch: sources[s].clone(),
                vehicle_value: o.vehicle_value.ok(),
                low_output: o.low,
                high_output: o.high,
            }))
        })
        .collect::<Result<Vec<_>, AuditError>>()?;
    let failures: Vec<UseCase> = failures.into_iter().flatten().collect();
    Ok(UseReport {
        verdict: if failures.is_empty() { Verdict::Pass } else { Verdict::Fail },
        alignment: Alignedness::Aligned,
        checked: pairs.len(),
        failed: failures.len(),
        counterexamples: failures.into_iter().take(MAX_EVIDENCE).collect(),
    })
}

// ---------------------------------------------------------------------------
// Misrepresentation

/// A planted wrong value that the rest of the system consumes as the
/// high-level model predicts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MisrepresentationWitness {
    #[serde(serialize_with = "ser_assignment")]
    pub input: Assignment,
    /// Input whose factual run realizes `patch`.
    #[serde(serialize_with = "ser_assignment")]
    pub realized_at: Assignment,
    #[serde(serialize_with = "ser_assignment")]
    pub patch: Assignment,
    #[serde(serialize_with = "ser_rational")]
    pub vehicle_value: Rational,
    #[serde(serialize_with = "ser_rational")]
    pub property_value: Rational,
    #[serde(serialize_with = "ser_assignment")]
    pub factual_output: Assignment,
    #[serde(serialize_with = "ser_assignment")]
    pub output: Assignment,
}

impl MisrepresentationWitness {
    /// Re-executes the intervention; true if it still misrepresents.
    pub fn recheck(&self, low: &CausalModel, high: &CausalModel, alignment: &Alignment, vehicle: &str, prop: &PropertySpec) -> bool {
        let Ok(Ok(h)) = Harness::new(low, high, alignment, vehicle) else {
            return false;
        };
        let Ok(p) = property_value(prop, alignment, low, &self.input) else {
            return false;
        };
        match h.outcome(&self.input, &self.patch) {
            Ok(o) => {
                o.vehicle_value.as_ref() == Ok(&self.vehicle_value)
                    && self.vehicle_value != p
                    && agrees(&o.low, &o.high)
                    && o.low.values != o.factual.values
                    && o.low.values == self.output
                    && o.factual.values == self.factual_output
            }
            Err(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MisrepresentationReport {
    pub verdict: Verdict,
    pub alignment: Alignedness,
    /// (input, realized setting) pairs whose mapped value contradicts the
    /// property.
    pub candidates: usize,
    /// Every witness, by input then by first realization of the setting.
    pub witnesses: Vec<MisrepresentationWitness>,
}

/// Passes iff some input and some cell setting realized on another input
/// carry a vehicle value that contradicts the property, and the low-level
/// output under that patch both changes and equals the high-level output
/// under the corresponding intervention.
pub fn audit_misrepresentation(
    low: &CausalModel,
    high: &CausalModel,
    alignment: &Alignment,
    vehicle: &str,
    prop: &PropertySpec,
    inputs: &[Assignment],
) -> Result<MisrepresentationReport, AuditError> {
    if inputs.is_empty() {
        return Err(AuditError::NoInputs);
    }
    let harness = match Harness::new(low, high, alignment, vehicle)? {
        Ok(h) => h,
        Err(reason) => {
            return Ok(MisrepresentationReport {
                verdict: Verdict::Fail,
                alignment: Alignedness::NotAligned { reason },
                candidates: 0,
                witnesses: Vec::new(),
            })
        }
    };
    let settings = harness.realized(inputs)?;
    let per_input = inputs
        .par_iter()
        .map(|input| {
            let p = property_value(prop, alignment, low, input)?;
            let mut candidates = 0;
            let mut found = Vec::new();
            for (realized_at, patch) in &settings {
                let Ok(v) = alignment.apply_cell(harness.cell, patch, &Semantics::Exact) else {
                    continue;
                };
                if v == p {
                    continue;
                }
                candidates += 1;
                let o = harness.outcome(input, patch)?;
                if agrees(&o.low, &o.high) && o.low.values != o.factual.values {
                    found.push(MisrepresentationWitness {
                        input: input.clone(),
                        realized_at: realized_at.clone(),
                        patch: patch.clone(),
                        vehicle_value: v,
                        property_value: p.clone(),
                        factual_output: o.factual.values,
                        output: o.low.values,
                    });
                }
            }
            Ok((candidates, found))
        })
        .collect::<Result<Vec<_>, AuditError>>()?;
    let candidates = per_input.iter().map(|(c, _)| c).sum();
    let witnesses: Vec<_> = per_input.into_iter().flat_map(|(_, w)| w).collect();
    Ok(MisrepresentationReport {
        verdict: if witnesses.is_empty() { Verdict::Fail } else { Verdict::Pass },
        alignment: Alignedness::Aligned,
        candidates,
        witnesses,
    })
}

// ---------------------------------------------------------------------------
// Combined

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub vehicle: String,
    pub property: PropertySpec,
    pub information: InformationReport,
    #[serde(rename = "use")]
    pub use_: UseReport,
    pub misrepresentation: MisrepresentationReport,
}

pub fn audit(
    low: &CausalModel,
    high: &CausalModel,
    alignment: &Alignment,
    vehicle: &str,
    prop: &PropertySpec,
    inputs: &[Assignment],
) -> Result<AuditReport, AuditError> {
    Ok(AuditReport {
        vehicle: vehicle.to_string(),
        property: prop.clone(),
        information: audit_information(low, alignment, vehicle, prop, inputs)?,
        use_: audit_use(low, high, alignment, vehicle, inputs)?,
        misrepresentation: audit_misrepresentation(low, high, alignment, vehicle, prop, inputs)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::all_boolean_inputs;
    use crate::rational::{int, one, zero};

    fn same_faces() -> PropertySpec {
        PropertySpec::new("same expression", Expr::xnor(Expr::var("A3"), Expr::var("A4")))
    }

    fn input(bits: [i64; 4]) -> Assignment {
        (1..=4).map(|i| format!("X{i}")).zip(bits.map(int)).collect()
    }

    #[test]
    fn information_on_the_network() {
        let n = fixtures::network_n();
        let inputs = all_boolean_inputs(&n);
        let r = audit_information(&n, &fixtures::alignment_n_to_m(), "B2", &same_faces(), &inputs).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(r.rows.len(), 16);
    }

    #[test]
    fn constant_property_fails_where_faces_differ() {
        let n = fixtures::network_n();
        let inputs = all_boolean_inputs(&n);
        let prop = PropertySpec::new("always", Expr::int(1));
        let r = audit_information(&n, &fixtures::alignment_n_to_m(), "B2", &prop, &inputs).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        let failing: Vec<_> = r.failing_inputs().cloned().collect();
        assert!(failing.contains(&input([0, 0, 1, 0])));
        assert!(!failing.contains(&input([0, 0, 1, 1])));
        assert_eq!(failing.len(), 8);
    }

    #[test]
    fn property_may_read_low_inputs() {
        let n = fixtures::network_n();
        let inputs = all_boolean_inputs(&n);
        let prop = PropertySpec::new("low", Expr::xnor(Expr::var("X3"), Expr::var("X4")));
        let r = audit_information(&n, &fixtures::alignment_n_to_m(), "B2", &prop, &inputs).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn unknown_vehicle_is_an_error() {
        let n = fixtures::network_n();
        let inputs = all_boolean_inputs(&n);
        let e = audit_information(&n, &fixtures::alignment_n_to_m(), "Q", &same_faces(), &inputs).unwrap_err();
        assert_eq!(e, AuditError::NoCell("Q".into()));
    }

    #[test]
    fn use_and_misrepresentation_on_the_circuit() {
        let m = fixtures::circuit_m();
        let inputs = all_boolean_inputs(&m);
        let id = Alignment::identity(&m);
        let u = audit_use(&m, &m, &id, "B1", &inputs).unwrap();
        assert_eq!(u.verdict, Verdict::Pass);
        assert_eq!(u.checked, 256);
        let prop = PropertySpec::new("first pair", Expr::xnor(Expr::var("A1"), Expr::var("A2")));
        let r = audit_misrepresentation(&m, &m, &id, "B1", &prop, &inputs).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        let w = r
            .witnesses
            .iter()
            .find(|w| w.input == [("A1", 1), ("A2", 1), ("A3", 0), ("A4", 0)].map(|(k, v)| (k.to_string(), int(v))).into())
            .unwrap();
        assert_eq!(w.vehicle_value, zero());
        assert_eq!(w.factual_output["C"], one());
        assert_eq!(w.output["C"], zero());
        assert!(w.recheck(&m, &m, &id, "B1", &prop));
    }

    fn narrative_witness(n: &CausalModel) -> Option<MisrepresentationWitness> {
        let inputs = all_boolean_inputs(n);
        let r = audit_misrepresentation(n, &fixtures::circuit_m(), &fixtures::alignment_n_to_m(), "B2", &same_faces(), &inputs).unwrap();
        r.witnesses
            .into_iter()
            .find(|w| w.input["X3"] == one() && w.input["X4"] == one() && w.realized_at == input([0, 0, 1, 0]))
    }

    #[test]
    fn misrepresentation_on_the_signed_network() {
        let n = fixtures::network_n_signed();
        let w = narrative_witness(&n).expect("witness");
        assert_eq!(w.vehicle_value, zero());
        assert_eq!(w.property_value, one());
        assert_eq!(w.patch, [("H1_3", 1), ("H1_4", 0)].map(|(k, v)| (k.to_string(), int(v))).into());
        assert_ne!(w.output, w.factual_output);
        assert!(w.recheck(&n, &fixtures::circuit_m(), &fixtures::alignment_n_to_m(), "B2", &same_faces()));
    }

    #[test]
    fn literal_network_misuses_the_vehicle() {
        let n = fixtures::network_n();
        assert!(narrative_witness(&n).is_some());
        let inputs = all_boolean_inputs(&n);
        let u = audit_use(&n, &fixtures::circuit_m(), &fixtures::alignment_n_to_m(), "B2", &inputs).unwrap();
        assert_eq!(u.verdict, Verdict::Fail);
        assert_eq!((u.checked, u.failed), (256, 64));
        let signed = fixtures::network_n_signed();
        let u = audit_use(&signed, &fixtures::circuit_m(), &fixtures::alignment_n_to_m(), "B2", &inputs).unwrap();
        assert_eq!(u.verdict, Verdict::Pass);
    }

    #[test]
    fn forgotten_unit_is_not_aligned() {
        let n = fixtures::network_n_signed();
        let mut cells = fixtures::alignment_n_to_m().cells().to_vec();
        cells.push(Cell {
            high: "H2_1".into(),
            low: vec!["H2_1".into()],
            map: Expr::var("H2_1"),
        });
        let inputs = all_boolean_inputs(&n);
        let u = audit_use(&n, &fixtures::circuit_m(), &Alignment::new(cells), "H2_1", &inputs).unwrap();
        assert_eq!(u.verdict, Verdict::Fail);
        assert!(matches!(u.alignment, Alignedness::NotAligned { .. }));
    }

    #[test]
    fn constant_output_cannot_misrepresent() {
        let (b1, b2) = (Expr::var("B1"), Expr::var("B2"));
        let always = Expr::xnor(Expr::xnor(b1.clone(), b1), Expr::xnor(b2.clone(), b2));
        let m = fixtures::circuit_m().with_mechanism("C", always);
        let inputs = all_boolean_inputs(&m);
        let id = Alignment::identity(&m);
        let prop = PropertySpec::new("first pair", Expr::xnor(Expr::var("A1"), Expr::var("A2")));
        let r = audit_misrepresentation(&m, &m, &id, "B1", &prop, &inputs).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(r.candidates > 0);
        assert!(r.witnesses.is_empty());
    }

    #[test]
    fn output_is_not_a_vehicle_for_use() {
        let m = fixtures::circuit_m();
        let inputs = all_boolean_inputs(&m);
        let u = audit_use(&m, &m, &Alignment::identity(&m), "C", &inputs).unwrap();
        assert!(matches!(u.alignment, Alignedness::NotAligned { .. }));
    }
}
