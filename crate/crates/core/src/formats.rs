//! Text formats for models, alignments, translations, interventionals,
//! interchange specs, audit requests, weight matrices and input lists.
//!
//! Structured documents are TOML; expressions inside them use the prefix
//! syntax of [`crate::expr`]. Weight matrices and input lists are plain
//! whitespace-separated text. Every parse error carries a 1-based line and
//! column.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::abstraction::{Alignment, Cell};
use crate::audit::PropertySpec;
use crate::expr::{parse_expr, Expr};
use crate::intervene::{InterchangeSpec, Interventional};
use crate::model::{Assignment, CausalModel, ValueDomain, Variable, Violation};
use crate::rational::{format_rational, parse_rational, Rational};
use crate::translate::{Matrix, TranslateError, Translation};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.column, self.message)
    }
}

impl std::error::Error for FormatError {}

/// 1-based line and column of a byte offset.
pub fn locate(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn error_at(text: &str, offset: usize, message: impl Into<String>) -> FormatError {
    let (line, column) = locate(text, offset);
    FormatError {
        line,
        column,
        message: message.into(),
    }
}

fn from_toml<T: DeserializeOwned>(text: &str) -> Result<T, FormatError> {
    toml::from_str(text).map_err(|e| {
        let offset = e.span().map_or(0, |s| s.start);
        error_at(text, offset, e.message().trim().to_string())
    })
}

/// Byte offset of the first character inside a spanned string value.
fn content_start(text: &str, span: &Range<usize>) -> usize {
    let raw = &text[span.start..span.end.min(text.len())];
    let mut start = span.start;
    if raw.starts_with("\"\"\"") || raw.starts_with("'''") {
        start += 3;
        if text[start..].starts_with('\n') {
            start += 1;
        } else if text[start..].starts_with("\r\n") {
            start += 2;
        }
    } else if raw.starts_with('"') || raw.starts_with('\'') {
        start += 1;
    }
    start
}

fn expr_at(text: &str, value: &Spanned<String>) -> Result<Expr, FormatError> {
    parse_expr(value.get_ref()).map_err(|e| error_at(text, content_start(text, &value.span()) + e.offset, e.message))
}

/// A number written as a TOML integer or as a string (`"99/100"`,
/// `"0.99"`). TOML floats are rejected, since they are not exact.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
enum Number {
    Int(i64),
    Text(String),
    Float(f64),
}

impl Number {
    fn of(q: &Rational) -> Self {
        match (q.is_integer(), i64::try_from(q.numer().clone())) {
            (true, Ok(n)) => Number::Int(n),
            _ => Number::Text(format_rational(q)),
        }
    }
}

fn number_at(text: &str, value: &Spanned<Number>) -> Result<Rational, FormatError> {
    let at = |m: String| error_at(text, value.span().start, m);
    match value.get_ref() {
        Number::Int(n) => Ok(crate::rational::int(*n)),
        Number::Text(s) => parse_rational(s).ok_or_else(|| at(format!("invalid number `{s}`"))),
        Number::Float(x) => Err(at(format!("float {x} is not exact; write it as a string such as \"99/100\""))),
    }
}

fn domain_at(text: &str, value: &Spanned<String>) -> Result<ValueDomain, FormatError> {
    let s = value.get_ref().trim();
    let at = |m: String| error_at(text, value.span().start, m);
    match s {
        "boolean" => Ok(ValueDomain::Boolean),
        "real" => Ok(ValueDomain::Real),
        _ => match s.strip_prefix("finite") {
            Some(rest) => rest
                .split_whitespace()
                .map(|v| parse_rational(v).ok_or_else(|| at(format!("invalid domain value `{v}`"))))
                .collect::<Result<Vec<_>, _>>()
                .map(ValueDomain::finite),
            None => Err(at(format!("unknown domain `{s}`; expected boolean, real or `finite v1 v2 ...`"))),
        },
    }
}

// ---------------------------------------------------------------------------
// Models

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VariableDoc {
    name: Spanned<String>,
    domain: Spanned<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    variables: Vec<VariableDoc>,
    #[serde(default)]
    defaults: IndexMap<String, Spanned<Number>>,
    #[serde(default)]
    mechanisms: IndexMap<String, Spanned<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelFileError {
    #[error("{0}")]
    Syntax(#[from] FormatError),
    #[error("invalid model: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

/// Parses and validates a model document.
pub fn parse_model(text: &str) -> Result<CausalModel, ModelFileError> {
    let doc: ModelDoc = from_toml(text)?;
    let mut variables = Vec::new();
    for v in &doc.variables {
        variables.push(Variable {
            name: v.name.get_ref().clone(),
            domain: domain_at(text, &v.domain)?,
        });
    }
    let mut mechanisms = BTreeMap::new();
    for (name, value) in &doc.defaults {
        mechanisms.insert(name.clone(), Expr::Const(number_at(text, value)?));
    }
    for (name, value) in &doc.mechanisms {
        if doc.defaults.contains_key(name) {
            return Err(error_at(text, value.span().start, format!("`{name}` has both a default and a mechanism")).into());
        }
        mechanisms.insert(name.clone(), expr_at(text, value)?);
    }
    for v in &doc.variables {
        if !mechanisms.contains_key(v.name.get_ref()) {
            let message = format!("`{}` needs a mechanism or a default", v.name.get_ref());
            return Err(error_at(text, v.name.span().start, message).into());
        }
    }
    let model = CausalModel::new(variables, mechanisms);
    let violations = model.validate();
    if violations.is_empty() {
        Ok(model)
    } else {
        Err(ModelFileError::Invalid(violations))
    }
}

#[derive(Serialize)]
struct VariableOut<'a> {
    name: &'a str,
    domain: String,
}

#[derive(Serialize)]
struct ModelOut<'a> {
    variables: Vec<VariableOut<'a>>,
    #[serde(skip_serializing_if = "IndexMap::is_empty")]
    defaults: IndexMap<&'a str, Number>,
    #[serde(skip_serializing_if = "IndexMap::is_empty")]
    mechanisms: IndexMap<&'a str, String>,
}

/// Parentless constant mechanisms are written as defaults, everything else
/// as a mechanism, in declaration order.
pub fn serialize_model(model: &CausalModel) -> String {
    let mut out = ModelOut {
        variables: Vec::new(),
        defaults: IndexMap::new(),
        mechanisms: IndexMap::new(),
    };
    for v in model.variables() {
        out.variables.push(VariableOut {
            name: &v.name,
            domain: v.domain.to_string(),
        });
        match model.mechanism(&v.name) {
            Some(Expr::Const(q)) => {
                out.defaults.insert(&v.name, Number::of(q));
            }
            Some(e) => {
                out.mechanisms.insert(&v.name, e.to_string());
            }
            None => {}
        }
    }
    toml::to_string(&out).expect("model serializes")
}

// ---------------------------------------------------------------------------
// Alignments

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AlignmentDoc {
    cells: IndexMap<String, Spanned<Vec<String>>>,
    maps: IndexMap<String, Spanned<String>>,
}

pub fn parse_alignment(text: &str) -> Result<Alignment, FormatError> {
    let doc: AlignmentDoc = from_toml(text)?;
    let mut cells = Vec::new();
    for (high, low) in &doc.cells {
        let map = doc
            .maps
            .get(high)
            .ok_or_else(|| error_at(text, low.span().start, format!("cell `{high}` has no map")))?;
        cells.push(Cell {
            high: high.clone(),
            low: low.get_ref().clone(),
            map: expr_at(text, map)?,
        });
    }
    if let Some((name, value)) = doc.maps.iter().find(|(k, _)| !doc.cells.contains_key(*k)) {
        return Err(error_at(text, value.span().start, format!("map for `{name}`, which has no cell")));
    }
    Ok(Alignment::new(cells))
}

#[derive(Serialize)]
struct AlignmentOut<'a> {
    cells: IndexMap<&'a str, &'a [String]>,
    maps: IndexMap<&'a str, String>,
}

pub fn serialize_alignment(alignment: &Alignment) -> String {
    let out = AlignmentOut {
        cells: alignment.cells().iter().map(|c| (c.high.as_str(), c.low.as_slice())).collect(),
        maps: alignment.cells().iter().map(|c| (c.high.as_str(), c.map.to_string())).collect(),
    };
    toml::to_string(&out).expect("alignment serializes")
}

// ---------------------------------------------------------------------------
// Translations

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearDoc {
    layer: Vec<String>,
    targets: Vec<String>,
    matrix: Spanned<Vec<Vec<Spanned<Number>>>>,
    tolerance: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TranslationDoc {
    #[serde(default)]
    source: Vec<VariableDoc>,
    #[serde(default)]
    target: Vec<VariableDoc>,
    #[serde(default)]
    forward: IndexMap<String, Spanned<String>>,
    #[serde(default)]
    inverse: IndexMap<String, Spanned<String>>,
    linear: Option<LinearDoc>,
}

/// A change of basis on one layer, resolved against a model when loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSpec {
    pub layer: Vec<String>,
    pub targets: Vec<String>,
    pub matrix: Matrix,
    /// Set when entries were written as floats; bounds `|M Mᵀ - I|`.
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TranslationFile {
    Explicit(Translation),
    Linear(LinearSpec),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TranslationFileError {
    #[error("{0}")]
    Syntax(#[from] FormatError),
    #[error(transparent)]
    Invalid(#[from] TranslateError),
    #[error("matrix is {error:e} away from orthogonal, above the declared tolerance {tolerance:e}")]
    NotOrthogonal { error: f64, tolerance: f64 },
}

impl TranslationFile {
    /// The translation of `model` this file describes.
    pub fn resolve(&self, model: &CausalModel) -> Result<Translation, TranslationFileError> {
        match self {
            TranslationFile::Explicit(t) => Ok(t.clone()),
            TranslationFile::Linear(spec) => {
                if let Some(tolerance) = spec.tolerance {
                    let error = crate::align_search::orthogonality_error(&spec.matrix);
                    if error > tolerance {
                        return Err(TranslationFileError::NotOrthogonal { error, tolerance });
                    }
                }
                Ok(Translation::linear_layer(model, &spec.layer, &spec.matrix, &spec.targets)?)
            }
        }
    }
}

fn variables_at(text: &str, docs: &[VariableDoc]) -> Result<Vec<Variable>, FormatError> {
    docs.iter()
        .map(|v| {
            Ok(Variable {
                name: v.name.get_ref().clone(),
                domain: domain_at(text, &v.domain)?,
            })
        })
        .collect()
}

fn expr_map(text: &str, map: &IndexMap<String, Spanned<String>>) -> Result<BTreeMap<String, Expr>, FormatError> {
    map.iter().map(|(k, v)| Ok((k.clone(), expr_at(text, v)?))).collect()
}

pub fn parse_translation(text: &str) -> Result<TranslationFile, TranslationFileError> {
    let doc: TranslationDoc = from_toml(text)?;
    if let Some(linear) = doc.linear {
        if !(doc.source.is_empty() && doc.target.is_empty() && doc.forward.is_empty() && doc.inverse.is_empty()) {
            return Err(error_at(text, 0, "a linear translation takes no source, target, forward or inverse").into());
        }
        let floats = linear.matrix.get_ref().iter().flatten().any(|x| matches!(x.get_ref(), Number::Float(_)));
        let mut matrix = Vec::new();
        for row in linear.matrix.get_ref() {
            let mut out = Vec::new();
            for x in row {
                out.push(match (x.get_ref(), linear.tolerance) {
                    (Number::Float(f), Some(_)) => Rational::from_float(*f).ok_or_else(|| error_at(text, x.span().start, "non-finite entry"))?,
                    _ => number_at(text, x)?,
                });
            }
            matrix.push(out);
        }
        if floats && linear.tolerance.is_none() {
            return Err(error_at(text, linear.matrix.span().start, "float entries need a `tolerance`").into());
        }
        return Ok(TranslationFile::Linear(LinearSpec {
            layer: linear.layer,
            targets: linear.targets,
            matrix,
            tolerance: linear.tolerance,
        }));
    }
    Ok(TranslationFile::Explicit(Translation::new(
        variables_at(text, &doc.source)?,
        variables_at(text, &doc.target)?,
        expr_map(text, &doc.forward)?,
        expr_map(text, &doc.inverse)?,
    )?))
}

#[derive(Serialize)]
struct TranslationOut<'a> {
    source: Vec<VariableOut<'a>>,
    target: Vec<VariableOut<'a>>,
    forward: IndexMap<&'a str, String>,
    inverse: IndexMap<&'a str, String>,
}

fn variables_out(vars: &[Variable]) -> Vec<VariableOut<'_>> {
    vars.iter()
        .map(|v| VariableOut {
            name: &v.name,
            domain: v.domain.to_string(),
        })
        .collect()
}

pub fn serialize_translation(t: &Translation) -> String {
    let out = TranslationOut {
        source: variables_out(t.source()),
        target: variables_out(t.target()),
        forward: t.target().iter().map(|v| (v.name.as_str(), t.forward_map()[&v.name].to_string())).collect(),
        inverse: t.source().iter().map(|v| (v.name.as_str(), t.inverse_map()[&v.name].to_string())).collect(),
    };
    toml::to_string(&out).expect("translation serializes")
}

#[derive(Serialize)]
struct LinearOut<'a> {
    layer: &'a [String],
    targets: &'a [String],
    matrix: Vec<Vec<Number>>,
}

#[derive(Serialize)]
struct LinearWrapper<'a> {
    linear: LinearOut<'a>,
}

/// Writes an exact linear translation.
pub fn serialize_linear(layer: &[String], targets: &[String], matrix: &Matrix) -> String {
    let out = LinearWrapper {
        linear: LinearOut {
            layer,
            targets,
            matrix: matrix.iter().map(|row| row.iter().map(Number::of).collect()).collect(),
        },
    };
    toml::to_string(&out).expect("linear translation serializes")
}

// ---------------------------------------------------------------------------
// Interventionals and interchange specs

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SetDoc {
    target: String,
    expression: Option<Spanned<String>>,
    value: Option<Spanned<Number>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InterventionalDoc {
    label: Option<String>,
    #[serde(default)]
    set: Vec<Spanned<SetDoc>>,
}

/// A list of `{target, expression}` (or `{target, value}`) replacements,
/// applied together.
pub fn parse_interventional(text: &str) -> Result<Interventional, FormatError> {
    let doc: InterventionalDoc = from_toml(text)?;
    let mut mechanisms = Vec::new();
    for entry in &doc.set {
        let e = entry.get_ref();
        let expr = match (&e.expression, &e.value) {
            (Some(x), None) => expr_at(text, x)?,
            (None, Some(v)) => Expr::Const(number_at(text, v)?),
            _ => return Err(error_at(text, entry.span().start, "each `set` needs exactly one of `expression` and `value`")),
        };
        if mechanisms.iter().any(|(t, _): &(String, Expr)| t == &e.target) {
            return Err(error_at(text, entry.span().start, format!("`{}` is set twice", e.target)));
        }
        mechanisms.push((e.target.clone(), expr));
    }
    let i = if mechanisms.iter().all(|(_, e)| matches!(e, Expr::Const(_))) {
        Interventional::hard(mechanisms.into_iter().map(|(t, e)| match e {
            Expr::Const(q) => (t, q),
            _ => unreachable!(),
        }))
    } else {
        Interventional::replace(mechanisms)
    };
    Ok(match doc.label {
        Some(label) => i.with_label(label),
        None => i,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InterchangeDoc {
    base: IndexMap<String, Number>,
    source: SourceDoc,
    targets: Vec<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SourceDoc {
    Nested { interchange: Box<InterchangeDoc> },
    Input(IndexMap<String, Number>),
}

/// Nested tables go through an untagged enum, which drops spans; a bad
/// entry is located by searching for its key.
fn assignment_at(text: &str, map: &IndexMap<String, Number>) -> Result<Assignment, FormatError> {
    map.iter()
        .map(|(k, v)| {
            let at = |m: String| error_at(text, text.find(k.as_str()).unwrap_or(0), m);
            let q = match v {
                Number::Int(n) => crate::rational::int(*n),
                Number::Text(s) => parse_rational(s).ok_or_else(|| at(format!("invalid number `{s}` for `{k}`")))?,
                Number::Float(x) => return Err(at(format!("float {x} for `{k}` is not exact; write it as a string"))),
            };
            Ok((k.clone(), q))
        })
        .collect()
}

fn interchange_from(text: &str, doc: &InterchangeDoc) -> Result<InterchangeSpec, FormatError> {
    let base = assignment_at(text, &doc.base)?;
    let targets = doc.targets.iter().cloned();
    Ok(match &doc.source {
        SourceDoc::Input(map) => InterchangeSpec::new(base, assignment_at(text, map)?, targets),
        SourceDoc::Nested { interchange } => InterchangeSpec::nested(base, interchange_from(text, interchange)?, targets),
    })
}

/// `{base, source, targets}`; `source` is an input table or
/// `source.interchange`, a nested spec.
pub fn parse_interchange(text: &str) -> Result<InterchangeSpec, FormatError> {
    let doc: InterchangeDoc = from_toml(text)?;
    interchange_from(text, &doc)
}

// ---------------------------------------------------------------------------
// Audit requests

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PropertyDoc {
    name: String,
    expression: Spanned<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AuditDoc {
    low: String,
    high: String,
    alignment: String,
    vehicle: String,
    property: PropertyDoc,
}

/// An audit request. Model and alignment references are file paths
/// (relative to the request) or `fixture:<name>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRequest {
    pub low: String,
    pub high: String,
    pub alignment: String,
    pub vehicle: String,
    pub property: PropertySpec,
}

pub fn parse_audit_request(text: &str) -> Result<AuditRequest, FormatError> {
    let doc: AuditDoc = from_toml(text)?;
    Ok(AuditRequest {
        low: doc.low,
        high: doc.high,
        alignment: doc.alignment,
        vehicle: doc.vehicle,
        property: PropertySpec::new(doc.property.name, expr_at(text, &doc.property.expression)?),
    })
}

// ---------------------------------------------------------------------------
// Plain-text matrices and input lists

fn significant_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut offset = 0;
    text.split_inclusive('\n').filter_map(move |raw| {
        let start = offset;
        offset += raw.len();
        let line = raw.split('#').next().unwrap_or("");
        (!line.trim().is_empty()).then_some((start, line))
    })
}

/// Whitespace-separated tokens of a line with their byte offsets.
fn tokens(start: usize, line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut rest = line;
    let mut at = start;
    while let Some(skip) = rest.find(|c: char| !c.is_whitespace()) {
        rest = &rest[skip..];
        at += skip;
        let len = rest.find(char::is_whitespace).unwrap_or(rest.len());
        out.push((at, &rest[..len]));
        rest = &rest[len..];
        at += len;
    }
    out
}

/// Named matrices, each introduced by a `NAME ROWSxCOLS` header line and
/// followed by that many rows. `#` starts a comment.
pub fn parse_weights(text: &str) -> Result<Vec<(String, Matrix)>, FormatError> {
    let mut out: Vec<(String, Matrix)> = Vec::new();
    let mut expected: Option<(usize, usize, usize)> = None;
    for (start, line) in significant_lines(text) {
        let toks = tokens(start, line);
        match expected {
            Some((rows, cols, _)) if out.last().is_some_and(|(_, m)| m.len() < rows) => {
                if toks.len() != cols {
                    return Err(error_at(text, toks[0].0, format!("expected {cols} entries, found {}", toks.len())));
                }
                let row = toks
                    .iter()
                    .map(|(at, t)| parse_rational(t).ok_or_else(|| error_at(text, *at, format!("invalid number `{t}`"))))
                    .collect::<Result<Vec<_>, _>>()?;
                out.last_mut().unwrap().1.push(row);
            }
            _ => {
                let [(_, name), (at, shape)] = toks[..] else {
                    return Err(error_at(text, toks[0].0, "expected a header `NAME ROWSxCOLS`"));
                };
                let dims = shape
                    .split_once('x')
                    .and_then(|(r, c)| Some((r.parse::<usize>().ok()?, c.parse::<usize>().ok()?)))
                    .filter(|&(r, c)| r > 0 && c > 0)
                    .ok_or_else(|| error_at(text, at, format!("invalid shape `{shape}`")))?;
                if out.iter().any(|(n, _)| n == name) {
                    return Err(error_at(text, toks[0].0, format!("matrix `{name}` declared twice")));
                }
                expected = Some((dims.0, dims.1, start));
                out.push((name.to_string(), Vec::new()));
            }
        }
    }
    if let (Some((rows, _, header)), Some((name, m))) = (expected, out.last()) {
        if m.len() < rows {
            return Err(error_at(text, header, format!("matrix `{name}` declares {rows} rows, found {}", m.len())));
        }
    }
    Ok(out)
}

pub fn serialize_weights(matrices: &[(&str, &Matrix)]) -> String {
    let mut out = String::new();
    for (name, m) in matrices {
        let cols = m.first().map_or(0, Vec::len);
        out.push_str(&format!("{name} {}x{cols}\n", m.len()));
        for row in m.iter() {
            let cells: Vec<String> = row.iter().map(format_rational).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
    }
    out
}

/// A header line of variable names, then one row of values per input.
pub fn parse_inputs(text: &str) -> Result<Vec<Assignment>, FormatError> {
    let mut lines = significant_lines(text);
    let Some((start, header)) = lines.next() else {
        return Err(error_at(text, 0, "empty input list"));
    };
    let names = tokens(start, header);
    let mut out = Vec::new();
    for (start, line) in lines {
        let toks = tokens(start, line);
        if toks.len() != names.len() {
            return Err(error_at(text, toks[0].0, format!("expected {} values, found {}", names.len(), toks.len())));
        }
        let mut row = Assignment::new();
        for ((_, name), (at, t)) in names.iter().zip(&toks) {
            let v = parse_rational(t).ok_or_else(|| error_at(text, *at, format!("invalid number `{t}`")))?;
            row.insert(name.to_string(), v);
        }
        out.push(row);
    }
    Ok(out)
}

pub fn serialize_inputs(inputs: &[Assignment]) -> String {
    let Some(first) = inputs.first() else {
        return String::new();
    };
    let names: Vec<&String> = first.keys().collect();
    let mut out = names.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" ");
    out.push('\n');
    for row in inputs {
        let cells: Vec<String> = names.iter().map(|n| format_rational(&row[*n])).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn locate_counts_from_one() {
        assert_eq!(locate("ab\ncd", 0), (1, 1));
        assert_eq!(locate("ab\ncd", 4), (2, 2));
    }

    #[test]
    fn fixture_models_round_trip() {
        for m in [fixtures::circuit_m(), fixtures::circuit_m_star(), fixtures::network_n()] {
            assert_eq!(parse_model(&serialize_model(&m)).unwrap(), m);
        }
    }

    #[test]
    fn bad_expression_is_located() {
        let text = "[[variables]]\nname = \"A\"\ndomain = \"boolean\"\n\n[mechanisms]\nA = \"(xnor (var B)\"\n";
        let ModelFileError::Syntax(e) = parse_model(text).unwrap_err() else {
            panic!("expected a syntax error")
        };
        assert_eq!((e.line, e.column), (6, 7), "{e}");
    }

    #[test]
    fn bad_toml_is_located() {
        let e = parse_alignment("[cells]\nB1 = [\"H1\"\n").unwrap_err();
        assert_eq!(e.line, 2);
    }

    #[test]
    fn floats_are_rejected_in_models() {
        let text = "[[variables]]\nname = \"A\"\ndomain = \"real\"\n\n[defaults]\nA = 0.5\n";
        assert!(parse_model(text).unwrap_err().to_string().contains("not exact"));
    }

    #[test]
    fn alignment_round_trips() {
        let a = fixtures::alignment_n_to_m();
        assert_eq!(parse_alignment(&serialize_alignment(&a)).unwrap(), a);
    }

    #[test]
    fn translation_round_trips() {
        let t = fixtures::translation_m_star_to_m();
        assert_eq!(parse_translation(&serialize_translation(&t)).unwrap(), TranslationFile::Explicit(t));
    }

    #[test]
    fn float_linear_needs_tolerance() {
        let text = "[linear]\nlayer = [\"a\", \"b\"]\ntargets = [\"r\", \"s\"]\nmatrix = [[0.6, 0.8], [-0.8, 0.6]]\n";
        assert!(parse_translation(text).is_err());
        let ok = format!("{text}tolerance = 1e-12\n");
        assert!(matches!(parse_translation(&ok).unwrap(), TranslationFile::Linear(_)));
    }

    #[test]
    fn weights_round_trip_and_check_shape() {
        let (w1, w3) = (fixtures::weights_w1(), fixtures::weights_w3());
        let text = serialize_weights(&[("W1", &w1), ("W3", &w3)]);
        let parsed = parse_weights(&text).unwrap();
        assert_eq!(parsed, vec![("W1".to_string(), w1), ("W3".to_string(), w3)]);
        let e = parse_weights("W 2x2\n1 0\n0\n").unwrap_err();
        assert_eq!((e.line, e.column), (3, 1));
        let e = parse_weights("W 2x2\n1 0\n").unwrap_err();
        assert!(e.message.contains("declares 2 rows"));
    }

    #[test]
    fn interventional_and_interchange() {
        let i = parse_interventional("[[set]]\ntarget = \"B1\"\nvalue = 1\n").unwrap();
        assert_eq!(i.as_hard().unwrap()["B1"], crate::rational::one());
        let i = parse_interventional("[[set]]\ntarget = \"B1\"\nexpression = \"(var A1)\"\n").unwrap();
        assert!(i.as_hard().is_none());
        let spec = parse_interchange(
            "targets = [\"B1\"]\n[base]\nA1 = 0\n[source.interchange]\ntargets = [\"B2\"]\n[source.interchange.base]\nA1 = 1\n[source.interchange.source]\nA1 = 0\n",
        )
        .unwrap();
        assert_eq!(spec.depth(), 2);
    }

    #[test]
    fn inputs_round_trip() {
        let inputs = crate::model::all_boolean_inputs(&fixtures::circuit_m());
        assert_eq!(parse_inputs(&serialize_inputs(&inputs)).unwrap(), inputs);
    }
}
