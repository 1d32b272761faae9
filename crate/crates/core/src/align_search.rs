//! Rotations of a hidden layer and a derivative-free search for the
//! rotation under which a high-level model aligns with the network.
//!
//! Floats live only in this module's objective. Rotations are assembled
//! exactly from rational Givens factors, so a found rotation can be
//! certified with rational arithmetic.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::abstraction::{
    check_abstraction_under_translation, AbstractionError, AbstractionOptions, Alignment, SettingsMap,
    VerificationReport,
};
use crate::expr::{Expr, Semantics, Tolerance};
use crate::model::{Assignment, CausalModel, ValueDomain};
use crate::rational::{self, Rational};
use crate::translate::{self, Matrix, TranslateError, Translation};

/// Largest denominator used when rationalizing `tan(angle / 2)`.
const TAN_DENOMINATOR: u64 = 1_000_000;
/// Slack for indicator comparisons in the float objective, equal to the
/// certification tolerance.
const FLOAT_EPS: f64 = CERT_WITHIN;
/// Smallest margin the surrogate loss asks of outputs that should be
/// strictly past a threshold. The working margin is half the smallest such
/// gap seen on factual runs.
const HINGE_MARGIN: f64 = 1e-3;
/// Certification counts indicator inputs within this distance of the
/// threshold as on it ...
const CERT_WITHIN: f64 = 1e-7;
/// ... and rejects those closer than this otherwise.
const CERT_MARGIN: f64 = 1e-4;

// ---------------------------------------------------------------------------
// Rotations

/// A rotation of `R^n` as a product of plane rotations, one per plane
/// `(p, q)` with `p < q` in lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RotationParam {
    pub n: usize,
    pub angles: Vec<f64>,
}

pub fn planes(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for p in 0..n {
        for q in p + 1..n {
            out.push((p, q));
        }
    }
    out
}

impl RotationParam {
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            angles: vec![0.0; n * (n.saturating_sub(1)) / 2],
        }
    }

    pub fn new(n: usize, angles: Vec<f64>) -> Self {
        assert_eq!(angles.len(), n * (n.saturating_sub(1)) / 2, "one angle per plane");
        Self { n, angles }
    }

    /// Uniform angles in `[-pi, pi)`.
    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        let m = n * (n.saturating_sub(1)) / 2;
        Self::new(n, (0..m).map(|_| rng.random_range(-PI..PI)).collect())
    }

    /// The float matrix `G_1 G_2 ... G_m`.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        let mut r: Vec<Vec<f64>> = (0..self.n)
            .map(|i| (0..self.n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        for (&(p, q), &theta) in planes(self.n).iter().zip(&self.angles) {
            let (s, c) = theta.sin_cos();
            // Right-multiply by the plane rotation: only columns p and q change.
            for row in r.iter_mut() {
                let (a, b) = (row[p], row[q]);
                row[p] = a * c + b * s;
                row[q] = -a * s + b * c;
            }
        }
        r
    }

    /// The same product with each factor made exactly orthogonal: with
    /// `t` a rational approximation of `tan(angle / 2)`, the factor uses
    /// `cos = (1 - t^2) / (1 + t^2)` and `sin = 2t / (1 + t^2)`.
    pub fn exact_matrix(&self) -> Matrix {
        self.exact_matrix_with(TAN_DENOMINATOR)
    }

    /// [`RotationParam::exact_matrix`] with tangents approximated by
    /// fractions whose denominators are at most `max_denominator`.
    pub fn exact_matrix_with(&self, max_denominator: u64) -> Matrix {
        let one = rational::one();
        let mut r: Matrix = (0..self.n)
            .map(|i| {
                (0..self.n)
                    .map(|j| if i == j { one.clone() } else { rational::zero() })
                    .collect()
            })
            .collect();
        for (&(p, q), &theta) in planes(self.n).iter().zip(&self.angles) {
            let t = rational::approximate((theta / 2.0).tan(), max_denominator);
            let denom = &one + &t * &t;
            let c = (&one - &t * &t) / &denom;
            let s = (&t + &t) / &denom;
            for row in r.iter_mut() {
                let (a, b) = (row[p].clone(), row[q].clone());
                row[p] = &a * &c + &b * &s;
                row[q] = -(&a * &s) + &b * &c;
            }
        }
        r
    }
}

/// `max |R^T R - I|` over entries.
pub fn orthogonality_error(m: &Matrix) -> f64 {
    let n = m.len();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let mut dot = rational::zero();
            for row in m {
                dot += &row[i] * &row[j];
            }
            if i == j {
                dot -= rational::one();
            }
            worst = worst.max(rational::to_f64(&dot).abs());
        }
    }
    worst
}

/// Exact determinant by elimination.
pub fn determinant(m: &Matrix) -> Rational {
    let n = m.len();
    let mut a = m.clone();
    let mut det = rational::one();
    for col in 0..n {
        let Some(pivot) = (col..n).find(|&r| a[r][col] != rational::zero()) else {
            return rational::zero();
        };
        if pivot != col {
            a.swap(col, pivot);
            det = -det;
        }
        let p = a[col][col].clone();
        det *= &p;
        for r in col + 1..n {
            let factor = &a[r][col] / &p;
            let pivot_row = a[col].clone();
            for (x, y) in a[r].iter_mut().zip(pivot_row) {
                *x -= &factor * y;
            }
        }
    }
    det
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SearchError {
    #[error("matrix is not a rotation: orthogonality error {error}, determinant {det}")]
    NotRotation { error: String, det: String },
    #[error("layer variable `{0}` is not a real-valued model variable")]
    BadLayerVariable(String),
    #[error("layer variables `{0}` and `{1}` are in different strata: one reads the other")]
    NotOneStratum(String, String),
    #[error("cells over the layer must cover it exactly: {0}")]
    BadCells(String),
    #[error("budget must be positive")]
    ZeroBudget,
    #[error("model is invalid for the float objective: {0}")]
    Program(String),
    #[error(transparent)]
    Translate(#[from] TranslateError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
}

fn check_layer(model: &CausalModel, layer: &[String]) -> Result<(), SearchError> {
    for v in layer {
        if model.domain(v) != Some(&ValueDomain::Real) {
            return Err(SearchError::BadLayerVariable(v.clone()));
        }
    }
    for a in layer {
        for b in layer {
            if model.parents(b).contains(a) {
                return Err(SearchError::NotOneStratum(a.clone(), b.clone()));
            }
        }
    }
    Ok(())
}

/// Re-expresses `layer` in the basis `h R`: upstream mechanisms produce
/// the rotated coordinates and downstream mechanisms read them through
/// `R^-1`. The input-output behavior is unchanged. `R` must be orthogonal
/// to within 1e-9 with determinant +1.
pub fn rotate_layer_matrix(model: &CausalModel, layer: &[String], r: &Matrix) -> Result<CausalModel, SearchError> {
    check_layer(model, layer)?;
    let error = orthogonality_error(r);
    let det = determinant(r);
    if error > 1e-9 || det <= rational::zero() || r.len() != layer.len() {
        return Err(SearchError::NotRotation {
            error: format!("{error:e}"),
            det: rational::format_rational(&det),
        });
    }
    let t = Translation::linear_layer(model, layer, r, layer)?;
    Ok(translate::translate_model(model, &t)?)
}

pub fn rotate_layer(model: &CausalModel, layer: &[String], r: &RotationParam) -> Result<CausalModel, SearchError> {
    rotate_layer_matrix(model, layer, &r.exact_matrix())
}

// ---------------------------------------------------------------------------
// Float evaluation

#[derive(Debug, Clone)]
enum Node {
    Const(f64),
    Var(usize),
    Add(Vec<Node>),
    Mul(Vec<Node>),
    Neg(Box<Node>),
    Relu(Box<Node>),
    Xnor(Box<Node>, Box<Node>),
    And(Vec<Node>),
    Or(Vec<Node>),
    Not(Box<Node>),
    Eq(Box<Node>, Box<Node>),
    Leq(Box<Node>, Box<Node>),
}

fn truth(x: f64) -> bool {
    x > 0.5
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl Node {
    fn compile(e: &Expr, index: &HashMap<String, usize>) -> Result<Node, String> {
        let many = |xs: &[Expr]| xs.iter().map(|x| Node::compile(x, index)).collect::<Result<Vec<_>, _>>();
        let one = |x: &Expr| Node::compile(x, index).map(Box::new);
        Ok(match e {
            Expr::Const(q) => Node::Const(rational::to_f64(q)),
            Expr::Var(name) => Node::Var(*index.get(name).ok_or_else(|| format!("unknown variable `{name}`"))?),
            Expr::Add(xs) => Node::Add(many(xs)?),
            Expr::Mul(xs) => Node::Mul(many(xs)?),
            Expr::Neg(a) => Node::Neg(one(a)?),
            Expr::Relu(a) => Node::Relu(one(a)?),
            Expr::Xnor(a, b) => Node::Xnor(one(a)?, one(b)?),
            Expr::And(xs) => Node::And(many(xs)?),
            Expr::Or(xs) => Node::Or(many(xs)?),
            Expr::Not(a) => Node::Not(one(a)?),
            Expr::Eq(a, b) => Node::Eq(one(a)?, one(b)?),
            Expr::Leq(a, b) => Node::Leq(one(a)?, one(b)?),
        })
    }

    fn eval(&self, env: &[f64]) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::Var(i) => env[*i],
            Node::Add(xs) => xs.iter().map(|x| x.eval(env)).sum(),
            Node::Mul(xs) => xs.iter().map(|x| x.eval(env)).product(),
            Node::Neg(a) => -a.eval(env),
            Node::Relu(a) => a.eval(env).max(0.0),
            Node::Xnor(a, b) => indicator(truth(a.eval(env)) == truth(b.eval(env))),
            Node::And(xs) => indicator(xs.iter().all(|x| truth(x.eval(env)))),
            Node::Or(xs) => indicator(xs.iter().any(|x| truth(x.eval(env)))),
            Node::Not(a) => indicator(!truth(a.eval(env))),
            Node::Eq(a, b) => indicator((a.eval(env) - b.eval(env)).abs() <= FLOAT_EPS),
            Node::Leq(a, b) => indicator(a.eval(env) <= b.eval(env) + FLOAT_EPS),
        }
    }

    /// Surrogate loss pushing an indicator towards `want`: a squared hinge
    /// on the indicator's gap. Non-indicator nodes give a 0/1 loss.
    /// Distance from the threshold of an indicator, if this is one.
    fn gap(&self, env: &[f64]) -> Option<f64> {
        match self {
            Node::Leq(a, b) => Some(a.eval(env) - b.eval(env)),
            Node::Eq(a, b) => Some((a.eval(env) - b.eval(env)).abs()),
            _ => None,
        }
    }

    /// Whether the indicator reads `want` with the clearance certification
    /// asks for.
    fn certifies(&self, env: &[f64], want: f64) -> bool {
        match (self, self.gap(env)) {
            (Node::Leq(..) | Node::Eq(..), Some(gap)) => {
                if truth(want) {
                    gap <= CERT_WITHIN
                } else {
                    gap >= CERT_MARGIN
                }
            }
            _ => (self.eval(env) - want).abs() <= FLOAT_EPS,
        }
    }

    fn hinge(&self, env: &[f64], want: f64, margin: f64) -> f64 {
        let wants_true = truth(want);
        match self {
            Node::Leq(a, b) => {
                let gap = a.eval(env) - b.eval(env);
                if wants_true {
                    gap.max(0.0).powi(2)
                } else {
                    (margin - gap).max(0.0).powi(2)
                }
            }
            Node::Eq(a, b) => {
                let gap = (a.eval(env) - b.eval(env)).abs();
                if wants_true {
                    gap * gap
                } else {
                    (margin - gap).max(0.0).powi(2)
                }
            }
            other => indicator((other.eval(env) - want).abs() > FLOAT_EPS),
        }
    }
}

/// A model compiled to float arithmetic over a dense variable index.
#[derive(Debug, Clone)]
pub struct FloatProgram {
    index: HashMap<String, usize>,
    order: Vec<usize>,
    mechanisms: Vec<Node>,
}

impl FloatProgram {
    pub fn compile(model: &CausalModel) -> Result<Self, SearchError> {
        let index: HashMap<String, usize> = model
            .variables()
            .iter()
            .enumerate()
            .map(|(i, v)| (v.name.clone(), i))
            .collect();
        let order = model
            .topological_order()
            .map_err(|c| SearchError::Program(format!("cycle {}", c.join(" -> "))))?
            .iter()
            .map(|n| index[n])
            .collect();
        let mechanisms = model
            .variables()
            .iter()
            .map(|v| {
                let m = model
                    .mechanism(&v.name)
                    .ok_or_else(|| SearchError::Program(format!("`{}` has no mechanism", v.name)))?;
                Node::compile(m, &index).map_err(SearchError::Program)
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            index,
            order,
            mechanisms,
        })
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn run(&self, overrides: &[Option<f64>]) -> Vec<f64> {
        let mut values = vec![0.0; self.mechanisms.len()];
        for &i in &self.order {
            values[i] = match overrides[i] {
                Some(v) => v,
                None => self.mechanisms[i].eval(&values),
            };
        }
        values
    }
}

// ---------------------------------------------------------------------------
// Objective

#[derive(Debug, Clone)]
pub struct SearchConfig {
    /// The rotated layer, in coordinate order.
    pub layer: Vec<String>,
    /// Alignment over the rotated coordinates. Cells inside the layer are
    /// the interchange cells and must cover it exactly; cells of the high
    /// model's sinks provide the labels.
    pub alignment: Alignment,
    pub budget: usize,
    pub seed: u64,
    /// Line-search resolution, in radians.
    pub tolerance: f64,
    /// Grid points per coordinate scan.
    pub grid: usize,
    pub certify: bool,
}

impl SearchConfig {
    pub fn new(layer: Vec<String>, alignment: Alignment) -> Self {
        Self {
            layer,
            alignment,
            budget: 5000,
            seed: 0,
            tolerance: 1e-10,
            grid: 12,
            certify: true,
        }
    }
}

struct Triple {
    base: usize,
    source: usize,
    cell: usize,
    /// Expected high-level value per output cell.
    expected: Vec<f64>,
    /// Expected high-level value per layer cell.
    expected_cells: Vec<f64>,
}

/// Interchange-intervention accuracy of a network against a high-level
/// model, as a function of the layer rotation.
pub struct Objective {
    program: FloatProgram,
    layer_index: Vec<usize>,
    input_overrides: Vec<Vec<Option<f64>>>,
    layers: Vec<Vec<f64>>,
    cells: Vec<Vec<usize>>,
    outputs: Vec<Node>,
    /// Layer cell maps over rotated coordinates.
    probes: Vec<Node>,
    /// Output indicators as seen by the loss, see [`loss_form`].
    loss_nodes: Vec<Node>,
    margins: Vec<f64>,
    triples: Vec<Triple>,
}

/// IIA together with the surrogate loss driving the line searches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Score {
    pub iia: f64,
    /// Fraction of triples on which every layer cell's map gives the
    /// high-level value, at certification tolerance.
    pub cells: f64,
    pub loss: f64,
}

impl Score {
    /// Higher IIA first, then cell agreement, then lower loss.
    pub fn better_than(&self, other: &Score) -> bool {
        (self.iia, self.cells) > (other.iia, other.cells)
            || ((self.iia, self.cells) == (other.iia, other.cells) && self.loss < other.loss)
    }

    pub fn perfect(&self) -> bool {
        self.iia == 1.0 && self.cells == 1.0
    }
}

/// `leq(y, c)` with `c >= 0` and `y := relu(e)` holds exactly when
/// `leq(e, c)` does; the second form keeps a gradient on the far side of
/// the ReLU. Other maps are returned unchanged.
fn loss_form(map: &Expr, model: &CausalModel) -> Expr {
    if let Expr::Leq(a, b) = map {
        if let (Expr::Var(y), Some(c)) = (a.as_ref(), b.as_const()) {
            if *c >= rational::zero() {
                if let Some(Expr::Relu(inner)) = model.mechanism(y) {
                    return Expr::leq((**inner).clone(), (**b).clone());
                }
            }
        }
    }
    map.clone()
}

impl Objective {
    pub fn new(
        model: &CausalModel,
        high: &CausalModel,
        config: &SearchConfig,
        inputs: &[Assignment],
    ) -> Result<Self, SearchError> {
        check_layer(model, &config.layer)?;
        let program = FloatProgram::compile(model)?;
        let layer_index: Vec<usize> = config
            .layer
            .iter()
            .map(|v| program.index_of(v).ok_or_else(|| SearchError::BadLayerVariable(v.clone())))
            .collect::<Result<_, _>>()?;

        let high_inputs = high.input_variables();
        let high_sinks = high.sink_variables();
        let mut cells = Vec::new();
        let mut cell_highs = Vec::new();
        let mut outputs = Vec::new();
        let mut loss_nodes = Vec::new();
        let mut output_highs = Vec::new();
        let mut covered = Vec::new();
        for cell in config.alignment.cells() {
            let positions: Option<Vec<usize>> = cell
                .low
                .iter()
                .map(|l| config.layer.iter().position(|x| x == l))
                .collect();
            if let Some(pos) = positions {
                covered.extend(pos.iter().copied());
                cells.push(pos);
                cell_highs.push(cell.high.clone());
            } else if high_sinks.contains(&cell.high) {
                outputs.push(Node::compile(&cell.map, &program.index).map_err(SearchError::Program)?);
                loss_nodes.push(Node::compile(&loss_form(&cell.map, model), &program.index).map_err(SearchError::Program)?);
                output_highs.push(cell.high.clone());
            }
        }
        let coordinates: HashMap<String, usize> =
            config.layer.iter().enumerate().map(|(i, v)| (v.clone(), i)).collect();
        let probes = cell_highs
            .iter()
            .map(|h| {
                let cell = config.alignment.cell(h).expect("cell listed above");
                Node::compile(&cell.map, &coordinates)
                    .map_err(|e| SearchError::BadCells(format!("cell `{h}` reads outside the layer: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        covered.sort_unstable();
        if covered != (0..config.layer.len()).collect::<Vec<_>>() {
            return Err(SearchError::BadCells(format!(
                "layer coordinates covered: {covered:?} of {}",
                config.layer.len()
            )));
        }
        if outputs.is_empty() {
            return Err(SearchError::BadCells("no cell for a high-level output".into()));
        }

        let exact_low = model.plan().map_err(|e| SearchError::Program(e.to_string()))?;
        let exact_high = high.plan().map_err(|e| SearchError::Program(e.to_string()))?;
        let mut input_overrides = Vec::new();
        let mut layers = Vec::new();
        let mut high_runs = Vec::new();
        let mut high_input = Vec::new();
        for x in inputs {
            let mut o = vec![None; model.variables().len()];
            for (k, v) in x {
                o[program.index[k]] = Some(rational::to_f64(v));
            }
            let run = program.run(&o);
            layers.push(layer_index.iter().map(|&i| run[i]).collect());
            input_overrides.push(o);
            let low_run = exact_low
                .run(x, &Semantics::Exact)
                .map_err(|e| SearchError::Program(e.to_string()))?;
            let tau = config.alignment.map(&low_run, &Semantics::Exact);
            let hx: Assignment = high_inputs
                .iter()
                .map(|h| {
                    tau.values
                        .get(h)
                        .map(|v| (h.clone(), v.clone()))
                        .ok_or_else(|| SearchError::BadCells(format!("high-level input `{h}` is not mapped")))
                })
                .collect::<Result<_, _>>()?;
            high_runs.push(
                exact_high
                    .run(&hx, &Semantics::Exact)
                    .map_err(|e| SearchError::Program(e.to_string()))?,
            );
            high_input.push(hx);
        }

        let margins = loss_nodes
            .iter()
            .map(|node| {
                input_overrides
                    .iter()
                    .filter_map(|o| node.gap(&program.run(o)))
                    .filter(|g| *g > FLOAT_EPS)
                    .fold(f64::INFINITY, f64::min)
                    .mul_add(0.5, 0.0)
                    .clamp(HINGE_MARGIN, f64::MAX)
            })
            .collect();

        let mut triples = Vec::new();
        for base in 0..inputs.len() {
            for source in 0..inputs.len() {
                for (cell, high_name) in cell_highs.iter().enumerate() {
                    let mut overrides = high_input[base].clone();
                    overrides.insert(high_name.clone(), high_runs[source][high_name].clone());
                    let run = exact_high
                        .run(&overrides, &Semantics::Exact)
                        .map_err(|e| SearchError::Program(e.to_string()))?;
                    let expected = output_highs.iter().map(|h| rational::to_f64(&run[h])).collect();
                    let expected_cells = cell_highs.iter().map(|h| rational::to_f64(&run[h])).collect();
                    triples.push(Triple {
                        base,
                        source,
                        cell,
                        expected,
                        expected_cells,
                    });
                }
            }
        }
        Ok(Self {
            program,
            layer_index,
            input_overrides,
            layers,
            cells,
            outputs,
            probes,
            loss_nodes,
            margins,
            triples,
        })
    }

    pub fn triples(&self) -> usize {
        self.triples.len()
    }

    pub fn score(&self, r: &RotationParam) -> Score {
        self.score_matrix(&r.matrix())
    }

    /// [`Objective::score`] for a float rotation matrix.
    pub fn score_matrix(&self, m: &[Vec<f64>]) -> Score {
        let n = m.len();
        let rotate = |h: &[f64]| -> Vec<f64> { (0..n).map(|j| (0..n).map(|i| h[i] * m[i][j]).sum()).collect() };
        let rotated: Vec<Vec<f64>> = self.layers.iter().map(|h| rotate(h)).collect();
        let per_triple: Vec<(bool, bool, f64)> = self
            .triples
            .par_iter()
            .map(|t| {
                let mut c = rotated[t.base].clone();
                for &k in &self.cells[t.cell] {
                    c[k] = rotated[t.source][k];
                }
                let mut cells_ok = true;
                let mut loss = 0.0;
                for (node, &want) in self.probes.iter().zip(&t.expected_cells) {
                    cells_ok &= node.certifies(&c, want);
                    loss += node.hinge(&c, want, HINGE_MARGIN);
                }
                let mut overrides = self.input_overrides[t.base].clone();
                for (i, &li) in self.layer_index.iter().enumerate() {
                    let h: f64 = (0..n).map(|j| c[j] * m[i][j]).sum();
                    overrides[li] = Some(h);
                }
                let values = self.program.run(&overrides);
                let mut ok = true;
                for (node, &want) in self.outputs.iter().zip(&t.expected) {
                    ok &= (node.eval(&values) - want).abs() <= FLOAT_EPS;
                }
                for ((node, &want), &margin) in self.loss_nodes.iter().zip(&t.expected).zip(&self.margins) {
                    loss += node.hinge(&values, want, margin);
                }
                (ok, cells_ok, loss)
            })
            .collect();
        let total = self.triples.len() as f64;
        let hits = per_triple.iter().filter(|t| t.0).count();
        let cell_hits = per_triple.iter().filter(|t| t.1).count();
        Score {
            iia: hits as f64 / total,
            cells: cell_hits as f64 / total,
            loss: per_triple.iter().map(|t| t.2).sum::<f64>() / total,
        }
    }
}

/// IIA of `model` against `high` with the layer read through `r`.
pub fn iia(
    model: &CausalModel,
    high: &CausalModel,
    r: &RotationParam,
    config: &SearchConfig,
    inputs: &[Assignment],
) -> Result<f64, SearchError> {
    Ok(Objective::new(model, high, config, inputs)?.score(r).iia)
}

// ---------------------------------------------------------------------------
// Search

#[derive(Debug, Clone, Serialize)]
pub struct SearchOutcome {
    pub rotation: RotationParam,
    pub score: Score,
    pub evaluations: usize,
    /// Evaluations spent when IIA first reached 1.0.
    pub first_perfect: Option<usize>,
    pub certified: bool,
    pub report: Option<VerificationReport>,
    #[serde(skip)]
    pub translation: Option<Translation>,
}

type FloatMatrix = Vec<Vec<f64>>;

struct Budgeted<'a> {
    objective: &'a Objective,
    used: usize,
    budget: usize,
    best: (FloatMatrix, Score),
    first_perfect: Option<usize>,
}

impl Budgeted<'_> {
    fn exhausted(&self) -> bool {
        self.used >= self.budget
    }

    fn eval(&mut self, r: &FloatMatrix) -> Score {
        self.used += 1;
        let s = self.objective.score_matrix(r);
        if s.better_than(&self.best.1) {
            self.best = (r.clone(), s);
        }
        if s.iia == 1.0 && self.first_perfect.is_none() {
            self.first_perfect = Some(self.used);
        }
        s
    }
}

/// `r` right-multiplied by the rotation by `theta` in plane `(p, q)`.
fn turn(r: &FloatMatrix, (p, q): (usize, usize), theta: f64) -> FloatMatrix {
    let (s, c) = theta.sin_cos();
    let mut out = r.clone();
    for row in out.iter_mut() {
        let (a, b) = (row[p], row[q]);
        row[p] = a * c + b * s;
        row[q] = -a * s + b * c;
    }
    out
}

/// Angles `theta` with `RotationParam::new(n, theta).matrix() == r` up to
/// rounding, for `r` in SO(n). Peels the first column into the planes
/// `(0, 1) .. (0, n-1)` and recurses on the remaining block.
pub fn decompose(r: &[Vec<f64>]) -> RotationParam {
    let n = r.len();
    let mut rest: FloatMatrix = r.to_vec();
    let mut angles = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for p in 0..n {
        // Column p of the remaining block is (c_1 c_2 .., s_1 c_2 .., .., s_last)
        // in rows p.., with factor k the plane (p, p + 1 + k).
        let mut theta = vec![0.0; n - p - 1];
        let mut remaining = (p..n).map(|q| rest[q][p] * rest[q][p]).sum::<f64>().sqrt();
        for q in (p + 1..n).rev() {
            let s = rest[q][p];
            let c = (remaining * remaining - s * s).max(0.0).sqrt();
            theta[q - p - 1] = s.atan2(c);
            remaining = c;
        }
        if p + 1 < n {
            // The first factor also carries the sign of the diagonal entry.
            theta[0] = rest[p + 1][p].atan2(rest[p][p]);
        }
        for (k, t) in theta.iter().enumerate() {
            rest = turn_left_inverse(&rest, (p, p + 1 + k), *t);
        }
        angles.extend(theta);
    }
    RotationParam::new(n, angles)
}

/// `G^T r` for the plane rotation `G` by `theta` in plane `(p, q)`.
fn turn_left_inverse(r: &FloatMatrix, (p, q): (usize, usize), theta: f64) -> FloatMatrix {
    let (s, c) = theta.sin_cos();
    let mut out = r.clone();
    for j in 0..r.len() {
        let (a, b) = (r[p][j], r[q][j]);
        out[p][j] = c * a + s * b;
        out[q][j] = -s * a + c * b;
    }
    out
}

/// Golden-section minimization of the loss of `at(x)` for `x` in `[lo, hi]`.
fn golden(state: &mut Budgeted<'_>, at: &dyn Fn(f64) -> FloatMatrix, mut lo: f64, mut hi: f64, tol: f64) -> (f64, Score) {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = state.eval(&at(x1));
    if state.exhausted() {
        return (x1, f1);
    }
    let mut f2 = state.eval(&at(x2));
    while hi - lo > tol && !state.exhausted() {
        if f1.loss <= f2.loss {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = state.eval(&at(x1));
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = state.eval(&at(x2));
        }
    }
    if f2.loss < f1.loss {
        (x2, f2)
    } else {
        (x1, f1)
    }
}

/// Sweeps without a tenfold loss reduction before a restart.
const PATIENCE: usize = 6;

/// `base` followed by the plane rotations `G_k(u_k)` in lexicographic
/// plane order.
fn displaced(base: &FloatMatrix, coords: &[(usize, usize)], u: &[f64]) -> FloatMatrix {
    coords
        .iter()
        .zip(u)
        .fold(base.clone(), |r, (&plane, &x)| if x == 0.0 { r } else { turn(&r, plane, x) })
}

fn unit(n: usize, k: usize) -> Vec<f64> {
    (0..n).map(|i| if i == k { 1.0 } else { 0.0 }).collect()
}

/// Coordinate descent on the surrogate loss over plane angles, applied in
/// the moving frame: a step of `x` in plane `(p, q)` replaces `R` with
/// `R G_pq(x)`.
///
/// Each start opens with one sweep that scans every plane on a coarse grid
/// and refines the best grid point by golden-section search. Later sweeps
/// run golden-section searches along a direction set that starts as the
/// plane axes; after each sweep the net displacement replaces the
/// direction that contributed the largest decrease (Powell's rule), which
/// keeps progress along curved valleys. The first start is the identity,
/// later ones are drawn from the seeded generator. Stops at the budget or
/// at the first rotation with IIA 1.0 whose layer cells also read
/// correctly; the best score seen is returned as lexicographic angles.
pub fn search_rotation(objective: &Objective, n: usize, config: &SearchConfig) -> Result<(RotationParam, Score, usize, Option<usize>), SearchError> {
    if config.budget == 0 {
        return Err(SearchError::ZeroBudget);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let start = RotationParam::identity(n).matrix();
    let mut state = Budgeted {
        objective,
        used: 0,
        budget: config.budget,
        best: (start.clone(), Score { iia: -1.0, cells: -1.0, loss: f64::INFINITY }),
        first_perfect: None,
    };
    let finish = |state: &Budgeted<'_>| (decompose(&state.best.0), state.best.1, state.used, state.first_perfect);
    let coords = planes(n);
    let m = coords.len();
    let step = 2.0 * PI / config.grid.max(2) as f64;
    let mut restart = 0;
    while !state.exhausted() {
        let r = if restart == 0 {
            start.clone()
        } else {
            RotationParam::random(n, &mut rng).matrix()
        };
        restart += 1;
        let s = state.eval(&r);
        let mut current = (r, s);
        if s.perfect() || m == 0 {
            return Ok(finish(&state));
        }

        // Opening sweep: grid scan plus refinement along each plane.
        for &plane in &coords {
            let mut centre = (0.0, current.1);
            for g in 1..config.grid {
                if state.exhausted() {
                    return Ok(finish(&state));
                }
                let theta = wrap(step * g as f64);
                let s = state.eval(&turn(&current.0, plane, theta));
                if s.loss < centre.1.loss {
                    centre = (theta, s);
                }
            }
            if state.exhausted() {
                return Ok(finish(&state));
            }
            let frame = current.0.clone();
            let (theta, s) = golden(&mut state, &|x| turn(&frame, plane, x), centre.0 - step, centre.0 + step, step * 1e-2);
            if s.loss < centre.1.loss {
                centre = (theta, s);
            }
            if centre.1.loss < current.1.loss {
                current = (turn(&current.0, plane, centre.0), centre.1);
            }
            if current.1.perfect() {
                return Ok(finish(&state));
            }
        }

        let mut directions: Vec<Vec<f64>> = (0..m).map(|k| unit(m, k)).collect();
        let mut widths = vec![step; m];
        let mut checkpoint = current.1.loss;
        let mut since_checkpoint = 0;
        while !state.exhausted() {
            let base = current.0.clone();
            let f0 = current.1.loss;
            let mut u = vec![0.0; m];
            let mut biggest = (0, 0.0);
            for (i, d) in directions.iter().enumerate() {
                if state.exhausted() {
                    return Ok(finish(&state));
                }
                let w = widths[i];
                let from = u.clone();
                let along = |x: f64| {
                    let v: Vec<f64> = from.iter().zip(d).map(|(a, b)| a + x * b).collect();
                    displaced(&base, &coords, &v)
                };
                let (x, s) = golden(&mut state, &along, -w, w, config.tolerance.max(w * 1e-2));
                let before = current.1.loss;
                if s.loss < before {
                    current = (along(x), s);
                    for (a, b) in u.iter_mut().zip(d) {
                        *a += x * b;
                    }
                    if before - s.loss > biggest.1 {
                        biggest = (i, before - s.loss);
                    }
                    widths[i] = (4.0 * x.abs()).clamp(config.tolerance * 16.0, step);
                } else {
                    widths[i] = (widths[i] / 4.0).max(config.tolerance * 16.0);
                }
                if current.1.perfect() {
                    return Ok(finish(&state));
                }
            }
            // Powell's direction update along the sweep's net displacement.
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 && !state.exhausted() {
                let fe = state.eval(&displaced(&base, &coords, &u.iter().map(|x| 2.0 * x).collect::<Vec<_>>())).loss;
                let fnow = current.1.loss;
                let (k, delta) = biggest;
                if fe < f0 && 2.0 * (f0 - 2.0 * fnow + fe) * (f0 - fnow - delta).powi(2) < (f0 - fe).powi(2) * delta {
                    let d: Vec<f64> = u.iter().map(|x| x / norm).collect();
                    let from = u.clone();
                    let along = |x: f64| {
                        let v: Vec<f64> = from.iter().zip(&d).map(|(a, b)| a + x * b).collect();
                        displaced(&base, &coords, &v)
                    };
                    let reach = 4.0 * norm;
                    let (x, s) = golden(&mut state, &along, -reach, reach, config.tolerance.max(norm * 1e-2));
                    if s.loss < current.1.loss {
                        current = (along(x), s);
                    }
                    directions.remove(k);
                    widths.remove(k);
                    directions.push(d);
                    widths.push(norm.clamp(config.tolerance * 16.0, step));
                }
                if current.1.perfect() {
                    return Ok(finish(&state));
                }
            }
            since_checkpoint += 1;
            if current.1.loss < checkpoint / 10.0 {
                checkpoint = current.1.loss;
                since_checkpoint = 0;
            } else if since_checkpoint >= PATIENCE {
                break;
            }
        }
    }
    Ok(finish(&state))
}

fn wrap(theta: f64) -> f64 {
    let mut t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

/// Certification semantics: values within 1e-7 of an indicator threshold
/// count as on it, values within 1e-4 (but not 1e-7) are rejected.
pub fn certification_semantics() -> Semantics {
    Semantics::Tolerant(Tolerance::new(CERT_WITHIN, CERT_MARGIN))
}

/// Searches for a rotation of `config.layer` under which `high` is a
/// constructive abstraction of `model`, then, if IIA reaches 1.0,
/// certifies it with a full abstraction-under-translation check using the
/// exact rational rotation as a linear translation.
pub fn search(
    model: &CausalModel,
    high: &CausalModel,
    config: &SearchConfig,
    inputs: &[Assignment],
) -> Result<SearchOutcome, SearchError> {
    let objective = Objective::new(model, high, config, inputs)?;
    let (rotation, score, evaluations, first_perfect) = search_rotation(&objective, config.layer.len(), config)?;
    let mut outcome = SearchOutcome {
        rotation,
        score,
        evaluations,
        first_perfect,
        certified: false,
        report: None,
        translation: None,
    };
    if score.iia == 1.0 && config.certify {
        let t = Translation::linear_layer(model, &config.layer, &outcome.rotation.exact_matrix(), &config.layer)?;
        let options = AbstractionOptions {
            semantics: certification_semantics(),
            ..AbstractionOptions::default()
        };
        let report = check_abstraction_under_translation(model, high, &t, &config.alignment, inputs, &options)?;
        outcome.certified = report.passed();
        outcome.report = Some(report);
        outcome.translation = Some(t);
    }
    Ok(outcome)
}
