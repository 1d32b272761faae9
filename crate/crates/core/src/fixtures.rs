//! Builders for the concrete models used throughout: the XNOR circuit, the
//! handcrafted ReLU network that implements it, the recarved circuit and
//! its translation, plus random models and the hierarchical equality task.
//!
//! Variable names: circuit inputs `A1`..`A4`, intermediates `B1`, `B2`
//! (`D1`, `D2` in the recarved circuit), output `C`; network inputs
//! `X1`..`X4`, hidden layers `H1_1`..`H1_4` and `H2_1`..`H2_4`, output `Y`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::abstraction::{Alignment, Cell};
use crate::align_search::{rotate_layer_matrix, RotationParam};
use crate::expr::Expr;
use crate::model::{CausalModel, ValueDomain, Variable};
use crate::rational::{int, parse_rational, ratio, Rational};
use crate::translate::{transpose, Matrix, Translation};

/// Fixed names in the catalog. Rotated networks are addressed as
/// `rotated-N:<seed>` and `rotated-N-signed:<seed>`.
pub const CATALOG: &[&str] = &[
    "circuit-M",
    "network-N",
    "network-N-signed",
    "circuit-M-star",
    "alignment-N-to-M",
    "translation-M-star-to-M",
];

#[derive(Debug, Clone)]
pub enum Fixture {
    Model(CausalModel),
    Alignment(Alignment),
    Translation(Translation),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown fixture `{0}`")]
pub struct UnknownFixture(pub String);

pub fn build(name: &str) -> Result<Fixture, UnknownFixture> {
    let rotated = |prefix: &str, signed: bool| -> Option<Fixture> {
        let seed: u64 = name.strip_prefix(prefix)?.parse().ok()?;
        Some(Fixture::Model(rotated_network(seed, signed)))
    };
    Ok(match name {
        "circuit-M" => Fixture::Model(circuit_m()),
        "network-N" => Fixture::Model(network_n()),
        "network-N-signed" => Fixture::Model(network_n_signed()),
        "circuit-M-star" => Fixture::Model(circuit_m_star()),
        "alignment-N-to-M" => Fixture::Alignment(alignment_n_to_m()),
        "translation-M-star-to-M" => Fixture::Translation(translation_m_star_to_m()),
        _ => rotated("rotated-N:", false)
            .or_else(|| rotated("rotated-N-signed:", true))
            .ok_or_else(|| UnknownFixture(name.to_string()))?,
    })
}

fn boolean(name: &str) -> (String, ValueDomain) {
    (name.to_string(), ValueDomain::Boolean)
}

fn var(name: &str) -> Expr {
    Expr::var(name)
}

fn model(vars: Vec<(String, ValueDomain)>, mechanisms: Vec<(String, Expr)>) -> CausalModel {
    CausalModel::new(
        vars.into_iter().map(|(name, domain)| Variable { name, domain }).collect(),
        mechanisms.into_iter().collect(),
    )
}

fn inputs(prefix: &str) -> Vec<(String, Expr)> {
    (1..=4).map(|i| (format!("{prefix}{i}"), Expr::int(0))).collect()
}

/// Two XNOR gates over pairs of inputs, and an XNOR of their outputs.
pub fn circuit_m() -> CausalModel {
    let names = ["A1", "A2", "A3", "A4", "B1", "B2", "C"];
    let mut mechanisms = inputs("A");
    mechanisms.push(("B1".into(), Expr::xnor(var("A1"), var("A2"))));
    mechanisms.push(("B2".into(), Expr::xnor(var("A3"), var("A4"))));
    mechanisms.push(("C".into(), Expr::xnor(var("B1"), var("B2"))));
    model(names.iter().map(|n| boolean(n)).collect(), mechanisms)
}

/// The recarved circuit: `D1` is the first XNOR, `D2` the quaternary
/// XNOR of XNORs over all four inputs, and `C` copies `D2`.
pub fn circuit_m_star() -> CausalModel {
    let names = ["A1", "A2", "A3", "A4", "D1", "D2", "C"];
    let mut mechanisms = inputs("A");
    mechanisms.push(("D1".into(), Expr::xnor(var("A1"), var("A2"))));
    mechanisms.push((
        "D2".into(),
        Expr::xnor(Expr::xnor(var("A1"), var("A2")), Expr::xnor(var("A3"), var("A4"))),
    ));
    mechanisms.push(("C".into(), var("D2")));
    model(names.iter().map(|n| boolean(n)).collect(), mechanisms)
}

fn matrix(rows: &[&[&str]]) -> Matrix {
    rows.iter()
        .map(|row| row.iter().map(|x| parse_rational(x).expect("fixture entry")).collect())
        .collect()
}

pub fn weights_w1() -> Matrix {
    matrix(&[
        &["1", "-1", "0", "0"],
        &["-1", "1", "0", "0"],
        &["0", "0", "1", "-1"],
        &["0", "0", "-1", "1"],
    ])
}

pub fn weights_w2() -> Matrix {
    matrix(&[
        &["1", "-1", "1", "0"],
        &["1", "-1", "1", "0"],
        &["-1", "1", "0", "1"],
        &["-1", "1", "0", "1"],
    ])
}

/// The output weights as originally given: `(1, 1, 0.99, 0.99)`.
pub fn weights_w3() -> Matrix {
    matrix(&[&["1"], &["1"], &["0.99"], &["0.99"]])
}

/// Output weights with the last two entries negated, `(1, 1, -0.99,
/// -0.99)`. With the original signs an input whose two pairs both differ
/// reaches `Y = 1.98`; the negated entries send it to 0 as the circuit
/// requires.
pub fn weights_w3_signed() -> Matrix {
    matrix(&[&["1"], &["1"], &["-0.99"], &["-0.99"]])
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("weight shapes do not chain: W1 {w1:?}, W2 {w2:?}, W3 {w3:?}")]
pub struct ShapeError {
    pub w1: (usize, usize),
    pub w2: (usize, usize),
    pub w3: (usize, usize),
}

fn shape(m: &Matrix) -> (usize, usize) {
    (m.len(), m.first().map_or(0, Vec::len))
}

/// A two-hidden-layer ReLU network with boolean inputs `X1..Xn`, real
/// hidden units `H1_j = relu([x W1]_j)` and `H2_k = relu([h1 W2]_k)`, and
/// a single real output `Y = relu(h2 W3)`.
pub fn network_from_weights(w1: &Matrix, w2: &Matrix, w3: &Matrix) -> Result<CausalModel, ShapeError> {
    let (s1, s2, s3) = (shape(w1), shape(w2), shape(w3));
    let ragged = |m: &Matrix| m.iter().any(|row| row.len() != shape(m).1);
    if s1.1 != s2.0 || s2.1 != s3.0 || s3.1 != 1 || ragged(w1) || ragged(w2) || ragged(w3) {
        return Err(ShapeError { w1: s1, w2: s2, w3: s3 });
    }
    let xs: Vec<String> = (1..=s1.0).map(|i| format!("X{i}")).collect();
    let h1: Vec<String> = (1..=s1.1).map(|i| format!("H1_{i}")).collect();
    let h2: Vec<String> = (1..=s2.1).map(|i| format!("H2_{i}")).collect();
    let layer = |w: &Matrix, from: &[String], j: usize| {
        Expr::relu(Expr::linear(
            from.iter().enumerate().map(|(i, name)| (w[i][j].clone(), name.as_str())),
            int(0),
        ))
    };
    let mut vars = Vec::new();
    let mut mechanisms = Vec::new();
    for x in &xs {
        vars.push(boolean(x));
        mechanisms.push((x.clone(), Expr::int(0)));
    }
    for (j, h) in h1.iter().enumerate() {
        vars.push((h.clone(), ValueDomain::Real));
        mechanisms.push((h.clone(), layer(w1, &xs, j)));
    }
    for (k, h) in h2.iter().enumerate() {
        vars.push((h.clone(), ValueDomain::Real));
        mechanisms.push((h.clone(), layer(w2, &h1, k)));
    }
    vars.push(("Y".into(), ValueDomain::Real));
    mechanisms.push(("Y".into(), layer(w3, &h2, 0)));
    Ok(model(vars, mechanisms))
}

/// The thirteen-variable network with the original weights.
pub fn network_n() -> CausalModel {
    network_from_weights(&weights_w1(), &weights_w2(), &weights_w3()).unwrap()
}

/// The same network with [`weights_w3_signed`].
pub fn network_n_signed() -> CausalModel {
    network_from_weights(&weights_w1(), &weights_w2(), &weights_w3_signed()).unwrap()
}

pub fn hidden_layer() -> Vec<String> {
    (1..=4).map(|i| format!("H1_{i}")).collect()
}

/// `X_i` for `A_i`; each `B_j` is "the two hidden units of pair j are
/// equal"; `C` is "the output is at most 0". The second hidden layer is
/// forgotten.
pub fn alignment_n_to_m() -> Alignment {
    let mut cells: Vec<Cell> = (1..=4)
        .map(|i| Cell {
            high: format!("A{i}"),
            low: vec![format!("X{i}")],
            map: var(&format!("X{i}")),
        })
        .collect();
    for j in 1..=2 {
        let (a, b) = (format!("H1_{}", 2 * j - 1), format!("H1_{}", 2 * j));
        cells.push(Cell {
            high: format!("B{j}"),
            low: vec![a.clone(), b.clone()],
            map: Expr::eq(var(&a), var(&b)),
        });
    }
    cells.push(Cell {
        high: "C".into(),
        low: vec!["Y".into()],
        map: Expr::leq(var("Y"), Expr::int(0)),
    });
    Alignment::new(cells)
}

/// `(a1, a2, a3, a4, d1, d2, c) -> (a1, a2, a3, a4, d1, xnor(d1, d2), c)`
/// from the recarved circuit's settings to the circuit's. XNOR with a
/// fixed first argument is its own inverse, so the inverse has the same
/// shape.
pub fn translation_m_star_to_m() -> Translation {
    let source = circuit_m_star().variables().to_vec();
    let target = circuit_m().variables().to_vec();
    let mut forward: std::collections::BTreeMap<String, Expr> =
        ["A1", "A2", "A3", "A4", "C"].iter().map(|n| (n.to_string(), var(n))).collect();
    let mut inverse = forward.clone();
    forward.insert("B1".into(), var("D1"));
    forward.insert("B2".into(), Expr::xnor(var("D1"), var("D2")));
    inverse.insert("D1".into(), var("B1"));
    inverse.insert("D2".into(), Expr::xnor(var("B1"), var("B2")));
    Translation::new(source, target, forward, inverse).unwrap()
}

/// The rotation planted in `rotated-N:<seed>`: reading the rotated layer
/// through this rotation recovers the original hidden units.
pub fn planted_rotation(seed: u64) -> RotationParam {
    RotationParam::random(4, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Tangent denominators of the planted rotation's exact form. The planted
/// matrix defines the fixture, so its precision is immaterial; small
/// entries keep exact checks on rotated networks cheap.
pub const PLANTED_DENOMINATOR: u64 = 100;

/// The exact planted matrix `R0`.
pub fn planted_matrix(seed: u64) -> Matrix {
    planted_rotation(seed).exact_matrix_with(PLANTED_DENOMINATOR)
}

/// The network with its first hidden layer presented in the basis
/// `h R0^T`, where `R0 = planted_matrix(seed)`.
pub fn rotated_network(seed: u64, signed: bool) -> CausalModel {
    let base = if signed { network_n_signed() } else { network_n() };
    let r0 = planted_matrix(seed);
    rotate_layer_matrix(&base, &hidden_layer(), &transpose(&r0)).expect("planted rotation is orthogonal")
}

// ---------------------------------------------------------------------------
// Random boolean models

/// A random acyclic boolean model on `n` variables `V0..V{n-1}`. Each
/// variable reads only earlier ones; the first is always an input.
pub fn random_boolean_dag(rng: &mut impl Rng, n: usize) -> CausalModel {
    let names: Vec<String> = (0..n).map(|i| format!("V{i}")).collect();
    let mut mechanisms = Vec::new();
    for i in 0..n {
        let pick = |rng: &mut dyn rand::RngCore| var(&names[rng.random_range(0..i)]);
        let mech = if i == 0 || rng.random_bool(0.25) {
            Expr::int(rng.random_range(0..2))
        } else {
            match rng.random_range(0..5) {
                0 => pick(rng),
                1 => Expr::not(pick(rng)),
                2 => Expr::xnor(pick(rng), pick(rng)),
                3 => Expr::And(vec![pick(rng), pick(rng)]),
                _ => Expr::Or(vec![pick(rng), pick(rng)]),
            }
        };
        mechanisms.push((names[i].clone(), mech));
    }
    model(names.iter().map(|n| boolean(n)).collect(), mechanisms)
}

// ---------------------------------------------------------------------------
// Hierarchical equality task

#[derive(Debug, Clone, PartialEq)]
pub enum Object {
    Symbol(String),
    Vector(Vec<f64>),
}

impl fmt::Display for Object {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Object::Symbol(s) => f.write_str(s),
            Object::Vector(v) => write!(f, "{v:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqualityTaskInstance {
    pub objects: [Object; 4],
    /// Whether the first pair's same/different relation matches the
    /// second pair's.
    pub label: bool,
}

impl EqualityTaskInstance {
    pub fn new(objects: [Object; 4]) -> Self {
        let label = equality_label(&objects);
        Self { objects, label }
    }

    /// Per-pair sameness bits.
    pub fn sameness(&self) -> (bool, bool) {
        (self.objects[0] == self.objects[1], self.objects[2] == self.objects[3])
    }
}

/// `xnor(same(o1, o2), same(o3, o4))`.
pub fn equality_label(objects: &[Object; 4]) -> bool {
    (objects[0] == objects[1]) == (objects[2] == objects[3])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    /// The 16 boolean-coded instances; objects are the symbols `0`, `1`.
    Symbolic,
    /// Unit-norm pseudorandom vectors of dimension `dim`.
    Distributed { dim: usize, seed: u64 },
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Task instances. Symbolic mode ignores `n` and emits the 16 boolean
/// instances in lexicographic order. Distributed mode emits `n` instances;
/// each pair is "same" with probability 1/2, in which case its second
/// object copies the first.
pub fn gen_equality_task(n: usize, encoding: Encoding) -> Vec<EqualityTaskInstance> {
    match encoding {
        Encoding::Symbolic => (0..16u32)
            .map(|bits| {
                let sym = |k: u32| Object::Symbol(((bits >> (3 - k)) & 1).to_string());
                EqualityTaskInstance::new([sym(0), sym(1), sym(2), sym(3)])
            })
            .collect(),
        Encoding::Distributed { dim, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| {
                    let pair = |rng: &mut ChaCha8Rng| {
                        let a = unit_vector(rng, dim);
                        let b = if rng.random_bool(0.5) { a.clone() } else { unit_vector(rng, dim) };
                        (Object::Vector(a), Object::Vector(b))
                    };
                    let (o1, o2) = pair(&mut rng);
                    let (o3, o4) = pair(&mut rng);
                    EqualityTaskInstance::new([o1, o2, o3, o4])
                })
                .collect()
        }
    }
}

/// Rational value of a boolean.
pub fn bit(b: bool) -> Rational {
    if b {
        int(1)
    } else {
        int(0)
    }
}

/// The weight `0.99` as an exact rational.
pub fn point_nine_nine() -> Rational {
    ratio(99, 100)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_builds_and_validates() {
        for name in CATALOG {
            match build(name).unwrap() {
                Fixture::Model(m) => assert!(m.validate().is_empty(), "{name}: {:?}", m.validate()),
                Fixture::Alignment(a) => assert!(!a.cells().is_empty()),
                Fixture::Translation(t) => assert!(t.check_bijective().unwrap()),
            }
        }
        assert!(build("rotated-N:3").is_ok());
        assert_eq!(build("nope").unwrap_err(), UnknownFixture("nope".into()));
        assert!(build("rotated-N:x").is_err());
    }

    #[test]
    fn original_weight_is_exact() {
        assert_eq!(weights_w3()[2][0], point_nine_nine());
    }

    #[test]
    fn shapes_must_chain() {
        assert!(network_from_weights(&weights_w1(), &weights_w3(), &weights_w3()).is_err());
    }

    #[test]
    fn random_dags_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=8 {
            let m = random_boolean_dag(&mut rng, n);
            assert!(m.validate().is_empty());
        }
    }

    #[test]
    fn symbolic_task_has_sixteen_instances() {
        let task = gen_equality_task(1, Encoding::Symbolic);
        assert_eq!(task.len(), 16);
        assert_eq!(task.iter().filter(|t| t.label).count(), 8);
    }

    #[test]
    fn distributed_task_is_deterministic_and_unit_norm() {
        let a = gen_equality_task(20, Encoding::Distributed { dim: 5, seed: 1 });
        let b = gen_equality_task(20, Encoding::Distributed { dim: 5, seed: 1 });
        assert_eq!(a, b);
        for inst in &a {
            for o in &inst.objects {
                let Object::Vector(v) = o else { panic!() };
                assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
