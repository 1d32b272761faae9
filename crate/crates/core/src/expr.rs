//! The mechanism language.
//!
//! Mechanisms are closed expressions over named variables so that they can
//! be evaluated, substituted into one another, and rewritten. The concrete
//! syntax is a parenthesized prefix form:
//!
//! ```text
//! (xnor (var A1) (var A2))
//! (relu (add (var X1) (mul (const -1) (var X2))))
//! (leq (var Y) (const 0))
//! ```
//!
//! Bare numerals are accepted wherever `(const ..)` is, and display always
//! uses the `(const ..)` form.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::rational::{self, format_rational, parse_rational, Rational};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Expr {
    Const(Rational),
    Var(String),
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Neg(Box<Expr>),
    Relu(Box<Expr>),
    /// 1 on (0,0) and (1,1), 0 on the other boolean pairs.
    Xnor(Box<Expr>, Box<Expr>),
    And(Vec<Expr>),
    Or(Vec<Expr>),
    Not(Box<Expr>),
    /// Indicator `[a = b]`.
    Eq(Box<Expr>, Box<Expr>),
    /// Indicator `[a <= b]`.
    Leq(Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("`{op}` expects a boolean operand, got {value}")]
    NonBoolean { op: &'static str, value: String },
    #[error("`{op}` operand gap {gap} lies inside the certification margin")]
    MarginViolation { op: &'static str, gap: String },
}

/// How indicator nodes compare their operands.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Semantics {
    #[default]
    Exact,
    /// Gaps up to `within` count as equal/below, gaps of at least `margin`
    /// count as different/above, anything in between is an error.
    Tolerant(Tolerance),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tolerance {
    pub within: Rational,
    pub margin: Rational,
}

impl Tolerance {
    pub fn new(within: f64, margin: f64) -> Self {
        Self {
            within: rational::approximate(within, u64::MAX / 4),
            margin: rational::approximate(margin, u64::MAX / 4),
        }
    }
}

/// Variable lookup during evaluation.
pub trait Env {
    fn lookup(&self, name: &str) -> Option<&Rational>;
}

impl Env for BTreeMap<String, Rational> {
    fn lookup(&self, name: &str) -> Option<&Rational> {
        self.get(name)
    }
}

impl Env for HashMap<String, Rational> {
    fn lookup(&self, name: &str) -> Option<&Rational> {
        self.get(name)
    }
}

fn boolean(value: bool) -> Rational {
    if value {
        Rational::one()
    } else {
        Rational::zero()
    }
}

fn expect_bool(op: &'static str, value: Rational) -> Result<bool, EvalError> {
    if value.is_zero() {
        Ok(false)
    } else if value.is_one() {
        Ok(true)
    } else {
        Err(EvalError::NonBoolean {
            op,
            value: format_rational(&value),
        })
    }
}

impl Semantics {
    fn equal(&self, a: &Rational, b: &Rational) -> Result<bool, EvalError> {
        match self {
            Semantics::Exact => Ok(a == b),
            Semantics::Tolerant(tol) => {
                let gap = (a - b).abs();
                if gap <= tol.within {
                    Ok(true)
                } else if gap >= tol.margin {
                    Ok(false)
                } else {
                    Err(EvalError::MarginViolation {
                        op: "eq",
                        gap: format!("{:e}", rational::to_f64(&gap)),
                    })
                }
            }
        }
    }

    fn at_most(&self, a: &Rational, b: &Rational) -> Result<bool, EvalError> {
        match self {
            Semantics::Exact => Ok(a <= b),
            Semantics::Tolerant(tol) => {
                let gap = a - b;
                if gap <= tol.within {
                    Ok(true)
                } else if gap >= tol.margin {
                    Ok(false)
                } else {
                    Err(EvalError::MarginViolation {
                        op: "leq",
                        gap: format!("{:e}", rational::to_f64(&gap)),
                    })
                }
            }
        }
    }
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Self {
        Expr::Var(name.into())
    }

    pub fn constant(value: Rational) -> Self {
        Expr::Const(value)
    }

    pub fn int(value: i64) -> Self {
        Expr::Const(rational::int(value))
    }

    pub fn xnor(a: Expr, b: Expr) -> Self {
        Expr::Xnor(Box::new(a), Box::new(b))
    }

    pub fn not(a: Expr) -> Self {
        Expr::Not(Box::new(a))
    }

    pub fn relu(a: Expr) -> Self {
        Expr::Relu(Box::new(a))
    }

    pub fn neg(a: Expr) -> Self {
        Expr::Neg(Box::new(a))
    }

    pub fn eq(a: Expr, b: Expr) -> Self {
        Expr::Eq(Box::new(a), Box::new(b))
    }

    pub fn leq(a: Expr, b: Expr) -> Self {
        Expr::Leq(Box::new(a), Box::new(b))
    }

    /// `sum coef * var + bias` in canonical form.
    pub fn linear<'a>(terms: impl IntoIterator<Item = (Rational, &'a str)>, bias: Rational) -> Self {
        let mut affine = Affine {
            constant: bias,
            ..Affine::default()
        };
        for (coef, name) in terms {
            affine.add_term(name, coef);
        }
        affine.into_expr()
    }

    pub fn as_const(&self) -> Option<&Rational> {
        match self {
            Expr::Const(q) => Some(q),
            _ => None,
        }
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Const(_) | Expr::Var(_) => Vec::new(),
            Expr::Add(xs) | Expr::Mul(xs) | Expr::And(xs) | Expr::Or(xs) => xs.iter().collect(),
            Expr::Neg(a) | Expr::Relu(a) | Expr::Not(a) => vec![a],
            Expr::Xnor(a, b) | Expr::Eq(a, b) | Expr::Leq(a, b) => vec![a, b],
        }
    }

    /// True for node kinds whose output is always 0 or 1.
    pub fn is_boolean_valued(&self) -> bool {
        match self {
            Expr::Xnor(..) | Expr::And(_) | Expr::Or(_) | Expr::Not(_) | Expr::Eq(..) | Expr::Leq(..) => true,
            Expr::Const(q) => rational::is_boolean(q),
            _ => false,
        }
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        if let Expr::Var(name) = self {
            out.insert(name.clone());
        }
        for child in self.children() {
            child.collect_vars(out);
        }
    }

    pub fn evaluate(&self, env: &impl Env) -> Result<Rational, EvalError> {
        self.evaluate_with(env, &Semantics::Exact)
    }

    pub fn evaluate_with(&self, env: &impl Env, sem: &Semantics) -> Result<Rational, EvalError> {
        Ok(match self {
            Expr::Const(q) => q.clone(),
            Expr::Var(name) => env
                .lookup(name)
                .cloned()
                .ok_or_else(|| EvalError::Unbound(name.clone()))?,
            Expr::Add(xs) => {
                // Unreduced running sum, normalized once at the end.
                let mut numer = BigInt::zero();
                let mut denom = BigInt::one();
                for x in xs {
                    let v = x.evaluate_with(env, sem)?;
                    if v.is_zero() {
                        continue;
                    }
                    if *v.denom() == denom {
                        numer += v.numer();
                    } else {
                        numer = numer * v.denom() + v.numer() * &denom;
                        denom *= v.denom();
                    }
                }
                Rational::new(numer, denom)
            }
            Expr::Mul(xs) => {
                let mut numer = BigInt::one();
                let mut denom = BigInt::one();
                for x in xs {
                    let v = x.evaluate_with(env, sem)?;
                    if v.is_zero() {
                        return Ok(Rational::zero());
                    }
                    numer *= v.numer();
                    denom *= v.denom();
                }
                Rational::new(numer, denom)
            }
            Expr::Neg(a) => -a.evaluate_with(env, sem)?,
            Expr::Relu(a) => {
                let v = a.evaluate_with(env, sem)?;
                if v.is_negative() {
                    Rational::zero()
                } else {
                    v
                }
            }
            Expr::Xnor(a, b) => {
                let a = expect_bool("xnor", a.evaluate_with(env, sem)?)?;
                let b = expect_bool("xnor", b.evaluate_with(env, sem)?)?;
                boolean(a == b)
            }
            Expr::And(xs) => {
                let mut acc = true;
                for x in xs {
                    acc &= expect_bool("and", x.evaluate_with(env, sem)?)?;
                }
                boolean(acc)
            }
            Expr::Or(xs) => {
                let mut acc = false;
                for x in xs {
                    acc |= expect_bool("or", x.evaluate_with(env, sem)?)?;
                }
                boolean(acc)
            }
            Expr::Not(a) => boolean(!expect_bool("not", a.evaluate_with(env, sem)?)?),
            Expr::Eq(a, b) => {
                let a = a.evaluate_with(env, sem)?;
                let b = b.evaluate_with(env, sem)?;
                boolean(sem.equal(&a, &b)?)
            }
            Expr::Leq(a, b) => {
                let a = a.evaluate_with(env, sem)?;
                let b = b.evaluate_with(env, sem)?;
                boolean(sem.at_most(&a, &b)?)
            }
        })
    }

    /// Simultaneous substitution of variables.
    pub fn substitute(&self, map: &BTreeMap<String, Expr>) -> Expr {
        match self {
            Expr::Var(name) => map.get(name).cloned().unwrap_or_else(|| self.clone()),
            Expr::Const(_) => self.clone(),
            Expr::Add(xs) => Expr::Add(xs.iter().map(|x| x.substitute(map)).collect()),
            Expr::Mul(xs) => Expr::Mul(xs.iter().map(|x| x.substitute(map)).collect()),
            Expr::And(xs) => Expr::And(xs.iter().map(|x| x.substitute(map)).collect()),
            Expr::Or(xs) => Expr::Or(xs.iter().map(|x| x.substitute(map)).collect()),
            Expr::Neg(a) => Expr::neg(a.substitute(map)),
            Expr::Relu(a) => Expr::relu(a.substitute(map)),
            Expr::Not(a) => Expr::not(a.substitute(map)),
            Expr::Xnor(a, b) => Expr::xnor(a.substitute(map), b.substitute(map)),
            Expr::Eq(a, b) => Expr::eq(a.substitute(map), b.substitute(map)),
            Expr::Leq(a, b) => Expr::leq(a.substitute(map), b.substitute(map)),
        }
    }

    pub fn rename(&self, names: &BTreeMap<String, String>) -> Expr {
        let map = names
            .iter()
            .map(|(from, to)| (from.clone(), Expr::var(to.clone())))
            .collect();
        self.substitute(&map)
    }

    /// Algebraic clean-up that preserves the value on every environment:
    /// constant folding, canonical affine forms, and boolean identities.
    /// Idempotent.
    pub fn simplify(&self) -> Expr {
        let node = match self {
            Expr::Const(_) | Expr::Var(_) => return self.clone(),
            Expr::Add(xs) => simplify_add(xs.iter().map(Expr::simplify).collect()),
            Expr::Mul(xs) => simplify_mul(xs.iter().map(Expr::simplify).collect()),
            Expr::Neg(a) => simplify_add(vec![simplify_mul(vec![Expr::int(-1), a.simplify()])]),
            Expr::Relu(a) => match a.simplify() {
                inner @ Expr::Relu(_) => inner,
                inner if inner.is_boolean_valued() => inner,
                inner => Expr::relu(inner),
            },
            Expr::Not(a) => match a.simplify() {
                Expr::Not(inner) => *inner,
                inner => Expr::not(inner),
            },
            Expr::Xnor(a, b) => Expr::xnor(a.simplify(), b.simplify()),
            Expr::And(xs) => simplify_junction(xs, true),
            Expr::Or(xs) => simplify_junction(xs, false),
            Expr::Eq(a, b) => Expr::eq(a.simplify(), b.simplify()),
            Expr::Leq(a, b) => Expr::leq(a.simplify(), b.simplify()),
        };
        if node.free_vars().is_empty() {
            if let Ok(value) = node.evaluate(&BTreeMap::new()) {
                return Expr::Const(value);
            }
        }
        node
    }

    pub fn as_affine(&self) -> Option<Affine> {
        match self {
            Expr::Const(q) => Some(Affine {
                constant: q.clone(),
                ..Affine::default()
            }),
            Expr::Var(name) => {
                let mut a = Affine::default();
                a.add_term(name, Rational::one());
                Some(a)
            }
            Expr::Add(xs) => {
                let mut acc = Affine::default();
                for x in xs {
                    acc.add(&x.as_affine()?);
                }
                Some(acc)
            }
            Expr::Neg(a) => Some(a.as_affine()?.scaled(&-Rational::one())),
            Expr::Mul(xs) => {
                let mut scale = Rational::one();
                let mut linear: Option<Affine> = None;
                for x in xs {
                    let a = x.as_affine()?;
                    if a.terms.is_empty() {
                        scale *= a.constant;
                    } else if linear.is_none() {
                        linear = Some(a);
                    } else {
                        return None;
                    }
                }
                Some(match linear {
                    Some(a) => a.scaled(&scale),
                    None => Affine {
                        constant: scale,
                        ..Affine::default()
                    },
                })
            }
            _ => None,
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().iter().map(|c| c.node_count()).sum::<usize>()
    }
}

/// `sum coef * atom + constant`, where atoms are variables and the
/// non-linear subterms.
#[derive(Default)]
struct LinearForm {
    terms: BTreeMap<Expr, Rational>,
    constant: Rational,
}

impl LinearForm {
    fn of(e: Expr) -> LinearForm {
        let mut out = LinearForm::default();
        out.absorb(e, &Rational::one());
        out
    }

    fn absorb(&mut self, e: Expr, scale: &Rational) {
        match e {
            Expr::Const(q) => self.constant += q * scale,
            Expr::Add(xs) => xs.into_iter().for_each(|x| self.absorb(x, scale)),
            Expr::Neg(a) => self.absorb(*a, &-scale),
            Expr::Mul(xs) => {
                let mut factor = scale.clone();
                let mut rest: Vec<Expr> = Vec::new();
                for x in xs {
                    match x {
                        Expr::Const(q) => factor *= q,
                        other => rest.push(other),
                    }
                }
                match rest.len() {
                    0 => self.constant += factor,
                    1 => self.absorb(rest.pop().unwrap(), &factor),
                    _ => self.add_atom(Expr::Mul(rest), factor),
                }
            }
            atom => self.add_atom(atom, scale.clone()),
        }
    }

    fn add_atom(&mut self, atom: Expr, coef: Rational) {
        if coef.is_zero() {
            return;
        }
        match self.terms.entry(atom) {
            Entry::Occupied(mut slot) => {
                *slot.get_mut() += coef;
                if slot.get().is_zero() {
                    slot.remove();
                }
            }
            Entry::Vacant(slot) => {
                slot.insert(coef);
            }
        }
    }

    fn into_expr(self) -> Expr {
        let mut parts: Vec<Expr> = self
            .terms
            .into_iter()
            .map(|(atom, coef)| {
                if coef.is_one() {
                    atom
                } else {
                    Expr::Mul(vec![Expr::Const(coef), atom])
                }
            })
            .collect();
        if !self.constant.is_zero() || parts.is_empty() {
            parts.push(Expr::Const(self.constant));
        }
        if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Expr::Add(parts)
        }
    }
}

fn simplify_add(children: Vec<Expr>) -> Expr {
    LinearForm::of(Expr::Add(children)).into_expr()
}

fn simplify_mul(children: Vec<Expr>) -> Expr {
    if children.iter().filter(|c| c.as_const().is_none()).count() > 1 {
        let mut scale = Rational::one();
        let mut others = Vec::new();
        let mut stack = children;
        stack.reverse();
        while let Some(child) = stack.pop() {
            match child {
                Expr::Const(q) => scale *= q,
                Expr::Mul(inner) => stack.extend(inner.into_iter().rev()),
                other => others.push(other),
            }
        }
        if scale.is_zero() {
            return Expr::Const(scale);
        }
        if !scale.is_one() {
            others.insert(0, Expr::Const(scale));
        }
        return Expr::Mul(others);
    }
    LinearForm::of(Expr::Mul(children)).into_expr()
}

fn simplify_junction(children: &[Expr], is_and: bool) -> Expr {
    let (absorbing, neutral) = if is_and {
        (Rational::zero(), Rational::one())
    } else {
        (Rational::one(), Rational::zero())
    };
    let mut kept = Vec::new();
    for child in children.iter().map(Expr::simplify) {
        match child.as_const() {
            Some(q) if *q == absorbing => return Expr::Const(absorbing),
            Some(q) if *q == neutral => {}
            _ => kept.push(child),
        }
    }
    if kept.is_empty() {
        return Expr::Const(neutral);
    }
    if is_and {
        Expr::And(kept)
    } else {
        Expr::Or(kept)
    }
}

/// `sum terms[v] * v + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub terms: BTreeMap<String, Rational>,
    pub constant: Rational,
}

impl Affine {
    fn add_term(&mut self, name: &str, coef: Rational) {
        let entry = self.terms.entry(name.to_string()).or_insert_with(Rational::zero);
        *entry += coef;
        if entry.is_zero() {
            self.terms.remove(name);
        }
    }

    fn add(&mut self, other: &Affine) {
        for (name, coef) in &other.terms {
            self.add_term(name, coef.clone());
        }
        self.constant += &other.constant;
    }

    fn scaled(mut self, by: &Rational) -> Affine {
        if by.is_zero() {
            return Affine::default();
        }
        for coef in self.terms.values_mut() {
            *coef *= by;
        }
        self.constant *= by;
        self
    }

    pub fn into_expr(self) -> Expr {
        let mut parts: Vec<Expr> = self
            .terms
            .into_iter()
            .map(|(name, coef)| {
                if coef.is_one() {
                    Expr::Var(name)
                } else {
                    Expr::Mul(vec![Expr::Const(coef), Expr::Var(name)])
                }
            })
            .collect();
        if !self.constant.is_zero() || parts.is_empty() {
            parts.push(Expr::Const(self.constant));
        }
        if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Expr::Add(parts)
        }
    }
}

// ---------------------------------------------------------------------------
// Concrete syntax
// ---------------------------------------------------------------------------

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self {
            Expr::Const(q) => return write!(f, "(const {})", format_rational(q)),
            Expr::Var(name) => return write!(f, "(var {name})"),
            Expr::Add(_) => "add",
            Expr::Mul(_) => "mul",
            Expr::Neg(_) => "neg",
            Expr::Relu(_) => "relu",
            Expr::Xnor(..) => "xnor",
            Expr::And(_) => "and",
            Expr::Or(_) => "or",
            Expr::Not(_) => "not",
            Expr::Eq(..) => "eq",
            Expr::Leq(..) => "leq",
        };
        write!(f, "({op}")?;
        for child in self.children() {
            write!(f, " {child}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message} at offset {offset}")]
pub struct ParseError {
    /// Byte offset into the parsed text.
    pub offset: usize,
    pub message: String,
}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        parse_expr(text)
    }
}

pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    let mut parser = Parser { text, pos: 0 };
    let expr = parser.expr()?;
    parser.skip_ws();
    if parser.pos != text.len() {
        return Err(parser.error("trailing input after expression"));
    }
    Ok(expr)
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.text[self.pos..].chars().next() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn peek(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn atom(&mut self) -> Result<(usize, &'a str), ParseError> {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_whitespace() || c == '(' || c == ')' {
                break;
            }
            self.pos += c.len_utf8();
        }
        if start == self.pos {
            return Err(self.error("expected an atom"));
        }
        Ok((start, &self.text[start..self.pos]))
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(')') => Err(self.error("unexpected `)`")),
            Some('(') => {
                self.pos += 1;
                let (op_start, op) = self.atom()?;
                let expr = match op {
                    "const" => {
                        let (start, atom) = self.atom()?;
                        Expr::Const(parse_rational(atom).ok_or(ParseError {
                            offset: start,
                            message: format!("invalid number `{atom}`"),
                        })?)
                    }
                    "var" => {
                        let (start, atom) = self.atom()?;
                        if parse_rational(atom).is_some() {
                            return Err(ParseError {
                                offset: start,
                                message: format!("invalid variable name `{atom}`"),
                            });
                        }
                        Expr::Var(atom.to_string())
                    }
                    _ => {
                        let args = self.args()?;
                        build(op, args).map_err(|message| ParseError {
                            offset: op_start,
                            message,
                        })?
                    }
                };
                self.skip_ws();
                if self.peek() != Some(')') {
                    return Err(self.error("expected `)`"));
                }
                self.pos += 1;
                Ok(expr)
            }
            Some(_) => {
                let (start, atom) = self.atom()?;
                parse_rational(atom).map(Expr::Const).ok_or(ParseError {
                    offset: start,
                    message: format!("bare atom `{atom}` is not a number; use (var {atom})"),
                })
            }
        }
    }

    fn args(&mut self) -> Result<Vec<Expr>, ParseError> {
        let mut args = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                Some(')') | None => return Ok(args),
                _ => args.push(self.expr()?),
            }
        }
    }
}

fn build(op: &str, mut args: Vec<Expr>) -> Result<Expr, String> {
    let arity = |n: usize, args: &Vec<Expr>| {
        if args.len() == n {
            Ok(())
        } else {
            Err(format!("`{op}` takes {n} operand(s), got {}", args.len()))
        }
    };
    let nonempty = |args: &Vec<Expr>| {
        if args.is_empty() {
            Err(format!("`{op}` needs at least one operand"))
        } else {
            Ok(())
        }
    };
    Ok(match op {
        "add" => {
            nonempty(&args)?;
            Expr::Add(args)
        }
        "mul" => {
            nonempty(&args)?;
            Expr::Mul(args)
        }
        "and" => {
            nonempty(&args)?;
            Expr::And(args)
        }
        "or" => {
            nonempty(&args)?;
            Expr::Or(args)
        }
        "neg" | "relu" | "not" => {
            arity(1, &args)?;
            let a = args.pop().unwrap();
            match op {
                "neg" => Expr::neg(a),
                "relu" => Expr::relu(a),
                _ => Expr::not(a),
            }
        }
        "xnor" | "eq" | "leq" => {
            arity(2, &args)?;
            let b = args.pop().unwrap();
            let a = args.pop().unwrap();
            match op {
                "xnor" => Expr::xnor(a, b),
                "eq" => Expr::eq(a, b),
                _ => Expr::leq(a, b),
            }
        }
        other => return Err(format!("unknown operator `{other}`")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, ratio};
    use proptest::prelude::*;

    fn env(pairs: &[(&str, Rational)]) -> BTreeMap<String, Rational> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn xnor_truth_table() {
        let e: Expr = "(xnor (var a) (var b))".parse().unwrap();
        for (a, b, out) in [(0, 0, 1), (0, 1, 0), (1, 0, 0), (1, 1, 1)] {
            let v = e.evaluate(&env(&[("a", int(a)), ("b", int(b))])).unwrap();
            assert_eq!(v, int(out), "xnor({a},{b})");
        }
    }

    #[test]
    fn relu_clamps_negative() {
        let e: Expr = "(relu (const -2))".parse().unwrap();
        assert_eq!(e.evaluate(&BTreeMap::new()).unwrap(), int(0));
        let e: Expr = "(relu 7/3)".parse().unwrap();
        assert_eq!(e.evaluate(&BTreeMap::new()).unwrap(), ratio(7, 3));
    }

    #[test]
    fn leq_indicator_above_threshold() {
        let e: Expr = "(leq (const 1.99) (const 0))".parse().unwrap();
        assert_eq!(e.evaluate(&BTreeMap::new()).unwrap(), int(0));
        let e: Expr = "(leq (const 0) (const 0))".parse().unwrap();
        assert_eq!(e.evaluate(&BTreeMap::new()).unwrap(), int(1));
    }

    #[test]
    fn unbound_variable_is_named() {
        let e: Expr = "(add (var x) (var zeta))".parse().unwrap();
        let err = e.evaluate(&env(&[("x", int(1))])).unwrap_err();
        assert_eq!(err, EvalError::Unbound("zeta".into()));
    }

    #[test]
    fn boolean_gates_reject_non_boolean() {
        let e: Expr = "(xnor 2 1)".parse().unwrap();
        assert!(matches!(e.evaluate(&BTreeMap::new()), Err(EvalError::NonBoolean { .. })));
    }

    #[test]
    fn tolerant_indicators() {
        let sem = Semantics::Tolerant(Tolerance::new(1e-7, 1e-4));
        let near: Expr = "(eq (const 1/1000000000) (const 0))".parse().unwrap();
        assert_eq!(near.evaluate_with(&BTreeMap::new(), &sem).unwrap(), int(1));
        let far: Expr = "(eq (const 1/100) (const 0))".parse().unwrap();
        assert_eq!(far.evaluate_with(&BTreeMap::new(), &sem).unwrap(), int(0));
        let ambiguous: Expr = "(leq (const 1/100000) (const 0))".parse().unwrap();
        assert!(matches!(
            ambiguous.evaluate_with(&BTreeMap::new(), &sem),
            Err(EvalError::MarginViolation { .. })
        ));
    }

    #[test]
    fn parse_errors_carry_offsets() {
        let err = parse_expr("(xnor (var A1))").unwrap_err();
        assert_eq!(err.offset, 1);
        let err = parse_expr("(add (var A1) B)").unwrap_err();
        assert_eq!(err.offset, 14);
        let err = parse_expr("(bogus 1)").unwrap_err();
        assert!(err.message.contains("unknown operator"));
        assert!(parse_expr("(var A1) extra").is_err());
        assert!(parse_expr("(relu 1").is_err());
    }

    #[test]
    fn simplify_collects_linear_terms() {
        let e: Expr = "(add (mul 2 (var x)) (neg (var x)) (mul (var y) 0) 3 -3)".parse().unwrap();
        assert_eq!(e.simplify(), Expr::var("x"));
        let e: Expr = "(relu (add (var b) (var a) (var a)))".parse().unwrap();
        assert_eq!(e.simplify().to_string(), "(relu (add (mul (const 2) (var a)) (var b)))");
    }

    #[test]
    fn linear_builder_is_canonical() {
        let e = Expr::linear([(int(1), "b"), (ratio(-1, 2), "a"), (int(0), "c")], int(0));
        assert_eq!(e.to_string(), "(add (mul (const -1/2) (var a)) (var b))");
        assert_eq!(e.simplify(), e);
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (-3i64..4).prop_map(Expr::int),
            prop_oneof![Just("x"), Just("y"), Just("z")].prop_map(Expr::var),
        ];
        leaf.prop_recursive(4, 24, 3, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 1..3).prop_map(Expr::Add),
                prop::collection::vec(inner.clone(), 1..3).prop_map(Expr::Mul),
                inner.clone().prop_map(Expr::neg),
                inner.clone().prop_map(Expr::relu),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::eq(a, b)),
                (inner.clone(), inner).prop_map(|(a, b)| Expr::leq(a, b)),
            ]
        })
    }

    proptest! {
        #[test]
        fn display_parse_round_trip(e in arb_expr()) {
            let text = e.to_string();
            prop_assert_eq!(parse_expr(&text).unwrap(), e);
        }

        #[test]
        fn simplify_preserves_value_and_is_idempotent(
            e in arb_expr(), x in -3i64..4, y in -3i64..4, z in -3i64..4
        ) {
            let env = env(&[("x", int(x)), ("y", int(y)), ("z", int(z))]);
            let s = e.simplify();
            prop_assert_eq!(s.evaluate(&env), e.evaluate(&env));
            prop_assert_eq!(s.simplify(), s);
        }
    }
}
