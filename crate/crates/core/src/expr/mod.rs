//! A small arithmetic language for constraint potentials.
//!
//! Expressions range over the variables `x1..xn` (with `x`, `y`, `z` as
//! aliases for the first three), real literals, `+ - * /`, integer powers
//! `^`, unary minus and the functions `exp`, `ln`, `sin`, `cos`.
//!
//! ```
//! use congeo_core::expr::Expr;
//!
//! let j = Expr::parse("x1^2 + x2^2", 2).unwrap();
//! assert_eq!(j.evaluate(&[1.0, 1.0]).unwrap(), 2.0);
//! let dj = j.differentiate(0);
//! assert_eq!(dj.evaluate(&[3.0, 0.0]).unwrap(), 6.0);
//! ```

mod diff;
mod parser;
mod program;

use std::fmt;

use thiserror::Error;

pub use parser::{ParseError, ParseErrorKind};
pub use program::Program;

/// Elementary functions available in expressions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Ln,
    Sin,
    Cos,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sin => "sin",
            Func::Cos => "cos",
        }
    }

    pub(crate) fn from_name(name: &str) -> Option<Func> {
        match name {
            "exp" => Some(Func::Exp),
            "ln" => Some(Func::Ln),
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            _ => None,
        }
    }

    #[inline]
    pub(crate) fn apply(self, v: f64) -> f64 {
        match self {
            Func::Exp => v.exp(),
            Func::Ln => v.ln(),
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
        }
    }
}

/// Expression tree. Variables are stored zero-based.
#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, i32),
    Call(Func, Box<Node>),
}

/// Evaluation failure, carrying the printed offending subexpression.
#[derive(Clone, Debug, PartialEq, Error)]
pub enum EvalError {
    #[error("logarithm of non-positive value {value} in `{subexpr}`")]
    LogDomain { subexpr: String, value: f64 },
    #[error("division by zero in `{subexpr}`")]
    DivisionByZero { subexpr: String },
    #[error("non-finite value {value} in `{subexpr}`")]
    NonFinite { subexpr: String, value: f64 },
    #[error("point has {got} coordinates, expression expects {expected}")]
    Arity { expected: usize, got: usize },
}

/// A parsed expression together with its declared dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    root: Node,
    dimension: usize,
}

impl Expr {
    pub fn parse(source: &str, dimension: usize) -> Result<Expr, ParseError> {
        parser::parse(source, dimension)
    }

    /// Wraps an existing tree. Panics if a variable index exceeds `dimension`.
    pub fn from_node(root: Node, dimension: usize) -> Expr {
        assert!(
            max_var(&root).is_none_or(|v| v < dimension),
            "variable index out of range for dimension {dimension}"
        );
        Expr { root, dimension }
    }

    pub fn constant(value: f64, dimension: usize) -> Expr {
        Expr {
            root: Node::Const(value),
            dimension,
        }
    }

    pub fn variable(index: usize, dimension: usize) -> Expr {
        Expr::from_node(Node::Var(index), dimension)
    }

    pub fn node(&self) -> &Node {
        &self.root
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// True when the expression is the literal constant zero.
    pub fn is_zero(&self) -> bool {
        matches!(self.root, Node::Const(c) if c == 0.0)
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self.root {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn evaluate(&self, point: &[f64]) -> Result<f64, EvalError> {
        if point.len() != self.dimension {
            return Err(EvalError::Arity {
                expected: self.dimension,
                got: point.len(),
            });
        }
        eval_node(&self.root, point)
    }

    /// Exact symbolic partial derivative along the zero-based `axis`.
    pub fn differentiate(&self, axis: usize) -> Expr {
        assert!(axis < self.dimension, "axis {axis} out of range");
        Expr {
            root: diff::derivative(&self.root, axis),
            dimension: self.dimension,
        }
    }

    /// All first partials, in axis order.
    pub fn gradient(&self) -> Vec<Expr> {
        (0..self.dimension).map(|i| self.differentiate(i)).collect()
    }

    /// Flattens the tree into a stack program for fast repeated evaluation.
    pub fn compile(&self) -> Program {
        Program::compile(&self.root, self.dimension)
    }

    pub fn add(&self, other: &Expr) -> Expr {
        self.check_dim(other);
        Expr {
            root: diff::add(self.root.clone(), other.root.clone()),
            dimension: self.dimension,
        }
    }

    pub fn sub(&self, other: &Expr) -> Expr {
        self.check_dim(other);
        Expr {
            root: diff::sub(self.root.clone(), other.root.clone()),
            dimension: self.dimension,
        }
    }

    pub fn scale(&self, factor: f64) -> Expr {
        Expr {
            root: diff::mul(Node::Const(factor), self.root.clone()),
            dimension: self.dimension,
        }
    }

    pub fn neg(&self) -> Expr {
        Expr {
            root: diff::neg(self.root.clone()),
            dimension: self.dimension,
        }
    }

    fn check_dim(&self, other: &Expr) {
        assert_eq!(
            self.dimension, other.dimension,
            "dimension mismatch between expressions"
        );
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root)
    }
}

/// `base^k` by binary exponentiation, inlined so lane loops vectorize.
#[inline(always)]
pub(crate) fn powi(base: f64, k: i32) -> f64 {
    let mut a = base;
    let mut e = k.unsigned_abs();
    let mut r = 1.0;
    loop {
        if e & 1 == 1 {
            r *= a;
        }
        e >>= 1;
        if e == 0 {
            break;
        }
        a *= a;
    }
    if k < 0 {
        1.0 / r
    } else {
        r
    }
}

fn max_var(node: &Node) -> Option<usize> {
    match node {
        Node::Const(_) => None,
        Node::Var(i) => Some(*i),
        Node::Neg(a) | Node::Pow(a, _) | Node::Call(_, a) => max_var(a),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            max_var(a).max(max_var(b))
        }
    }
}

fn checked(node: &Node, value: f64) -> Result<f64, EvalError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(EvalError::NonFinite {
            subexpr: node.to_string(),
            value,
        })
    }
}

fn eval_node(node: &Node, x: &[f64]) -> Result<f64, EvalError> {
    let v = match node {
        Node::Const(c) => *c,
        Node::Var(i) => x[*i],
        Node::Neg(a) => -eval_node(a, x)?,
        Node::Add(a, b) => eval_node(a, x)? + eval_node(b, x)?,
        Node::Sub(a, b) => eval_node(a, x)? - eval_node(b, x)?,
        Node::Mul(a, b) => eval_node(a, x)? * eval_node(b, x)?,
        Node::Div(a, b) => {
            let num = eval_node(a, x)?;
            let den = eval_node(b, x)?;
            if den == 0.0 {
                return Err(EvalError::DivisionByZero {
                    subexpr: node.to_string(),
                });
            }
            num / den
        }
        Node::Pow(a, k) => {
            let base = eval_node(a, x)?;
            if *k < 0 && base == 0.0 {
                return Err(EvalError::DivisionByZero {
                    subexpr: node.to_string(),
                });
            }
            powi(base, *k)
        }
        Node::Call(func, a) => {
            let arg = eval_node(a, x)?;
            if *func == Func::Ln && arg <= 0.0 {
                return Err(EvalError::LogDomain {
                    subexpr: node.to_string(),
                    value: arg,
                });
            }
            func.apply(arg)
        }
    };
    checked(node, v)
}

/// Formats a literal so that it re-parses to the identical `f64`.
fn write_literal(f: &mut fmt::Formatter<'_>, c: f64) -> fmt::Result {
    let mag = c.abs();
    let text = if mag != 0.0 && !(1e-4..1e15).contains(&mag) {
        format!("{:e}", mag)
    } else {
        format!("{}", mag)
    };
    if c.is_sign_negative() {
        write!(f, "(-{text})")
    } else {
        f.write_str(&text)
    }
}

// Printing is fully parenthesized so that re-parsing rebuilds the same tree.
impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Const(c) => write_literal(f, *c),
            Node::Var(i) => write!(f, "x{}", i + 1),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Add(a, b) => write!(f, "({a} + {b})"),
            Node::Sub(a, b) => write!(f, "({a} - {b})"),
            Node::Mul(a, b) => write!(f, "({a} * {b})"),
            Node::Div(a, b) => write!(f, "({a} / {b})"),
            Node::Pow(a, k) if *k < 0 => write!(f, "({a}^(-{}))", -(*k as i64)),
            Node::Pow(a, k) => write!(f, "({a}^{k})"),
            Node::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}
