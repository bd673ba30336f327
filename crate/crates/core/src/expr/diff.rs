//! Symbolic differentiation with constant folding.
//!
//! The folding constructors only combine literal constants and drop the
//! additive/multiplicative identities; no algebraic rewriting is attempted.

use super::{Func, Node};

fn c(v: f64) -> Node {
    Node::Const(v)
}

pub(super) fn neg(a: Node) -> Node {
    match a {
        Node::Const(v) => c(-v),
        Node::Neg(inner) => *inner,
        a => Node::Neg(Box::new(a)),
    }
}

pub(super) fn add(a: Node, b: Node) -> Node {
    match (a, b) {
        (Node::Const(x), Node::Const(y)) => c(x + y),
        (Node::Const(z), b) if z == 0.0 => b,
        (a, Node::Const(z)) if z == 0.0 => a,
        (a, b) => Node::Add(Box::new(a), Box::new(b)),
    }
}

pub(super) fn sub(a: Node, b: Node) -> Node {
    match (a, b) {
        (Node::Const(x), Node::Const(y)) => c(x - y),
        (a, Node::Const(z)) if z == 0.0 => a,
        (Node::Const(z), b) if z == 0.0 => neg(b),
        (a, b) => Node::Sub(Box::new(a), Box::new(b)),
    }
}

pub(super) fn mul(a: Node, b: Node) -> Node {
    match (a, b) {
        (Node::Const(x), Node::Const(y)) => c(x * y),
        (Node::Const(z), _) | (_, Node::Const(z)) if z == 0.0 => c(0.0),
        (Node::Const(o), b) if o == 1.0 => b,
        (a, Node::Const(o)) if o == 1.0 => a,
        (Node::Const(m), b) if m == -1.0 => neg(b),
        (a, Node::Const(m)) if m == -1.0 => neg(a),
        (a, b) => Node::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Node, b: Node) -> Node {
    match (a, b) {
        (Node::Const(x), Node::Const(y)) if y != 0.0 => c(x / y),
        (Node::Const(z), _) if z == 0.0 => c(0.0),
        (a, Node::Const(o)) if o == 1.0 => a,
        (a, b) => Node::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Node, k: i32) -> Node {
    match (a, k) {
        (_, 0) => c(1.0),
        (a, 1) => a,
        (Node::Const(x), k) if x != 0.0 || k > 0 => c(super::powi(x, k)),
        (a, k) => Node::Pow(Box::new(a), k),
    }
}

fn call(f: Func, a: Node) -> Node {
    Node::Call(f, Box::new(a))
}

pub(super) fn derivative(node: &Node, axis: usize) -> Node {
    match node {
        Node::Const(_) => c(0.0),
        Node::Var(i) => c(if *i == axis { 1.0 } else { 0.0 }),
        Node::Neg(a) => neg(derivative(a, axis)),
        Node::Add(a, b) => add(derivative(a, axis), derivative(b, axis)),
        Node::Sub(a, b) => sub(derivative(a, axis), derivative(b, axis)),
        Node::Mul(a, b) => add(
            mul(derivative(a, axis), (**b).clone()),
            mul((**a).clone(), derivative(b, axis)),
        ),
        Node::Div(a, b) => {
            // (a'b - ab') / b^2
            let num = sub(
                mul(derivative(a, axis), (**b).clone()),
                mul((**a).clone(), derivative(b, axis)),
            );
            div(num, pow((**b).clone(), 2))
        }
        Node::Pow(a, k) => {
            let da = derivative(a, axis);
            mul(mul(c(*k as f64), pow((**a).clone(), k - 1)), da)
        }
        Node::Call(f, a) => {
            let da = derivative(a, axis);
            let outer = match f {
                Func::Exp => call(Func::Exp, (**a).clone()),
                Func::Ln => return div(da, (**a).clone()),
                Func::Sin => call(Func::Cos, (**a).clone()),
                Func::Cos => neg(call(Func::Sin, (**a).clone())),
            };
            mul(outer, da)
        }
    }
}
