use super::{powi, Func, Node};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    Const(f64),
    Var(usize),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Pow(i32),
    Call(Func),
}

/// Postfix form of an expression for hot loops.
///
/// Evaluation is unchecked: domain violations surface as NaN or infinities
/// instead of [`EvalError`](super::EvalError), so callers check finiteness
/// of whatever they reduce.
#[derive(Clone, Debug)]
pub struct Program {
    ops: Vec<Op>,
    depth: usize,
    dimension: usize,
}

const INLINE_STACK: usize = 32;

impl Program {
    pub(super) fn compile(root: &Node, dimension: usize) -> Program {
        let mut ops = Vec::new();
        emit(root, &mut ops);
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Var(_) => depth += 1,
                Op::Add | Op::Sub | Op::Mul | Op::Div => depth -= 1,
                Op::Neg | Op::Pow(_) | Op::Call(_) => {}
            }
            max_depth = max_depth.max(depth);
        }
        Program {
            ops,
            depth: max_depth,
            dimension,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// The literal value when the program is a single constant.
    pub fn as_constant(&self) -> Option<f64> {
        match self.ops.as_slice() {
            [Op::Const(c)] => Some(*c),
            _ => None,
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dimension);
        if let [op] = self.ops.as_slice() {
            return match op {
                Op::Const(c) => *c,
                Op::Var(i) => x[*i],
                _ => unreachable!(),
            };
        }
        if self.depth <= INLINE_STACK {
            let mut stack = [0.0f64; INLINE_STACK];
            run(&self.ops, x, &mut stack)
        } else {
            let mut stack = vec![0.0f64; self.depth];
            run(&self.ops, x, &mut stack)
        }
    }
}

impl Program {
    /// Evaluates `L` points at once; `x[i]` holds coordinate `i` of every
    /// lane. Each lane sees exactly the operations of [`Program::eval`], so
    /// results agree bit for bit. `stack` is scratch space reused across
    /// calls.
    pub fn eval_lanes<const L: usize>(
        &self,
        x: &[[f64; L]],
        stack: &mut Vec<[f64; L]>,
        out: &mut [f64; L],
    ) {
        debug_assert_eq!(x.len(), self.dimension);
        stack.clear();
        for op in &self.ops {
            match *op {
                Op::Const(c) => stack.push([c; L]),
                Op::Var(i) => stack.push(x[i]),
                Op::Neg => stack.last_mut().unwrap().iter_mut().for_each(|v| *v = -*v),
                Op::Pow(k) => powi_lanes(stack.last_mut().unwrap(), k),
                Op::Call(f) => stack
                    .last_mut()
                    .unwrap()
                    .iter_mut()
                    .for_each(|v| *v = f.apply(*v)),
                Op::Add | Op::Sub | Op::Mul | Op::Div => {
                    let b = stack.pop().unwrap();
                    let a = stack.last_mut().unwrap();
                    match *op {
                        Op::Add => a.iter_mut().zip(&b).for_each(|(a, b)| *a += b),
                        Op::Sub => a.iter_mut().zip(&b).for_each(|(a, b)| *a -= b),
                        Op::Mul => a.iter_mut().zip(&b).for_each(|(a, b)| *a *= b),
                        _ => a.iter_mut().zip(&b).for_each(|(a, b)| *a /= b),
                    }
                }
            }
        }
        *out = stack[0];
    }
}

/// Lanewise [`powi`] with the same multiplication sequence.
#[inline]
fn powi_lanes<const L: usize>(v: &mut [f64; L], k: i32) {
    let mut a = *v;
    let mut r = [1.0; L];
    let mut e = k.unsigned_abs();
    loop {
        if e & 1 == 1 {
            r.iter_mut().zip(&a).for_each(|(r, a)| *r *= a);
        }
        e >>= 1;
        if e == 0 {
            break;
        }
        a.iter_mut().for_each(|a| *a *= *a);
    }
    if k < 0 {
        r.iter_mut().for_each(|r| *r = 1.0 / *r);
    }
    *v = r;
}

#[inline]
fn run(ops: &[Op], x: &[f64], stack: &mut [f64]) -> f64 {
    let mut top = 0usize;
    for op in ops {
        match *op {
            Op::Const(c) => {
                stack[top] = c;
                top += 1;
            }
            Op::Var(i) => {
                stack[top] = x[i];
                top += 1;
            }
            Op::Neg => stack[top - 1] = -stack[top - 1],
            Op::Pow(k) => stack[top - 1] = powi(stack[top - 1], k),
            Op::Call(f) => stack[top - 1] = f.apply(stack[top - 1]),
            Op::Add | Op::Sub | Op::Mul | Op::Div => {
                top -= 1;
                let b = stack[top];
                let a = &mut stack[top - 1];
                match *op {
                    Op::Add => *a += b,
                    Op::Sub => *a -= b,
                    Op::Mul => *a *= b,
                    _ => *a /= b,
                }
            }
        }
    }
    stack[0]
}

fn emit(node: &Node, ops: &mut Vec<Op>) {
    match node {
        Node::Const(c) => ops.push(Op::Const(*c)),
        Node::Var(i) => ops.push(Op::Var(*i)),
        Node::Neg(a) => {
            emit(a, ops);
            ops.push(Op::Neg);
        }
        Node::Pow(a, k) => {
            emit(a, ops);
            ops.push(Op::Pow(*k));
        }
        Node::Call(f, a) => {
            emit(a, ops);
            ops.push(Op::Call(*f));
        }
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            emit(a, ops);
            emit(b, ops);
            ops.push(match node {
                Node::Add(..) => Op::Add,
                Node::Sub(..) => Op::Sub,
                Node::Mul(..) => Op::Mul,
                _ => Op::Div,
            });
        }
    }
}
