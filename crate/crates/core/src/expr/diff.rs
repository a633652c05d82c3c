//! Symbolic differentiation and light algebraic simplification.

use super::{BinOp, Func, Func2, Node};

fn num(c: f64) -> Node {
    Node::Num(c)
}

fn bin(op: BinOp, a: Node, b: Node) -> Node {
    Node::Bin(op, Box::new(a), Box::new(b))
}

fn call(fun: Func, a: Node) -> Node {
    Node::Call(fun, Box::new(a))
}

/// d(node)/d(var k), unsimplified.
pub(crate) fn derivative(node: &Node, k: usize) -> Node {
    match node {
        Node::Num(_) => num(0.0),
        Node::Var(i) => num(if *i == k { 1.0 } else { 0.0 }),
        Node::Neg(a) => Node::Neg(Box::new(derivative(a, k))),
        Node::Bin(op, a, b) => {
            let da = derivative(a, k);
            let db = derivative(b, k);
            let (a, b) = (a.as_ref().clone(), b.as_ref().clone());
            match op {
                BinOp::Add => bin(BinOp::Add, da, db),
                BinOp::Sub => bin(BinOp::Sub, da, db),
                BinOp::Mul => bin(
                    BinOp::Add,
                    bin(BinOp::Mul, da, b),
                    bin(BinOp::Mul, a, db),
                ),
                BinOp::Div => bin(
                    BinOp::Div,
                    bin(
                        BinOp::Sub,
                        bin(BinOp::Mul, da, b.clone()),
                        bin(BinOp::Mul, a, db),
                    ),
                    Node::Pow(Box::new(b), 2),
                ),
            }
        }
        Node::Pow(a, n) => {
            if *n == 0 {
                return num(0.0);
            }
            let da = derivative(a, k);
            bin(
                BinOp::Mul,
                bin(
                    BinOp::Mul,
                    num(f64::from(*n)),
                    Node::Pow(a.clone(), n - 1),
                ),
                da,
            )
        }
        Node::Call(fun, a) => {
            let da = derivative(a, k);
            let a = a.as_ref().clone();
            let outer = match fun {
                Func::Sin => call(Func::Cos, a),
                Func::Cos => Node::Neg(Box::new(call(Func::Sin, a))),
                Func::Exp => call(Func::Exp, a),
                Func::Log => return bin(BinOp::Div, da, a),
                Func::Sqrt => {
                    return bin(
                        BinOp::Div,
                        da,
                        bin(BinOp::Mul, num(2.0), call(Func::Sqrt, a)),
                    )
                }
                // d|x|/dx := sign(x), sign(0) = 0
                Func::Abs => call(Func::Sign, a),
                Func::Sign | Func::Step => return num(0.0),
            };
            bin(BinOp::Mul, outer, da)
        }
        Node::Call2(fun, a, b) => {
            let da = derivative(a, k);
            let db = derivative(b, k);
            let (a, b) = (a.as_ref().clone(), b.as_ref().clone());
            // active branch; step(0) = 1 makes the first argument win ties
            let first_active = match fun {
                Func2::Min => call(Func::Step, bin(BinOp::Sub, b, a)),
                Func2::Max => call(Func::Step, bin(BinOp::Sub, a, b)),
            };
            bin(
                BinOp::Add,
                bin(BinOp::Mul, first_active.clone(), da),
                bin(
                    BinOp::Mul,
                    bin(BinOp::Sub, num(1.0), first_active),
                    db,
                ),
            )
        }
    }
}

fn is_num(node: &Node, c: f64) -> bool {
    matches!(node, Node::Num(v) if *v == c)
}

/// Bottom-up constant folding and removal of additive/multiplicative
/// identities. `0*e` folds to 0 even when `e` could fail to evaluate.
pub(crate) fn simplify(node: Node) -> Node {
    match node {
        Node::Num(_) | Node::Var(_) => node,
        Node::Neg(a) => match simplify(*a) {
            Node::Num(c) => num(-c),
            Node::Neg(inner) => *inner,
            other => Node::Neg(Box::new(other)),
        },
        Node::Pow(a, n) => {
            let a = simplify(*a);
            match (n, &a) {
                (0, _) => num(1.0),
                (1, _) => a,
                (_, Node::Num(c)) if !(n < 0 && *c == 0.0) => num(c.powi(n)),
                _ => Node::Pow(Box::new(a), n),
            }
        }
        Node::Call(fun, a) => {
            let a = simplify(*a);
            if let Node::Num(c) = a {
                let folded = super::eval_node(&Node::Call(fun, Box::new(num(c))), &[]);
                if let Ok(v) = folded {
                    if v.is_finite() {
                        return num(v);
                    }
                }
            }
            call(fun, a)
        }
        Node::Call2(fun, a, b) => {
            let a = simplify(*a);
            let b = simplify(*b);
            if let (Node::Num(x), Node::Num(y)) = (&a, &b) {
                let v = match fun {
                    Func2::Min => {
                        if x <= y {
                            *x
                        } else {
                            *y
                        }
                    }
                    Func2::Max => {
                        if x >= y {
                            *x
                        } else {
                            *y
                        }
                    }
                };
                return num(v);
            }
            Node::Call2(fun, Box::new(a), Box::new(b))
        }
        Node::Bin(op, a, b) => {
            let a = simplify(*a);
            let b = simplify(*b);
            if let (Node::Num(x), Node::Num(y)) = (&a, &b) {
                let v = match op {
                    BinOp::Add => Some(x + y),
                    BinOp::Sub => Some(x - y),
                    BinOp::Mul => Some(x * y),
                    BinOp::Div if *y != 0.0 => Some(x / y),
                    BinOp::Div => None,
                };
                if let Some(v) = v {
                    return num(v);
                }
            }
            match op {
                BinOp::Add if is_num(&a, 0.0) => b,
                BinOp::Add | BinOp::Sub if is_num(&b, 0.0) => a,
                BinOp::Sub if is_num(&a, 0.0) => simplify(Node::Neg(Box::new(b))),
                BinOp::Mul if is_num(&a, 0.0) || is_num(&b, 0.0) => num(0.0),
                BinOp::Mul if is_num(&a, 1.0) => b,
                BinOp::Mul | BinOp::Div if is_num(&b, 1.0) => a,
                BinOp::Mul if is_num(&a, -1.0) => simplify(Node::Neg(Box::new(b))),
                BinOp::Mul if is_num(&b, -1.0) => simplify(Node::Neg(Box::new(a))),
                BinOp::Div if is_num(&a, 0.0) => num(0.0),
                _ => bin(op, a, b),
            }
        }
    }
}
