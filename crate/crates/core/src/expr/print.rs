use std::fmt;

use super::{BinOp, Node};

// Binding strength used to decide where parentheses are required.
const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_NEG: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

fn precedence(node: &Node) -> u8 {
    match node {
        Node::Num(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => PREC_NEG,
        Node::Num(_) | Node::Var(_) | Node::Call(..) | Node::Call2(..) => PREC_ATOM,
        Node::Neg(_) => PREC_NEG,
        Node::Pow(..) => PREC_POW,
        Node::Bin(BinOp::Add | BinOp::Sub, ..) => PREC_ADD,
        Node::Bin(BinOp::Mul | BinOp::Div, ..) => PREC_MUL,
    }
}

fn write_wrapped(
    f: &mut fmt::Formatter<'_>,
    node: &Node,
    vars: &[String],
    parens: bool,
) -> fmt::Result {
    if parens {
        f.write_str("(")?;
        write_node(f, node, vars)?;
        f.write_str(")")
    } else {
        write_node(f, node, vars)
    }
}

/// Writes `node` with the minimal parentheses that reproduce the same tree
/// when parsed back.
pub(crate) fn write_node(f: &mut fmt::Formatter<'_>, node: &Node, vars: &[String]) -> fmt::Result {
    match node {
        Node::Num(c) => {
            if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                write!(f, "-{}", -c)
            } else {
                write!(f, "{c}")
            }
        }
        Node::Var(i) => f.write_str(&vars[*i]),
        Node::Neg(a) => {
            f.write_str("-")?;
            write_wrapped(f, a, vars, precedence(a) < PREC_NEG)
        }
        Node::Bin(op, a, b) => {
            let prec = precedence(node);
            let sym = match op {
                BinOp::Add => " + ",
                BinOp::Sub => " - ",
                BinOp::Mul => "*",
                BinOp::Div => "/",
            };
            write_wrapped(f, a, vars, precedence(a) < prec)?;
            f.write_str(sym)?;
            write_wrapped(f, b, vars, precedence(b) <= prec)
        }
        Node::Pow(a, n) => {
            write_wrapped(f, a, vars, precedence(a) < PREC_ATOM)?;
            write!(f, "^{n}")
        }
        Node::Call(fun, a) => {
            write!(f, "{}(", fun.name())?;
            write_node(f, a, vars)?;
            f.write_str(")")
        }
        Node::Call2(fun, a, b) => {
            write!(f, "{}(", fun.name())?;
            write_node(f, a, vars)?;
            f.write_str(", ")?;
            write_node(f, b, vars)?;
            f.write_str(")")
        }
    }
}
