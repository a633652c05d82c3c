//! Arithmetic expression mini-language.
//!
//! Every scenario-defined function (dynamics, impulse maps, costs, event
//! surfaces, interpolation bases) is an [`Expr`]: a parsed syntax tree over a
//! fixed, ordered list of declared variables. Evaluation takes a value slice
//! aligned with that list, so the hot loops of the solvers never touch a map.
//!
//! The grammar is documented in `docs/expression-grammar.md`.

mod diff;
mod parse;
mod print;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use parse::{ParseError, ParseErrorKind};

/// Failure while evaluating an expression.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no binding for variable `{0}`")]
    MissingBinding(String),
    #[error("{func}({arg}) is outside the domain of {func}")]
    Domain { func: &'static str, arg: f64 },
    #[error("division by zero")]
    DivisionByZero,
    #[error("expected {expected} variable values, got {got}")]
    Arity { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Single-argument functions. `Sign` and `Step` are produced by
/// differentiation of `abs`, `min` and `max` and may also be written directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Sign,
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Func2 {
    Min,
    Max,
}

impl Func {
    pub(crate) fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sign => "sign",
            Func::Step => "step",
        }
    }
}

impl Func2 {
    pub(crate) fn name(self) -> &'static str {
        match self {
            Func2::Min => "min",
            Func2::Max => "max",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    /// Integer power; the exponent is always a literal.
    Pow(Box<Node>, i32),
    Call(Func, Box<Node>),
    Call2(Func2, Box<Node>, Box<Node>),
}

/// A parsed expression bound to an ordered list of declared variable names.
#[derive(Clone, PartialEq)]
pub struct Expr {
    root: Node,
    vars: Arc<[String]>,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

impl Expr {
    /// Parses `text`, resolving identifiers against `vars`.
    pub fn parse<S: AsRef<str>>(text: &str, vars: &[S]) -> Result<Expr, ParseError> {
        let vars: Arc<[String]> = vars.iter().map(|v| v.as_ref().to_string()).collect();
        let root = parse::parse(text, &vars)?;
        Ok(Expr { root, vars })
    }

    /// The constant expression `value` over `vars`.
    pub fn constant<S: AsRef<str>>(value: f64, vars: &[S]) -> Expr {
        Expr {
            root: Node::Num(value),
            vars: vars.iter().map(|v| v.as_ref().to_string()).collect(),
        }
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    /// Evaluates with `values[i]` bound to `vars()[i]`.
    pub fn eval(&self, values: &[f64]) -> Result<f64, EvalError> {
        if values.len() < self.vars.len() {
            return Err(EvalError::Arity {
                expected: self.vars.len(),
                got: values.len(),
            });
        }
        eval_node(&self.root, values)
    }

    /// Evaluates against a name → value map. Only variables that actually
    /// occur in the tree need a binding.
    pub fn evaluate(&self, env: &HashMap<&str, f64>) -> Result<f64, EvalError> {
        let mut values = vec![f64::NAN; self.vars.len()];
        for idx in self.referenced_indices() {
            let name = &self.vars[idx];
            values[idx] = *env
                .get(name.as_str())
                .ok_or_else(|| EvalError::MissingBinding(name.clone()))?;
        }
        eval_node(&self.root, &values)
    }

    /// Partial derivative with respect to `var`. A variable that is not
    /// declared cannot occur, so its derivative is the zero expression.
    pub fn derivative(&self, var: &str) -> Expr {
        let root = match self.vars.iter().position(|v| v == var) {
            Some(k) => diff::simplify(diff::derivative(&self.root, k)),
            None => Node::Num(0.0),
        };
        Expr {
            root,
            vars: self.vars.clone(),
        }
    }

    /// Indices (into `vars()`) of variables that occur in the tree, sorted.
    pub fn referenced_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        collect_vars(&self.root, &mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Names of variables that occur in the tree.
    pub fn referenced_vars(&self) -> Vec<&str> {
        self.referenced_indices()
            .into_iter()
            .map(|i| self.vars[i].as_str())
            .collect()
    }

    pub fn references(&self, var: &str) -> bool {
        self.referenced_vars().contains(&var)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.root, Node::Num(c) if c == 0.0)
    }

    /// Rebinds the expression to `new_vars`. Each old variable is replaced by
    /// `subst(name)` when that returns an expression (which must be declared
    /// over `new_vars`), otherwise by the same-named variable of `new_vars`.
    pub fn substitute<S: AsRef<str>>(
        &self,
        new_vars: &[S],
        subst: &dyn Fn(&str) -> Option<Expr>,
    ) -> Result<Expr, String> {
        let new_vars: Arc<[String]> = new_vars.iter().map(|v| v.as_ref().to_string()).collect();
        let mut table: Vec<Option<Node>> = Vec::with_capacity(self.vars.len());
        for name in self.vars.iter() {
            let node = match subst(name) {
                Some(e) => {
                    if e.vars.as_ref() != new_vars.as_ref() {
                        return Err(format!(
                            "substitution for `{name}` is not declared over the target variables"
                        ));
                    }
                    Some(e.root)
                }
                None => new_vars
                    .iter()
                    .position(|v| v == name)
                    .map(Node::Var),
            };
            table.push(node);
        }
        let root = replace_vars(&self.root, &table)?;
        Ok(Expr {
            root: diff::simplify(root),
            vars: new_vars,
        })
    }

    /// Number of kink conventions (abs/sign/step at 0, min/max ties) that
    /// evaluation at `values` exercises.
    pub fn kinks_hit(&self, values: &[f64]) -> usize {
        kinks(&self.root, values)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        print::write_node(f, &self.root, &self.vars)
    }
}

fn collect_vars(node: &Node, out: &mut Vec<usize>) {
    match node {
        Node::Num(_) => {}
        Node::Var(i) => out.push(*i),
        Node::Neg(a) | Node::Pow(a, _) | Node::Call(_, a) => collect_vars(a, out),
        Node::Bin(_, a, b) | Node::Call2(_, a, b) => {
            collect_vars(a, out);
            collect_vars(b, out);
        }
    }
}

fn replace_vars(node: &Node, table: &[Option<Node>]) -> Result<Node, String> {
    Ok(match node {
        Node::Num(c) => Node::Num(*c),
        Node::Var(i) => table[*i]
            .clone()
            .ok_or_else(|| format!("no replacement for variable #{i}"))?,
        Node::Neg(a) => Node::Neg(Box::new(replace_vars(a, table)?)),
        Node::Pow(a, n) => Node::Pow(Box::new(replace_vars(a, table)?), *n),
        Node::Call(fun, a) => Node::Call(*fun, Box::new(replace_vars(a, table)?)),
        Node::Bin(op, a, b) => Node::Bin(
            *op,
            Box::new(replace_vars(a, table)?),
            Box::new(replace_vars(b, table)?),
        ),
        Node::Call2(fun, a, b) => Node::Call2(
            *fun,
            Box::new(replace_vars(a, table)?),
            Box::new(replace_vars(b, table)?),
        ),
    })
}

pub(crate) fn eval_node(node: &Node, values: &[f64]) -> Result<f64, EvalError> {
    Ok(match node {
        Node::Num(c) => *c,
        Node::Var(i) => values[*i],
        Node::Neg(a) => -eval_node(a, values)?,
        Node::Bin(op, a, b) => {
            let x = eval_node(a, values)?;
            let y = eval_node(b, values)?;
            match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => {
                    if y == 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    x / y
                }
            }
        }
        Node::Pow(a, n) => {
            let x = eval_node(a, values)?;
            if *n < 0 && x == 0.0 {
                return Err(EvalError::DivisionByZero);
            }
            x.powi(*n)
        }
        Node::Call(fun, a) => {
            let x = eval_node(a, values)?;
            match fun {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Exp => x.exp(),
                Func::Log => {
                    if x <= 0.0 {
                        return Err(EvalError::Domain { func: "log", arg: x });
                    }
                    x.ln()
                }
                Func::Sqrt => {
                    if x < 0.0 {
                        return Err(EvalError::Domain { func: "sqrt", arg: x });
                    }
                    x.sqrt()
                }
                Func::Abs => x.abs(),
                Func::Sign => {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
                Func::Step => {
                    if x >= 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        }
        Node::Call2(fun, a, b) => {
            let x = eval_node(a, values)?;
            let y = eval_node(b, values)?;
            // first argument wins ties
            match fun {
                Func2::Min => {
                    if x <= y {
                        x
                    } else {
                        y
                    }
                }
                Func2::Max => {
                    if x >= y {
                        x
                    } else {
                        y
                    }
                }
            }
        }
    })
}

fn kinks(node: &Node, values: &[f64]) -> usize {
    match node {
        Node::Num(_) | Node::Var(_) => 0,
        Node::Neg(a) | Node::Pow(a, _) => kinks(a, values),
        Node::Bin(_, a, b) => kinks(a, values) + kinks(b, values),
        Node::Call(fun, a) => {
            let inner = kinks(a, values);
            let hit = matches!(fun, Func::Abs | Func::Sign | Func::Step)
                && eval_node(a, values).map(|x| x == 0.0).unwrap_or(false);
            inner + usize::from(hit)
        }
        Node::Call2(_, a, b) => {
            let inner = kinks(a, values) + kinks(b, values);
            let tie = matches!(
                (eval_node(a, values), eval_node(b, values)),
                (Ok(x), Ok(y)) if x == y
            );
            inner + usize::from(tie)
        }
    }
}

/// Standard variable names: `prefix1 .. prefixN`.
pub fn indexed_names(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}
