use std::fmt;

use super::{BinOp, Func, Func2, Node};

/// Parse failure with the byte offset at which it was detected.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub pos: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParseErrorKind {
    Syntax(String),
    UndeclaredVariable(String),
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ParseErrorKind::Syntax(msg) => write!(f, "syntax error at offset {}: {msg}", self.pos),
            ParseErrorKind::UndeclaredVariable(name) => {
                write!(f, "undeclared variable `{name}` at offset {}", self.pos)
            }
        }
    }
}

impl std::error::Error for ParseError {}

impl ParseError {
    /// The offending variable name, if this is an undeclared-variable error.
    pub fn undeclared(&self) -> Option<&str> {
        match &self.kind {
            ParseErrorKind::UndeclaredVariable(name) => Some(name),
            ParseErrorKind::Syntax(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Plus => "'+'".into(),
            Tok::Minus => "'-'".into(),
            Tok::Star => "'*'".into(),
            Tok::Slash => "'/'".into(),
            Tok::Caret => "'^'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Comma => "','".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn syntax(pos: usize, msg: impl Into<String>) -> ParseError {
    ParseError {
        pos,
        kind: ParseErrorKind::Syntax(msg.into()),
    }
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let lit = &text[start..i];
                let value: f64 = lit
                    .parse()
                    .map_err(|_| syntax(start, format!("malformed number `{lit}`")))?;
                out.push((start, Tok::Num(value)));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(text[start..i].to_string())));
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(syntax(start, format!("unexpected character {ch:?}")));
            }
        };
        out.push((start, tok));
        i += 1;
    }
    out.push((text.len(), Tok::End));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    at: usize,
    vars: &'a [String],
}

pub(crate) fn parse(text: &str, vars: &[String]) -> Result<Node, ParseError> {
    let mut p = Parser {
        toks: tokenize(text)?,
        at: 0,
        vars,
    };
    let node = p.expr()?;
    let (pos, tok) = p.peek();
    if *tok != Tok::End {
        return Err(syntax(pos, format!("unexpected {}", tok.describe())));
    }
    Ok(node)
}

impl Parser<'_> {
    fn peek(&self) -> (usize, &Tok) {
        let (pos, tok) = &self.toks[self.at];
        (*pos, tok)
    }

    fn bump(&mut self) -> (usize, Tok) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        let (pos, tok) = self.bump();
        if tok == want {
            Ok(())
        } else {
            Err(syntax(
                pos,
                format!("expected {}, found {}", want.describe(), tok.describe()),
            ))
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().1 {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().1 {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if *self.peek().1 == Tok::Minus {
            self.bump();
            let inner = self.unary()?;
            return Ok(Node::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let mut base = self.primary()?;
        while *self.peek().1 == Tok::Caret {
            self.bump();
            let negative = if *self.peek().1 == Tok::Minus {
                self.bump();
                true
            } else {
                false
            };
            let (pos, tok) = self.bump();
            let exponent = match tok {
                Tok::Num(v) if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 => v as i32,
                other => {
                    return Err(syntax(
                        pos,
                        format!("exponent must be an integer literal, found {}", other.describe()),
                    ))
                }
            };
            base = Node::Pow(Box::new(base), if negative { -exponent } else { exponent });
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ParseError> {
        let (pos, tok) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if *self.peek().1 == Tok::LParen {
                    self.bump();
                    return self.call(pos, &name);
                }
                match self.vars.iter().position(|v| *v == name) {
                    Some(i) => Ok(Node::Var(i)),
                    None => Err(ParseError {
                        pos,
                        kind: ParseErrorKind::UndeclaredVariable(name),
                    }),
                }
            }
            other => Err(syntax(pos, format!("expected operand, found {}", other.describe()))),
        }
    }

    fn call(&mut self, pos: usize, name: &str) -> Result<Node, ParseError> {
        let unary = match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            "sqrt" => Some(Func::Sqrt),
            "abs" => Some(Func::Abs),
            "sign" => Some(Func::Sign),
            "step" => Some(Func::Step),
            _ => None,
        };
        if let Some(fun) = unary {
            let arg = self.expr()?;
            self.expect(Tok::RParen)?;
            return Ok(Node::Call(fun, Box::new(arg)));
        }
        let binary = match name {
            "min" => Func2::Min,
            "max" => Func2::Max,
            _ => return Err(syntax(pos, format!("unknown function `{name}`"))),
        };
        let a = self.expr()?;
        self.expect(Tok::Comma)?;
        let b = self.expr()?;
        self.expect(Tok::RParen)?;
        Ok(Node::Call2(binary, Box::new(a), Box::new(b)))
    }
}

#[cfg(test)]
mod tests {
    use super::super::Expr;
    use super::*;

    fn err(text: &str) -> ParseError {
        Expr::parse(text, &["t", "x1"]).unwrap_err()
    }

    #[test]
    fn dangling_operator_reports_offset() {
        let e = err("2*+");
        assert_eq!(e.pos, 2);
        assert!(matches!(e.kind, ParseErrorKind::Syntax(_)));
    }

    #[test]
    fn undeclared_variable_is_named() {
        let e = Expr::parse("x2 + 1", &["x1"]).unwrap_err();
        assert_eq!(e.undeclared(), Some("x2"));
        assert_eq!(e.pos, 0);
        assert!(e.to_string().contains("x2"));
    }

    #[test]
    fn error_positions() {
        assert_eq!(err("").pos, 0);
        assert_eq!(err("(x1").pos, 3);
        assert_eq!(err("x1 )").pos, 3);
        assert_eq!(err("x1^t").pos, 3);
        assert_eq!(err("x1^1.5").pos, 3);
        assert_eq!(err("foo(x1)").pos, 0);
        assert_eq!(err("min(x1)").pos, 6);
        assert_eq!(err("x1 # 2").pos, 3);
        assert_eq!(err("3 4").pos, 2);
    }

    #[test]
    fn whitespace_and_scientific_literals() {
        let e = Expr::parse(" 1.5e1 *  t ", &["t"]).unwrap();
        assert_eq!(e.eval(&[2.0]).unwrap(), 30.0);
        let e = Expr::parse("2.5E-1", &["t"]).unwrap();
        assert_eq!(e.eval(&[0.0]).unwrap(), 0.25);
    }

    #[test]
    fn left_associativity() {
        let e = Expr::parse("8 - 4 - 2", &["t"]).unwrap();
        assert_eq!(e.eval(&[0.0]).unwrap(), 2.0);
        let e = Expr::parse("8 / 4 / 2", &["t"]).unwrap();
        assert_eq!(e.eval(&[0.0]).unwrap(), 1.0);
        let e = Expr::parse("x1^2^3", &["x1"]).unwrap();
        assert_eq!(e.eval(&[2.0]).unwrap(), 64.0);
    }

    #[test]
    fn negative_exponent_and_unary_chain() {
        let e = Expr::parse("x1^-2 * --x1", &["x1"]).unwrap();
        assert_eq!(e.eval(&[2.0]).unwrap(), 0.5);
        let e = Expr::parse("2*-x1", &["x1"]).unwrap();
        assert_eq!(e.eval(&[3.0]).unwrap(), -6.0);
    }
}
