//! Arithmetic expressions for user-declared dynamics and costs.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `^` is right associative and binds tighter than unary minus, so `-2^2`
//! is `-(2^2)`. The identifier `pi` is read as the literal π.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: expected {expected}")]
    Syntax { offset: usize, expected: String },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("function `{name}` at byte {offset} takes {expected} argument(s), got {got}")]
    Arity {
        name: String,
        offset: usize,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("domain error: {func} of {arg}")]
    Domain { func: &'static str, arg: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Abs,
    Sqrt,
    Sgn,
    Min,
    Max,
}

impl Func {
    pub const ALL: [Func; 10] = [
        Func::Sin,
        Func::Cos,
        Func::Tan,
        Func::Exp,
        Func::Log,
        Func::Abs,
        Func::Sqrt,
        Func::Sgn,
        Func::Min,
        Func::Max,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Sgn => "sgn",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    fn apply(self, args: &[f64]) -> Result<f64, EvalError> {
        let x = args[0];
        let v = match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Exp => x.exp(),
            Func::Log => {
                if !(x > 0.0) {
                    return Err(EvalError::Domain {
                        func: "log",
                        arg: x,
                    });
                }
                x.ln()
            }
            Func::Abs => x.abs(),
            Func::Sqrt => {
                if x < 0.0 || x.is_nan() {
                    return Err(EvalError::Domain {
                        func: "sqrt",
                        arg: x,
                    });
                }
                x.sqrt()
            }
            Func::Sgn => sgn(x),
            Func::Min => x.min(args[1]),
            Func::Max => x.max(args[1]),
        };
        Ok(v)
    }
}

/// Sign function with `sgn(0) = 0`.
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Call {
        func: Func,
        args: Vec<Expr>,
    },
}

impl Expr {
    pub fn parse(source: &str) -> Result<Expr, ParseError> {
        parse_expression(source)
    }

    /// Evaluates against a name → value environment.
    pub fn eval(&self, env: &HashMap<String, f64>) -> Result<f64, EvalError> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Var(name) => env
                .get(name)
                .copied()
                .ok_or_else(|| EvalError::UnboundVariable(name.clone())),
            Expr::Neg(inner) => Ok(-inner.eval(env)?),
            Expr::Binary { op, lhs, rhs } => binary(*op, lhs.eval(env)?, rhs.eval(env)?),
            Expr::Call { func, args } => {
                let mut vals = [0.0; 2];
                for (slot, arg) in vals.iter_mut().zip(args) {
                    *slot = arg.eval(env)?;
                }
                func.apply(&vals[..args.len()])
            }
        }
    }

    /// Names of all variables referenced, in first-occurrence order.
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(name) => {
                if !out.contains(name) {
                    out.push(name.clone());
                }
            }
            Expr::Neg(inner) => inner.collect_vars(out),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.collect_vars(out);
                rhs.collect_vars(out);
            }
            Expr::Call { args, .. } => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }

    /// Resolves variable names to positional slots for repeated evaluation.
    pub fn compile(&self, slots: &[&str]) -> Result<CompiledExpr, EvalError> {
        Ok(CompiledExpr {
            root: self.lower(slots)?,
        })
    }

    fn lower(&self, slots: &[&str]) -> Result<Node, EvalError> {
        Ok(match self {
            Expr::Num(v) => Node::Num(*v),
            Expr::Var(name) => Node::Slot(
                slots
                    .iter()
                    .position(|s| s == name)
                    .ok_or_else(|| EvalError::UnboundVariable(name.clone()))?,
            ),
            Expr::Neg(inner) => Node::Neg(Box::new(inner.lower(slots)?)),
            Expr::Binary { op, lhs, rhs } => Node::Binary(
                *op,
                Box::new(lhs.lower(slots)?),
                Box::new(rhs.lower(slots)?),
            ),
            Expr::Call { func, args } => Node::Call(
                *func,
                args.iter()
                    .map(|a| a.lower(slots))
                    .collect::<Result<_, _>>()?,
            ),
        })
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Num(_) | Expr::Var(_) | Expr::Call { .. } => 5,
            Expr::Neg(_) => 3,
            Expr::Binary { op, .. } => op.precedence(),
        }
    }
}

fn binary(op: BinOp, a: f64, b: f64) -> Result<f64, EvalError> {
    Ok(match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => {
            if b == 0.0 {
                return Err(EvalError::Domain {
                    func: "division",
                    arg: b,
                });
            }
            a / b
        }
        BinOp::Pow => {
            let v = a.powf(b);
            if v.is_nan() && !a.is_nan() && !b.is_nan() {
                return Err(EvalError::Domain {
                    func: "pow",
                    arg: a,
                });
            }
            v
        }
    })
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(name) => f.write_str(name),
            Expr::Neg(inner) => {
                f.write_str("-")?;
                write_operand(f, inner, inner.precedence() < 3)
            }
            Expr::Binary { op, lhs, rhs } => {
                let p = op.precedence();
                let (lp, rp) = if *op == BinOp::Pow {
                    // right associative; a negated base must stay parenthesized
                    (lhs.precedence() <= p, rhs.precedence() < 3)
                } else {
                    (lhs.precedence() < p, rhs.precedence() <= p)
                };
                write_operand(f, lhs, lp)?;
                if *op == BinOp::Pow {
                    f.write_str("^")?;
                } else {
                    write!(f, " {} ", op.symbol())?;
                }
                write_operand(f, rhs, rp)
            }
            Expr::Call { func, args } => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Num(f64),
    Slot(usize),
    Neg(Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// An expression with variables bound to positions in a value slice.
#[derive(Debug, Clone)]
pub struct CompiledExpr {
    root: Node,
}

impl CompiledExpr {
    pub fn eval(&self, values: &[f64]) -> Result<f64, EvalError> {
        eval_node(&self.root, values)
    }
}

fn eval_node(node: &Node, values: &[f64]) -> Result<f64, EvalError> {
    match node {
        Node::Num(v) => Ok(*v),
        Node::Slot(i) => Ok(values[*i]),
        Node::Neg(inner) => Ok(-eval_node(inner, values)?),
        Node::Binary(op, a, b) => binary(*op, eval_node(a, values)?, eval_node(b, values)?),
        Node::Call(func, args) => {
            let mut vals = [0.0; 2];
            for (slot, arg) in vals.iter_mut().zip(args) {
                *slot = eval_node(arg, values)?;
            }
            func.apply(&vals[..args.len()])
        }
    }
}

pub fn parse_expression(source: &str) -> Result<Expr, ParseError> {
    let mut p = Parser {
        src: source.as_bytes(),
        pos: 0,
    };
    p.skip_ws();
    if p.at_end() {
        return Err(p.expected("an expression"));
    }
    let e = p.expr()?;
    p.skip_ws();
    if !p.at_end() {
        return Err(p.expected("an operator or end of input"));
    }
    Ok(e)
}

/// Evaluates `expr` in `env`.
pub fn eval(expr: &Expr, env: &HashMap<String, f64>) -> Result<f64, EvalError> {
    expr.eval(env)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn expected(&self, what: &str) -> ParseError {
        ParseError::Syntax {
            offset: self.pos,
            expected: what.to_string(),
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat(b'+') {
                BinOp::Add
            } else if self.eat(b'-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat(b'*') {
                BinOp::Mul
            } else if self.eat(b'/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.eat(b'^') {
            let exp = self.unary()?;
            Ok(Expr::Binary {
                op: BinOp::Pow,
                lhs: Box::new(base),
                rhs: Box::new(exp),
            })
        } else {
            Ok(base)
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.expected("`)`"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident_or_call(),
            _ => Err(self.expected("a number, identifier or `(`")),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == b'.') {
            self.pos += 1;
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse::<f64>()
            .map(Expr::Num)
            .map_err(|_| ParseError::Syntax {
                offset: start,
                expected: "a numeric literal".into(),
            })
    }

    fn ident_or_call(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos])
            .expect("ascii")
            .to_string();
        self.skip_ws();
        if self.peek() != Some(b'(') {
            if name == "pi" {
                return Ok(Expr::Num(std::f64::consts::PI));
            }
            return Ok(Expr::Var(name));
        }
        let func = Func::from_name(&name).ok_or(ParseError::UnknownFunction {
            name: name.clone(),
            offset: start,
        })?;
        self.pos += 1;
        let mut args = vec![self.expr()?];
        while self.eat(b',') {
            args.push(self.expr()?);
        }
        if !self.eat(b')') {
            return Err(self.expected("`,` or `)`"));
        }
        if args.len() != func.arity() {
            return Err(ParseError::Arity {
                name,
                offset: start,
                expected: func.arity(),
                got: args.len(),
            });
        }
        Ok(Expr::Call { func, args })
    }
}
