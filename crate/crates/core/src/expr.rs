//! Scalar fields on the plane given as small arithmetic expressions.
//!
//! Grammar (usual precedence, `^` right-associative, unary minus binds
//! looser than `^`):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | 'x' | 'y' | func '(' expr ')' | '(' expr ')'
//! func   := sin | cos | exp | sqrt | ln
//! ```
//!
//! Expressions are differentiated symbolically and compiled to a postfix
//! program for fast repeated evaluation.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("unexpected character '{ch}' at offset {pos}")]
    UnexpectedChar { ch: char, pos: usize },
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unexpected token '{token}' at offset {pos}")]
    UnexpectedToken { token: String, pos: usize },
    #[error("unknown identifier '{0}' (allowed: x, y, sin, cos, exp, sqrt, ln)")]
    UnknownIdent(String),
    #[error("invalid number literal '{0}'")]
    BadNumber(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Ln,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Ln => "ln",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Sqrt => v.sqrt(),
            Func::Ln => v.ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

// Smart constructors with light constant folding. They keep derivative
// trees small, which matters because the SDE drift is evaluated ~10^9 times
// per acceptance run.
fn num(v: f64) -> Expr {
    Expr::Num(v)
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(p), Expr::Num(q)) => num(p + q),
        (Expr::Num(p), _) if *p == 0.0 => b,
        (_, Expr::Num(q)) if *q == 0.0 => a,
        (_, Expr::Neg(inner)) => sub(a, (**inner).clone()),
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(p), Expr::Num(q)) => num(p - q),
        (Expr::Num(p), _) if *p == 0.0 => neg(b),
        (_, Expr::Num(q)) if *q == 0.0 => a,
        (_, Expr::Neg(inner)) => add(a, (**inner).clone()),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(p), Expr::Num(q)) => num(p * q),
        (Expr::Num(p), _) | (_, Expr::Num(p)) if *p == 0.0 => num(0.0),
        (Expr::Num(p), _) if *p == 1.0 => b,
        (_, Expr::Num(q)) if *q == 1.0 => a,
        (Expr::Num(p), _) if *p == -1.0 => neg(b),
        (_, Expr::Num(q)) if *q == -1.0 => neg(a),
        (Expr::Neg(x), Expr::Neg(y)) => mul((**x).clone(), (**y).clone()),
        (Expr::Neg(x), _) => neg(mul((**x).clone(), b)),
        (_, Expr::Neg(y)) => neg(mul(a, (**y).clone())),
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(p), Expr::Num(q)) if *q != 0.0 => num(p / q),
        (Expr::Num(p), _) if *p == 0.0 => num(0.0),
        (_, Expr::Num(q)) if *q == 1.0 => a,
        (Expr::Neg(x), _) => neg(div((**x).clone(), b)),
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(p) => num(-p),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(p), Expr::Num(q)) => num(p.powf(*q)),
        (_, Expr::Num(q)) if *q == 0.0 => num(1.0),
        (_, Expr::Num(q)) if *q == 1.0 => a,
        _ => Expr::Pow(Box::new(a), Box::new(b)),
    }
}

fn call(f: Func, a: Expr) -> Expr {
    match a {
        Expr::Num(p) => num(f.apply(p)),
        other => Expr::Call(f, Box::new(other)),
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ExprError> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr()?;
        match p.tokens.get(p.pos) {
            None => Ok(e),
            Some((tok, at)) => Err(ExprError::UnexpectedToken {
                token: tok.to_string(),
                pos: *at,
            }),
        }
    }

    pub fn zero() -> Expr {
        Expr::Num(0.0)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }

    /// Rebuilds the tree through the folding constructors.
    pub fn simplify(&self) -> Expr {
        match self {
            Expr::Num(v) => num(*v),
            Expr::Var(v) => Expr::Var(*v),
            Expr::Neg(a) => neg(a.simplify()),
            Expr::Add(a, b) => add(a.simplify(), b.simplify()),
            Expr::Sub(a, b) => sub(a.simplify(), b.simplify()),
            Expr::Mul(a, b) => mul(a.simplify(), b.simplify()),
            Expr::Div(a, b) => div(a.simplify(), b.simplify()),
            Expr::Pow(a, b) => pow(a.simplify(), b.simplify()),
            Expr::Call(f, a) => call(*f, a.simplify()),
        }
    }

    /// Symbolic partial derivative.
    pub fn diff(&self, var: Var) -> Expr {
        match self {
            Expr::Num(_) => num(0.0),
            Expr::Var(v) => num(if *v == var { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.diff(var)),
            Expr::Add(a, b) => add(a.diff(var), b.diff(var)),
            Expr::Sub(a, b) => sub(a.diff(var), b.diff(var)),
            Expr::Mul(a, b) => add(
                mul(a.diff(var), (**b).clone()),
                mul((**a).clone(), b.diff(var)),
            ),
            Expr::Div(a, b) => {
                let da = a.diff(var);
                let db = b.diff(var);
                if db.is_zero() {
                    div(da, (**b).clone())
                } else {
                    div(
                        sub(mul(da, (**b).clone()), mul((**a).clone(), db)),
                        pow((**b).clone(), num(2.0)),
                    )
                }
            }
            Expr::Pow(a, b) => {
                let da = a.diff(var);
                if let Expr::Num(c) = **b {
                    // d(u^c) = c u^(c-1) u'
                    mul(mul(num(c), pow((**a).clone(), num(c - 1.0))), da)
                } else {
                    // d(u^v) = u^v (v' ln u + v u'/u)
                    let db = b.diff(var);
                    let term = add(
                        mul(db, call(Func::Ln, (**a).clone())),
                        div(mul((**b).clone(), da), (**a).clone()),
                    );
                    mul(self.clone(), term)
                }
            }
            Expr::Call(f, a) => {
                let da = a.diff(var);
                if da.is_zero() {
                    return num(0.0);
                }
                let outer = match f {
                    Func::Sin => call(Func::Cos, (**a).clone()),
                    Func::Cos => neg(call(Func::Sin, (**a).clone())),
                    Func::Exp => self.clone(),
                    Func::Sqrt => div(num(0.5), self.clone()),
                    Func::Ln => div(num(1.0), (**a).clone()),
                };
                mul(outer, da)
            }
        }
    }

    /// Direct tree-walking evaluation. Prefer [`Program`] in hot loops.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::X) => x,
            Expr::Var(Var::Y) => y,
            Expr::Neg(a) => -a.eval(x, y),
            Expr::Add(a, b) => a.eval(x, y) + b.eval(x, y),
            Expr::Sub(a, b) => a.eval(x, y) - b.eval(x, y),
            Expr::Mul(a, b) => a.eval(x, y) * b.eval(x, y),
            Expr::Div(a, b) => a.eval(x, y) / b.eval(x, y),
            Expr::Pow(a, b) => powf(a.eval(x, y), b.eval(x, y)),
            Expr::Call(f, a) => f.apply(a.eval(x, y)),
        }
    }

    pub fn compile(&self) -> Program {
        let mut ops = Vec::new();
        emit(self, &mut ops);
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::X | Op::Y => depth += 1,
                Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Pow => depth -= 1,
                _ => {}
            }
            max_depth = max_depth.max(depth);
        }
        Program { ops, max_depth }
    }
}

fn powf(base: f64, exp: f64) -> f64 {
    if exp == exp.trunc() && exp.abs() <= 64.0 {
        base.powi(exp as i32)
    } else {
        base.powf(exp)
    }
}

fn emit(e: &Expr, ops: &mut Vec<Op>) {
    match e {
        Expr::Num(v) => ops.push(Op::Const(*v)),
        Expr::Var(Var::X) => ops.push(Op::X),
        Expr::Var(Var::Y) => ops.push(Op::Y),
        Expr::Neg(a) => {
            emit(a, ops);
            ops.push(Op::Neg);
        }
        Expr::Add(a, b) => {
            emit(a, ops);
            emit(b, ops);
            ops.push(Op::Add);
        }
        Expr::Sub(a, b) => {
            emit(a, ops);
            emit(b, ops);
            ops.push(Op::Sub);
        }
        Expr::Mul(a, b) => {
            emit(a, ops);
            emit(b, ops);
            ops.push(Op::Mul);
        }
        Expr::Div(a, b) => {
            emit(a, ops);
            emit(b, ops);
            ops.push(Op::Div);
        }
        Expr::Pow(a, b) => {
            emit(a, ops);
            match **b {
                Expr::Num(c) if c == c.trunc() && c.abs() <= 64.0 => ops.push(Op::PowI(c as i32)),
                _ => {
                    emit(b, ops);
                    ops.push(Op::Pow);
                }
            }
        }
        Expr::Call(f, a) => {
            emit(a, ops);
            ops.push(Op::Call(*f));
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if *v < 0.0 {
                    write!(f, "({v:?})")
                } else {
                    write!(f, "{v:?}")
                }
            }
            Expr::Var(Var::X) => write!(f, "x"),
            Expr::Var(Var::Y) => write!(f, "y"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    X,
    Y,
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    PowI(i32),
    Call(Func),
}

/// Postfix stack program compiled from an [`Expr`].
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    ops: Vec<Op>,
    max_depth: usize,
}

const INLINE_STACK: usize = 32;

impl Program {
    pub fn is_const_zero(&self) -> bool {
        matches!(self.ops.as_slice(), [Op::Const(v)] if *v == 0.0)
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        if self.max_depth <= INLINE_STACK {
            let mut stack = [0.0f64; INLINE_STACK];
            run(&self.ops, &mut stack, x, y)
        } else {
            let mut stack = vec![0.0f64; self.max_depth];
            run(&self.ops, &mut stack, x, y)
        }
    }
}

#[inline]
fn run(ops: &[Op], stack: &mut [f64], x: f64, y: f64) -> f64 {
    let mut sp = 0usize;
    for op in ops {
        match *op {
            Op::Const(v) => {
                stack[sp] = v;
                sp += 1;
            }
            Op::X => {
                stack[sp] = x;
                sp += 1;
            }
            Op::Y => {
                stack[sp] = y;
                sp += 1;
            }
            Op::Neg => stack[sp - 1] = -stack[sp - 1],
            Op::PowI(n) => stack[sp - 1] = stack[sp - 1].powi(n),
            Op::Call(f) => stack[sp - 1] = f.apply(stack[sp - 1]),
            binary => {
                sp -= 1;
                let b = stack[sp];
                let a = stack[sp - 1];
                stack[sp - 1] = match binary {
                    Op::Add => a + b,
                    Op::Sub => a - b,
                    Op::Mul => a * b,
                    Op::Div => a / b,
                    Op::Pow => a.powf(b),
                    _ => unreachable!(),
                };
            }
        }
    }
    stack[0]
}

/// A scalar field with cached compiled derivatives up to second order.
#[derive(Debug, Clone)]
pub struct Field {
    expr: Expr,
    value: Program,
    dx: Program,
    dy: Program,
    dxx: Program,
    dxy: Program,
    dyy: Program,
}

impl Field {
    pub fn new(expr: Expr) -> Field {
        let expr = expr.simplify();
        let ex = expr.diff(Var::X);
        let ey = expr.diff(Var::Y);
        Field {
            value: expr.compile(),
            dxx: ex.diff(Var::X).compile(),
            dxy: ex.diff(Var::Y).compile(),
            dyy: ey.diff(Var::Y).compile(),
            dx: ex.compile(),
            dy: ey.compile(),
            expr,
        }
    }

    pub fn parse(src: &str) -> Result<Field, ExprError> {
        Ok(Field::new(Expr::parse(src)?))
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn is_zero(&self) -> bool {
        self.expr.is_zero()
    }

    #[inline]
    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.value.eval(x, y)
    }

    #[inline]
    pub fn grad(&self, x: f64, y: f64) -> [f64; 2] {
        [self.dx.eval(x, y), self.dy.eval(x, y)]
    }

    /// Hessian entries `[xx, xy, yy]`.
    #[inline]
    pub fn hessian(&self, x: f64, y: f64) -> [f64; 3] {
        [self.dxx.eval(x, y), self.dxy.eval(x, y), self.dyy.eval(x, y)]
    }

    pub fn dx_program(&self) -> &Program {
        &self.dx
    }

    pub fn dy_program(&self) -> &Program {
        &self.dy
    }

    pub fn value_program(&self) -> &Program {
        &self.value
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Num(v) => write!(f, "{v}"),
            Token::Ident(s) => write!(f, "{s}"),
            Token::Plus => write!(f, "+"),
            Token::Minus => write!(f, "-"),
            Token::Star => write!(f, "*"),
            Token::Slash => write!(f, "/"),
            Token::Caret => write!(f, "^"),
            Token::LParen => write!(f, "("),
            Token::RParen => write!(f, ")"),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Token, usize)>, ExprError> {
    let bytes: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            ' ' | '\t' | '\n' | '\r' => {
                i += 1;
                continue;
            }
            '+' => out.push((Token::Plus, i)),
            '-' => out.push((Token::Minus, i)),
            '*' => out.push((Token::Star, i)),
            '/' => out.push((Token::Slash, i)),
            '^' => out.push((Token::Caret, i)),
            '(' => out.push((Token::LParen, i)),
            ')' => out.push((Token::RParen, i)),
            c if c.is_ascii_digit() || c == '.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == '.') {
                    i += 1;
                }
                // exponent part: e.g. 1e-3, 2.5E+4
                if i < bytes.len() && (bytes[i] == 'e' || bytes[i] == 'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == '+' || bytes[j] == '-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text: String = bytes[start..i].iter().collect();
                let v = text
                    .parse::<f64>()
                    .map_err(|_| ExprError::BadNumber(text.clone()))?;
                out.push((Token::Num(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_') {
                    i += 1;
                }
                let text: String = bytes[start..i].iter().collect();
                out.push((Token::Ident(text), start));
                continue;
            }
            other => return Err(ExprError::UnexpectedChar { ch: other, pos: i }),
        }
        i += 1;
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn next(&mut self) -> Result<(Token, usize), ExprError> {
        let t = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or(ExprError::UnexpectedEnd)?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, want: Token) -> Result<(), ExprError> {
        let (tok, at) = self.next()?;
        if tok == want {
            Ok(())
        } else {
            Err(ExprError::UnexpectedToken {
                token: tok.to_string(),
                pos: at,
            })
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Token::Minus) => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(Token::Slash) => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if let Some(Token::Minus) = self.peek() {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if let Some(Token::Plus) = self.peek() {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if let Some(Token::Caret) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let (tok, at) = self.next()?;
        match tok {
            Token::Num(v) => Ok(Expr::Num(v)),
            Token::LParen => {
                let e = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(e)
            }
            Token::Ident(name) => match name.as_str() {
                "x" => Ok(Expr::Var(Var::X)),
                "y" => Ok(Expr::Var(Var::Y)),
                "sin" | "cos" | "exp" | "sqrt" | "ln" => {
                    let f = match name.as_str() {
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "exp" => Func::Exp,
                        "sqrt" => Func::Sqrt,
                        _ => Func::Ln,
                    };
                    self.expect(Token::LParen)?;
                    let arg = self.expr()?;
                    self.expect(Token::RParen)?;
                    Ok(Expr::Call(f, Box::new(arg)))
                }
                _ => Err(ExprError::UnknownIdent(name)),
            },
            other => Err(ExprError::UnexpectedToken {
                token: other.to_string(),
                pos: at,
            }),
        }
    }
}
