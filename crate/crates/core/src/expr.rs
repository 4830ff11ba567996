//! A small expression language for level sets, densities and test functions.
//!
//! Grammar (whitespace insensitive):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := ('-' | '+') unary | power
//! power  := atom ('^' unary)?
//! atom   := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Variables are `x`, `y`, `z` (aliases `x1`, `x2`, `x3`); constants `pi`
//! and `e`. Functions: `exp`, `log`/`ln`, `sqrt`, `sin`, `cos`, `tanh`,
//! `sq`, `pow(a, b)`, `smin(a, b, k)` and `smax(a, b, k)` (log-sum-exp
//! smoothing with width `k`).

use std::fmt;

use crate::field::{Jet, ScalarField};
use crate::linalg::Vector;
use crate::Error;

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Func(Func, Vec<Node>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Func {
    Exp,
    Ln,
    Sqrt,
    Sin,
    Cos,
    Tanh,
    Sq,
    Pow,
    Smin,
    Smax,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "exp" => (Func::Exp, 1),
            "log" | "ln" => (Func::Ln, 1),
            "sqrt" => (Func::Sqrt, 1),
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "tanh" => (Func::Tanh, 1),
            "sq" => (Func::Sq, 1),
            "pow" => (Func::Pow, 2),
            "smin" => (Func::Smin, 3),
            "smax" => (Func::Smax, 3),
            _ => return None,
        })
    }
}

/// Parsed expression usable as a [`ScalarField`].
#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
    max_var: Option<usize>,
}

impl Expr {
    pub fn parse(source: &str) -> Result<Expr, Error> {
        let mut parser = Parser {
            src: source.as_bytes(),
            pos: 0,
        };
        let root = parser.expr()?;
        parser.skip_ws();
        if parser.pos < parser.src.len() {
            return Err(parser.error("unexpected trailing input"));
        }
        let root = fold(root);
        let max_var = max_var(&root);
        Ok(Expr {
            source: source.to_string(),
            root,
            max_var,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Highest coordinate index referenced, plus one.
    pub fn min_dim(&self) -> usize {
        self.max_var.map_or(0, |v| v + 1)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl ScalarField for Expr {
    fn value(&self, x: &Vector) -> f64 {
        eval(&self.root, x)
    }

    fn jet(&self, x: &Vector) -> Jet {
        eval_jet(&self.root, x)
    }

    fn constant_value(&self) -> Option<f64> {
        match self.root {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }
}

fn smooth_min(a: f64, b: f64, k: f64) -> f64 {
    let m = a.min(b);
    m - k * ((-(a - m) / k).exp() + (-(b - m) / k).exp()).ln()
}

fn eval(node: &Node, x: &Vector) -> f64 {
    match node {
        Node::Const(c) => *c,
        Node::Var(i) => x[*i],
        Node::Neg(a) => -eval(a, x),
        Node::Add(a, b) => eval(a, x) + eval(b, x),
        Node::Sub(a, b) => eval(a, x) - eval(b, x),
        Node::Mul(a, b) => eval(a, x) * eval(b, x),
        Node::Div(a, b) => eval(a, x) / eval(b, x),
        Node::Pow(a, b) => {
            let p = eval(b, x);
            let v = eval(a, x);
            if p.fract() == 0.0 && p.abs() <= 64.0 {
                v.powi(p as i32)
            } else {
                v.powf(p)
            }
        }
        Node::Func(f, args) => {
            let a = eval(&args[0], x);
            match f {
                Func::Exp => a.exp(),
                Func::Ln => a.ln(),
                Func::Sqrt => a.sqrt(),
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Tanh => a.tanh(),
                Func::Sq => a * a,
                Func::Pow => {
                    let p = eval(&args[1], x);
                    if p.fract() == 0.0 && p.abs() <= 64.0 {
                        a.powi(p as i32)
                    } else {
                        a.powf(p)
                    }
                }
                Func::Smin => smooth_min(a, eval(&args[1], x), eval(&args[2], x)),
                Func::Smax => -smooth_min(-a, -eval(&args[1], x), eval(&args[2], x)),
            }
        }
    }
}

fn jet_smooth_min(a: &Jet, b: &Jet, k: f64) -> Jet {
    // −k ln(e^{−a/k} + e^{−b/k}), shifted by min(a, b) for stability.
    let m = a.value.min(b.value);
    let shift = Jet::constant(m);
    let ea = a.sub(&shift).scale(-1.0 / k).exp();
    let eb = b.sub(&shift).scale(-1.0 / k).exp();
    shift.add(&ea.add(&eb).ln().scale(-k))
}

fn eval_jet(node: &Node, x: &Vector) -> Jet {
    match node {
        Node::Const(c) => Jet::constant(*c),
        Node::Var(i) => Jet::coordinate(x, *i),
        Node::Neg(a) => eval_jet(a, x).scale(-1.0),
        Node::Add(a, b) => eval_jet(a, x).add(&eval_jet(b, x)),
        Node::Sub(a, b) => eval_jet(a, x).sub(&eval_jet(b, x)),
        Node::Mul(a, b) => eval_jet(a, x).mul(&eval_jet(b, x)),
        Node::Div(a, b) => eval_jet(a, x).div(&eval_jet(b, x)),
        Node::Pow(a, b) => eval_jet(a, x).pow(&eval_jet(b, x)),
        Node::Func(f, args) => {
            let a = eval_jet(&args[0], x);
            match f {
                Func::Exp => a.exp(),
                Func::Ln => a.ln(),
                Func::Sqrt => a.sqrt(),
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Tanh => a.tanh(),
                Func::Sq => a.mul(&a),
                Func::Pow => a.pow(&eval_jet(&args[1], x)),
                Func::Smin => jet_smooth_min(&a, &eval_jet(&args[1], x), eval(&args[2], x)),
                Func::Smax => jet_smooth_min(&a.scale(-1.0), &eval_jet(&args[1], x).scale(-1.0), eval(&args[2], x)).scale(-1.0),
            }
        }
    }
}

fn max_var(node: &Node) -> Option<usize> {
    match node {
        Node::Const(_) => None,
        Node::Var(i) => Some(*i),
        Node::Neg(a) => max_var(a),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => max_var(a).max(max_var(b)),
        Node::Func(_, args) => args.iter().filter_map(max_var).max(),
    }
}

/// Collapses constant subtrees.
fn fold(node: Node) -> Node {
    let folded = match node {
        Node::Neg(a) => Node::Neg(Box::new(fold(*a))),
        Node::Add(a, b) => Node::Add(Box::new(fold(*a)), Box::new(fold(*b))),
        Node::Sub(a, b) => Node::Sub(Box::new(fold(*a)), Box::new(fold(*b))),
        Node::Mul(a, b) => Node::Mul(Box::new(fold(*a)), Box::new(fold(*b))),
        Node::Div(a, b) => Node::Div(Box::new(fold(*a)), Box::new(fold(*b))),
        Node::Pow(a, b) => Node::Pow(Box::new(fold(*a)), Box::new(fold(*b))),
        Node::Func(f, args) => Node::Func(f, args.into_iter().map(fold).collect()),
        leaf => leaf,
    };
    if max_var(&folded).is_none() && !matches!(folded, Node::Const(_)) {
        Node::Const(eval(&folded, &Vector::ZERO))
    } else {
        folded
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> Error {
        Error::Parse {
            line: 1,
            column: self.pos + 1,
            message: format!("{msg} in expression `{}`", String::from_utf8_lossy(self.src)),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node, Error> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node, Error> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node, Error> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, Error> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exponent = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, Error> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected `)`"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.name(),
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Node, Error> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            if self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse::<f64>().map(Node::Const).map_err(|_| {
            self.pos = start;
            self.error("malformed number")
        })
    }

    fn name(&mut self) -> Result<Node, Error> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        match name {
            "x" | "x1" => return Ok(Node::Var(0)),
            "y" | "x2" => return Ok(Node::Var(1)),
            "z" | "x3" => return Ok(Node::Var(2)),
            "pi" => return Ok(Node::Const(std::f64::consts::PI)),
            "e" => return Ok(Node::Const(std::f64::consts::E)),
            _ => {}
        }
        let Some((func, arity)) = Func::lookup(name) else {
            self.pos = start;
            return Err(self.error(&format!("unknown identifier `{name}`")));
        };
        if !self.eat(b'(') {
            return Err(self.error(&format!("expected `(` after `{name}`")));
        }
        let mut args = vec![self.expr()?];
        while self.eat(b',') {
            args.push(self.expr()?);
        }
        if !self.eat(b')') {
            return Err(self.error("expected `)`"));
        }
        if args.len() != arity {
            return Err(self.error(&format!("`{name}` takes {arity} argument(s), got {}", args.len())));
        }
        Ok(Node::Func(func, args))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(xs: &[f64]) -> Vector {
        Vector::from_slice(xs)
    }

    #[test]
    fn precedence_and_associativity() {
        let e = Expr::parse("1 + 2*3^2 - 8/4/2").unwrap();
        assert_eq!(e.value(&Vector::ZERO), 1.0 + 18.0 - 1.0);
        let e = Expr::parse("-2^2").unwrap();
        assert_eq!(e.value(&Vector::ZERO), -4.0);
        let e = Expr::parse("2^3^2").unwrap();
        assert_eq!(e.value(&Vector::ZERO), 512.0);
    }

    #[test]
    fn constants_fold() {
        let e = Expr::parse("2*pi - pi*2 + 1").unwrap();
        assert_eq!(e.constant_value(), Some(1.0));
        assert_eq!(e.min_dim(), 0);
    }

    #[test]
    fn unit_sphere_level_set() {
        let e = Expr::parse("x^2 + y^2 + z^2 - 1").unwrap();
        let j = e.jet(&at(&[0.0, 0.0, 1.0]));
        assert_eq!(j.value, 0.0);
        assert_eq!(j.grad, at(&[0.0, 0.0, 2.0]));
        assert_eq!(j.hess.trace(), 6.0);
        assert_eq!(e.min_dim(), 3);
    }

    #[test]
    fn jet_matches_finite_differences() {
        let e = Expr::parse("exp(-(x^2+y^2))*x + smin(x, y, 0.2) + sqrt(1 + x*x) * cos(y) + pow(1.5 + x, y)").unwrap();
        let p = at(&[0.3, -0.4]);
        let j = e.jet(&p);
        let h = 1e-5;
        for i in 0..2 {
            let ei = Vector::unit(i) * h;
            let fd = (e.value(&(p + ei)) - e.value(&(p - ei))) / (2.0 * h);
            assert!((fd - j.grad[i]).abs() < 1e-8, "grad {i}: {fd} vs {}", j.grad[i]);
            let gd = (e.gradient(&(p + ei)) - e.gradient(&(p - ei))) * (1.0 / (2.0 * h));
            for k in 0..2 {
                assert!((gd[k] - j.hess.0[i][k]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn errors_carry_column() {
        match Expr::parse("x + foo(2)") {
            Err(Error::Parse { column, .. }) => assert_eq!(column, 5),
            other => panic!("unexpected {other:?}"),
        }
        assert!(Expr::parse("(x + 1").is_err());
        assert!(Expr::parse("smin(x, y)").is_err());
        assert!(Expr::parse("x y").is_err());
    }

    #[test]
    fn scientific_notation() {
        let e = Expr::parse("1e-3 * x + 2.5E2").unwrap();
        assert!((e.value(&at(&[1000.0])) - 251.0).abs() < 1e-12);
    }
}
