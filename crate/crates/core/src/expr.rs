//! Tiny arithmetic expression language for config fields.
//!
//! Grammar: `+ - * / ^` (with `^` right-associative), unary minus, parentheses,
//! the functions `sin`, `cos`, `exp`, numeric literals, the constant `pi`, and
//! the variables `x`, `y` (second spatial coordinate, 2D only) and `t`.
//! Expressions are parsed once into an AST and evaluated per point.

use crate::error::{Result, SolverError};

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
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
    T,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser {
            src: src.as_bytes(),
            pos: 0,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }

    /// Evaluate at spatial point (x, y) and time t.
    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        match self {
            Expr::Num(c) => *c,
            Expr::Var(Var::X) => x,
            Expr::Var(Var::Y) => y,
            Expr::Var(Var::T) => t,
            Expr::Neg(a) => -a.eval(x, y, t),
            Expr::Add(a, b) => a.eval(x, y, t) + b.eval(x, y, t),
            Expr::Sub(a, b) => a.eval(x, y, t) - b.eval(x, y, t),
            Expr::Mul(a, b) => a.eval(x, y, t) * b.eval(x, y, t),
            Expr::Div(a, b) => a.eval(x, y, t) / b.eval(x, y, t),
            Expr::Pow(a, b) => a.eval(x, y, t).powf(b.eval(x, y, t)),
            Expr::Sin(a) => a.eval(x, y, t).sin(),
            Expr::Cos(a) => a.eval(x, y, t).cos(),
            Expr::Exp(a) => a.eval(x, y, t).exp(),
        }
    }

    /// True when no variable occurs, i.e. the field is constant.
    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Num(_) => true,
            Expr::Var(_) => false,
            Expr::Neg(a) | Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) => a.is_constant(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.is_constant() && b.is_constant(),
        }
    }

    /// True when `t` does not occur (spatial field).
    pub fn is_time_independent(&self) -> bool {
        match self {
            Expr::Num(_) => true,
            Expr::Var(v) => *v != Var::T,
            Expr::Neg(a) | Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) => a.is_time_independent(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.is_time_independent() && b.is_time_independent(),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, message: &str) -> SolverError {
        SolverError::Expr {
            at: self.pos,
            message: message.to_string(),
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

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            // right-associative; exponent may carry its own unary minus
            let exponent = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.err("expected `)`"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            _ => Err(self.err("expected number, variable, function, or `(`")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() {
            let c = self.src[self.pos];
            if c.is_ascii_digit() || c == b'.' {
                self.pos += 1;
            } else if (c == b'e' || c == b'E')
                && self.pos > start
                && self
                    .src
                    .get(self.pos + 1)
                    .is_some_and(|&d| d.is_ascii_digit() || d == b'+' || d == b'-')
            {
                self.pos += 2;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Expr::Num)
            .map_err(|_| SolverError::Expr {
                at: start,
                message: format!("bad numeric literal `{text}`"),
            })
    }

    fn ident(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match name {
            "x" => Ok(Expr::Var(Var::X)),
            "y" => Ok(Expr::Var(Var::Y)),
            "t" => Ok(Expr::Var(Var::T)),
            "pi" => Ok(Expr::Num(std::f64::consts::PI)),
            "sin" | "cos" | "exp" => {
                if self.peek() != Some(b'(') {
                    return Err(self.err("expected `(` after function name"));
                }
                self.pos += 1;
                let arg = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.err("expected `)`"));
                }
                self.pos += 1;
                Ok(match name {
                    "sin" => Expr::Sin(Box::new(arg)),
                    "cos" => Expr::Cos(Box::new(arg)),
                    _ => Expr::Exp(Box::new(arg)),
                })
            }
            _ => Err(SolverError::Expr {
                at: start,
                message: format!("unknown identifier `{name}`"),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(src: &str, x: f64, y: f64, t: f64) -> f64 {
        Expr::parse(src).unwrap().eval(x, y, t)
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(eval("1+2*3", 0.0, 0.0, 0.0), 7.0);
        assert_eq!(eval("(1+2)*3", 0.0, 0.0, 0.0), 9.0);
        assert_eq!(eval("2^3^2", 0.0, 0.0, 0.0), 512.0); // right-assoc
        assert_eq!(eval("-2^2", 0.0, 0.0, 0.0), -4.0); // unary applies after the power
        assert_eq!(eval("1 - 2 - 3", 0.0, 0.0, 0.0), -4.0);
    }

    #[test]
    fn variables_and_functions() {
        assert!((eval("sin(pi/2) + cos(0)", 0.0, 0.0, 0.0) - 2.0).abs() < 1e-15);
        assert!((eval("exp(x)*t - y", 1.0, 0.5, 2.0) - (1f64.exp() * 2.0 - 0.5)).abs() < 1e-15);
        assert_eq!(eval("1e-2 + 2.5E+1", 0.0, 0.0, 0.0), 25.01);
    }

    #[test]
    fn constness_detection() {
        assert!(Expr::parse("3*pi^2").unwrap().is_constant());
        assert!(!Expr::parse("x+1").unwrap().is_constant());
        assert!(Expr::parse("sin(x)").unwrap().is_time_independent());
        assert!(!Expr::parse("sin(t)").unwrap().is_time_independent());
    }

    #[test]
    fn parse_errors_carry_position() {
        match Expr::parse("1 + frob(2)") {
            Err(SolverError::Expr { at, .. }) => assert_eq!(at, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(Expr::parse("(1+2").is_err());
        assert!(Expr::parse("1 2").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // arbitrary input must parse or error, never panic; valid parses
            // must evaluate without panicking
            #[test]
            fn parser_is_total(src in "[ 0-9a-z+*/^().,-]{0,40}") {
                if let Ok(e) = Expr::parse(&src) {
                    let _ = e.eval(0.3, 0.7, 1.1);
                }
            }
        }
    }
}
