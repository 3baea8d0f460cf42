//! Recursive-descent parser for the closed expression grammar:
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := factor (("*" | "/") factor)*
//! factor := base ("^" integer)?
//! base   := number | ident | "pi" | "(" expr ")"
//!         | ("sin" | "cos" | "exp") "(" expr ")" | "-" base
//! ```
//!
//! Identifiers are chart coordinate names; whitespace is insignificant.
//! Note that `-` binds at the `base` level, so `-x^2` parses as `(-x)^2`.

use super::{Expression, Node, Scalar};
use crate::chart::Chart;
use crate::error::{CoreError, Result};
use num_rational::Rational64;
use std::sync::Arc;

pub fn parse(src: &str, chart: &Arc<Chart>) -> Result<Expression> {
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
        chart,
    };
    p.skip_ws();
    let node = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.syntax("unexpected trailing input"));
    }
    Ok(Expression::new(chart.clone(), node))
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    chart: &'a Arc<Chart>,
}

impl<'a> Parser<'a> {
    fn syntax(&self, msg: &str) -> CoreError {
        CoreError::Syntax { offset: self.pos, msg: msg.into() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            self.skip_ws();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.syntax(&format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Arc<Node>> {
        let mut acc = self.term()?;
        loop {
            if self.eat(b'+') {
                let rhs = self.term()?;
                acc = Arc::new(Node::Add(acc, rhs));
            } else if self.eat(b'-') {
                let rhs = self.term()?;
                acc = Arc::new(Node::Sub(acc, rhs));
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> Result<Arc<Node>> {
        let mut acc = self.factor()?;
        loop {
            if self.eat(b'*') {
                let rhs = self.factor()?;
                acc = Arc::new(Node::Mul(acc, rhs));
            } else if self.eat(b'/') {
                let rhs = self.factor()?;
                acc = Arc::new(Node::Div(acc, rhs));
            } else {
                return Ok(acc);
            }
        }
    }

    fn factor(&mut self) -> Result<Arc<Node>> {
        let base = self.base()?;
        if self.eat(b'^') {
            let k = self.integer()?;
            Ok(Arc::new(Node::Pow(base, k)))
        } else {
            Ok(base)
        }
    }

    fn base(&mut self) -> Result<Arc<Node>> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'-') => {
                self.pos += 1;
                self.skip_ws();
                let inner = self.base()?;
                // Fold negation of constants so "-3" is a single node.
                Ok(match &*inner {
                    Node::Num(s) => Arc::new(Node::Num(s.neg())),
                    _ => Arc::new(Node::Mul(
                        Arc::new(Node::Num(Scalar::from_int(-1))),
                        inner,
                    )),
                })
            }
            Some(b'(') => {
                self.pos += 1;
                self.skip_ws();
                let inner = self.expr()?;
                if self.peek() == Some(b',') {
                    return Err(CoreError::Arity {
                        offset: self.pos,
                        msg: "',' is not part of the grammar".into(),
                    });
                }
                self.expect(b')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            Some(c) => Err(self.syntax(&format!("unexpected character '{}'", c as char))),
        }
    }

    fn integer(&mut self) -> Result<i32> {
        let start = self.pos;
        let neg = self.peek() == Some(b'-');
        if neg {
            self.pos += 1;
        }
        let digits_start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == digits_start {
            self.pos = start;
            return Err(self.syntax("expected integer exponent"));
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let value: i32 = text
            .parse()
            .map_err(|_| self.syntax("exponent out of range"))?;
        self.skip_ws();
        Ok(value)
    }

    fn number(&mut self) -> Result<Arc<Node>> {
        let start = self.pos;
        let mut saw_dot = false;
        let mut saw_exp = false;
        while let Some(c) = self.peek() {
            match c {
                b'0'..=b'9' => self.pos += 1,
                b'.' if !saw_dot && !saw_exp => {
                    saw_dot = true;
                    self.pos += 1;
                }
                b'e' | b'E' if !saw_exp && self.pos > start => {
                    saw_exp = true;
                    self.pos += 1;
                    if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        self.skip_ws();
        let scalar = if !saw_dot && !saw_exp {
            match text.parse::<i64>() {
                Ok(n) => Scalar::Rat(Rational64::from_integer(n)),
                Err(_) => Scalar::Float(text.parse::<f64>().map_err(|_| CoreError::Syntax {
                    offset: start,
                    msg: format!("invalid number '{text}'"),
                })?),
            }
        } else {
            // Floats stay exact as binary doubles.
            Scalar::Float(text.parse::<f64>().map_err(|_| CoreError::Syntax {
                offset: start,
                msg: format!("invalid number '{text}'"),
            })?)
        };
        Ok(Arc::new(Node::Num(scalar)))
    }

    fn ident(&mut self) -> Result<Arc<Node>> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == b'_' {
                self.pos += 1;
            } else {
                break;
            }
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
        self.skip_ws();
        match name.as_str() {
            "pi" => Ok(Arc::new(Node::Num(Scalar::Float(std::f64::consts::PI)))),
            "sin" | "cos" | "exp" => {
                if !self.eat(b'(') {
                    return Err(CoreError::Arity {
                        offset: self.pos,
                        msg: format!("'{name}' takes exactly one parenthesized argument"),
                    });
                }
                let arg = self.expr()?;
                if self.peek() == Some(b',') {
                    return Err(CoreError::Arity {
                        offset: self.pos,
                        msg: format!("'{name}' takes exactly one argument"),
                    });
                }
                self.expect(b')')?;
                Ok(Arc::new(match name.as_str() {
                    "sin" => Node::Sin(arg),
                    "cos" => Node::Cos(arg),
                    _ => Node::Exp(arg),
                }))
            }
            _ => match self.chart.index_of(&name) {
                Ok(i) => Ok(Arc::new(Node::Coord(i))),
                Err(_) => Err(CoreError::UnknownIdent { name, offset: start }),
            },
        }
    }
}
