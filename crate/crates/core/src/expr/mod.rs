//! Exact symbolic scalar fields on a chart.
//!
//! The grammar is closed (constants, coordinates, `+ - * /`, integer powers,
//! `sin`, `cos`, `exp`, and the built-in constant `pi`), which keeps symbolic
//! differentiation total. The simplifier is a terminating rewrite pass, not a
//! canonical form; zero tests fall back to sampling.

mod parse;
mod scalar;
mod simplify;

pub use scalar::Scalar;

use crate::chart::{same_chart, Chart};
use crate::error::{CoreError, Result};
use crate::halton::HaltonSampler;
use std::fmt;
use std::sync::Arc;

/// Expression tree node. Unary minus is desugared to `(-1) * e` for
/// non-constant operands and folded into the constant otherwise.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    Num(Scalar),
    Coord(usize),
    Add(Arc<Node>, Arc<Node>),
    Sub(Arc<Node>, Arc<Node>),
    Mul(Arc<Node>, Arc<Node>),
    Div(Arc<Node>, Arc<Node>),
    Pow(Arc<Node>, i32),
    Sin(Arc<Node>),
    Cos(Arc<Node>),
    Exp(Arc<Node>),
}

/// A symbolic scalar field bound to a chart. Immutable after construction,
/// safe to share across threads.
#[derive(Debug, Clone)]
pub struct Expression {
    chart: Arc<Chart>,
    node: Arc<Node>,
}

impl PartialEq for Expression {
    fn eq(&self, other: &Self) -> bool {
        self.chart == other.chart && self.node == other.node
    }
}

/// Outcome of the zero decision for an expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Zeroness {
    /// Simplifies to the constant 0.
    SymbolicZero,
    /// Below 1e-10 at every sample point of the domain box.
    NumericZero,
    /// Definitely nonzero somewhere in the domain box.
    NonZero,
}

#[allow(clippy::should_implement_trait)]
impl Expression {
    pub fn new(chart: Arc<Chart>, node: Arc<Node>) -> Expression {
        Expression { chart, node }
    }

    /// Parse `src` against `chart` (see the grammar in the module docs).
    pub fn parse(src: &str, chart: &Arc<Chart>) -> Result<Expression> {
        parse::parse(src, chart)
    }

    pub fn constant(chart: &Arc<Chart>, value: f64) -> Expression {
        Expression::new(chart.clone(), Arc::new(Node::Num(Scalar::Float(value))))
    }

    pub fn int(chart: &Arc<Chart>, value: i64) -> Expression {
        Expression::new(chart.clone(), Arc::new(Node::Num(Scalar::from_int(value))))
    }

    pub fn zero(chart: &Arc<Chart>) -> Expression {
        Expression::int(chart, 0)
    }

    pub fn coord(chart: &Arc<Chart>, index: usize) -> Expression {
        assert!(index < chart.dim(), "coordinate index out of range");
        Expression::new(chart.clone(), Arc::new(Node::Coord(index)))
    }

    pub fn coord_by_name(chart: &Arc<Chart>, name: &str) -> Result<Expression> {
        Ok(Expression::coord(chart, chart.index_of(name)?))
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn node(&self) -> &Arc<Node> {
        &self.node
    }

    pub fn is_zero_node(&self) -> bool {
        matches!(&*self.node, Node::Num(s) if s.is_zero())
    }

    fn binary(
        &self,
        other: &Expression,
        f: impl FnOnce(Arc<Node>, Arc<Node>) -> Node,
    ) -> Expression {
        same_chart(&self.chart, &other.chart).expect("expression chart mismatch");
        Expression::new(self.chart.clone(), Arc::new(f(self.node.clone(), other.node.clone())))
    }

    pub fn add(&self, other: &Expression) -> Expression {
        self.binary(other, Node::Add)
    }

    pub fn sub(&self, other: &Expression) -> Expression {
        self.binary(other, Node::Sub)
    }

    pub fn mul(&self, other: &Expression) -> Expression {
        self.binary(other, Node::Mul)
    }

    pub fn div(&self, other: &Expression) -> Expression {
        self.binary(other, Node::Div)
    }

    pub fn powi(&self, k: i32) -> Expression {
        Expression::new(self.chart.clone(), Arc::new(Node::Pow(self.node.clone(), k)))
    }

    pub fn sin(&self) -> Expression {
        Expression::new(self.chart.clone(), Arc::new(Node::Sin(self.node.clone())))
    }

    pub fn cos(&self) -> Expression {
        Expression::new(self.chart.clone(), Arc::new(Node::Cos(self.node.clone())))
    }

    pub fn exp(&self) -> Expression {
        Expression::new(self.chart.clone(), Arc::new(Node::Exp(self.node.clone())))
    }

    pub fn neg(&self) -> Expression {
        Expression::int(&self.chart, -1).mul(self)
    }

    pub fn scale(&self, c: f64) -> Expression {
        Expression::constant(&self.chart, c).mul(self)
    }

    /// IEEE-double evaluation at `point`.
    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.chart.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.chart.dim(),
                got: point.len(),
            });
        }
        let v = eval_node(&self.node, point)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(CoreError::NonFinite { point: point.to_vec() })
        }
    }

    /// Exact symbolic partial derivative with respect to `coord`.
    pub fn diff(&self, coord: &str) -> Result<Expression> {
        let idx = self.chart.index_of(coord)?;
        Ok(self.diff_index(idx))
    }

    pub fn diff_index(&self, idx: usize) -> Expression {
        let node = diff_node(&self.node, idx);
        Expression::new(self.chart.clone(), node).simplify()
    }

    /// Gradient as one expression per coordinate.
    pub fn gradient(&self) -> Vec<Expression> {
        (0..self.chart.dim()).map(|i| self.diff_index(i)).collect()
    }

    /// Terminating rewrite pass: constant folding, 0/1 absorption and
    /// like-term merging on flattened sums and products.
    pub fn simplify(&self) -> Expression {
        Expression::new(self.chart.clone(), simplify::simplify(&self.node))
    }

    /// Zero decision: symbolic when the simplifier reaches the constant 0,
    /// numeric when 128 quasi-random domain samples stay below 1e-10.
    pub fn zeroness(&self) -> Zeroness {
        let s = self.simplify();
        if s.is_zero_node() {
            return Zeroness::SymbolicZero;
        }
        let mut sampler = HaltonSampler::new(self.chart.clone(), 0);
        let mut max_abs: f64 = 0.0;
        for _ in 0..crate::tol::ZERO_TEST_SAMPLES {
            let p = sampler.next_point();
            match s.eval(&p) {
                Ok(v) => max_abs = max_abs.max(v.abs()),
                Err(_) => return Zeroness::NonZero,
            }
        }
        if max_abs < crate::tol::NUMERIC_ZERO {
            Zeroness::NumericZero
        } else {
            Zeroness::NonZero
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.zeroness(), Zeroness::SymbolicZero | Zeroness::NumericZero)
    }

    /// Substitute fixed coordinate values and rebind to the sub-chart that
    /// drops them. `fixed` maps coordinate index to value.
    pub fn restrict(
        &self,
        fixed: &std::collections::BTreeMap<usize, f64>,
        sub: &Arc<Chart>,
    ) -> Expression {
        let remap: Vec<Option<usize>> = {
            let mut next = 0usize;
            (0..self.chart.dim())
                .map(|i| {
                    if fixed.contains_key(&i) {
                        None
                    } else {
                        let v = Some(next);
                        next += 1;
                        v
                    }
                })
                .collect()
        };
        let node = substitute_node(&self.node, &|i| {
            if let Some(&v) = fixed.get(&i) {
                Arc::new(Node::Num(Scalar::Float(v)))
            } else {
                Arc::new(Node::Coord(remap[i].expect("free coordinate")))
            }
        });
        Expression::new(sub.clone(), node).simplify()
    }

    /// Render to text that reparses to a structurally equal tree.
    pub fn render(&self) -> String {
        let mut out = String::new();
        render_node(&self.node, self.chart.coord_names(), Prec::Sum, &mut out);
        out
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn eval_node(node: &Node, point: &[f64]) -> Result<f64> {
    Ok(match node {
        Node::Num(s) => s.to_f64(),
        Node::Coord(i) => point[*i],
        Node::Add(a, b) => eval_node(a, point)? + eval_node(b, point)?,
        Node::Sub(a, b) => eval_node(a, point)? - eval_node(b, point)?,
        Node::Mul(a, b) => eval_node(a, point)? * eval_node(b, point)?,
        Node::Div(a, b) => {
            let den = eval_node(b, point)?;
            if den == 0.0 {
                return Err(CoreError::DivisionByZero { point: point.to_vec() });
            }
            eval_node(a, point)? / den
        }
        Node::Pow(a, k) => {
            let base = eval_node(a, point)?;
            if base == 0.0 && *k < 0 {
                return Err(CoreError::DivisionByZero { point: point.to_vec() });
            }
            base.powi(*k)
        }
        Node::Sin(a) => eval_node(a, point)?.sin(),
        Node::Cos(a) => eval_node(a, point)?.cos(),
        Node::Exp(a) => eval_node(a, point)?.exp(),
    })
}

fn diff_node(node: &Node, idx: usize) -> Arc<Node> {
    let zero = || Arc::new(Node::Num(Scalar::ZERO));
    match node {
        Node::Num(_) => zero(),
        Node::Coord(i) => {
            if *i == idx {
                Arc::new(Node::Num(Scalar::ONE))
            } else {
                zero()
            }
        }
        Node::Add(a, b) => Arc::new(Node::Add(diff_node(a, idx), diff_node(b, idx))),
        Node::Sub(a, b) => Arc::new(Node::Sub(diff_node(a, idx), diff_node(b, idx))),
        Node::Mul(a, b) => Arc::new(Node::Add(
            Arc::new(Node::Mul(diff_node(a, idx), b.clone())),
            Arc::new(Node::Mul(a.clone(), diff_node(b, idx))),
        )),
        Node::Div(a, b) => {
            // (a'b - ab') / b^2
            let num = Node::Sub(
                Arc::new(Node::Mul(diff_node(a, idx), b.clone())),
                Arc::new(Node::Mul(a.clone(), diff_node(b, idx))),
            );
            Arc::new(Node::Div(Arc::new(num), Arc::new(Node::Pow(b.clone(), 2))))
        }
        Node::Pow(a, k) => {
            if *k == 0 {
                return zero();
            }
            let coeff = Arc::new(Node::Num(Scalar::from_int(*k as i64)));
            Arc::new(Node::Mul(
                Arc::new(Node::Mul(coeff, Arc::new(Node::Pow(a.clone(), k - 1)))),
                diff_node(a, idx),
            ))
        }
        Node::Sin(a) => Arc::new(Node::Mul(Arc::new(Node::Cos(a.clone())), diff_node(a, idx))),
        Node::Cos(a) => Arc::new(Node::Mul(
            Arc::new(Node::Mul(
                Arc::new(Node::Num(Scalar::from_int(-1))),
                Arc::new(Node::Sin(a.clone())),
            )),
            diff_node(a, idx),
        )),
        Node::Exp(a) => Arc::new(Node::Mul(Arc::new(Node::Exp(a.clone())), diff_node(a, idx))),
    }
}

fn substitute_node(node: &Node, subst: &impl Fn(usize) -> Arc<Node>) -> Arc<Node> {
    match node {
        Node::Num(s) => Arc::new(Node::Num(*s)),
        Node::Coord(i) => subst(*i),
        Node::Add(a, b) => Arc::new(Node::Add(substitute_node(a, subst), substitute_node(b, subst))),
        Node::Sub(a, b) => Arc::new(Node::Sub(substitute_node(a, subst), substitute_node(b, subst))),
        Node::Mul(a, b) => Arc::new(Node::Mul(substitute_node(a, subst), substitute_node(b, subst))),
        Node::Div(a, b) => Arc::new(Node::Div(substitute_node(a, subst), substitute_node(b, subst))),
        Node::Pow(a, k) => Arc::new(Node::Pow(substitute_node(a, subst), *k)),
        Node::Sin(a) => Arc::new(Node::Sin(substitute_node(a, subst))),
        Node::Cos(a) => Arc::new(Node::Cos(substitute_node(a, subst))),
        Node::Exp(a) => Arc::new(Node::Exp(substitute_node(a, subst))),
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Prec {
    Sum,
    Product,
    Power,
    Atom,
}

fn render_node(node: &Node, names: &[String], ctx: Prec, out: &mut String) {
    // "(-1) * e" prints as "-e" (the parser desugars it right back), except
    // when e is itself a constant, which would fold differently on reparse.
    if let Node::Mul(a, b) = node {
        if matches!(&**a, Node::Num(s) if *s == Scalar::from_int(-1))
            && !matches!(&**b, Node::Num(_))
        {
            out.push('-');
            render_node(b, names, Prec::Atom, out);
            return;
        }
    }
    let prec = match node {
        Node::Add(..) | Node::Sub(..) => Prec::Sum,
        Node::Mul(..) | Node::Div(..) => Prec::Product,
        Node::Pow(..) => Prec::Power,
        _ => Prec::Atom,
    };
    let needs_parens = prec < ctx;
    if needs_parens {
        out.push('(');
    }
    match node {
        Node::Num(s) => out.push_str(&s.to_string()),
        Node::Coord(i) => out.push_str(&names[*i]),
        Node::Add(a, b) => {
            render_node(a, names, Prec::Sum, out);
            out.push_str(" + ");
            render_node(b, names, Prec::Product, out);
        }
        Node::Sub(a, b) => {
            render_node(a, names, Prec::Sum, out);
            out.push_str(" - ");
            render_node(b, names, Prec::Product, out);
        }
        Node::Mul(a, b) => {
            render_node(a, names, Prec::Product, out);
            out.push_str(" * ");
            render_node(b, names, Prec::Power, out);
        }
        Node::Div(a, b) => {
            render_node(a, names, Prec::Product, out);
            out.push_str(" / ");
            render_node(b, names, Prec::Power, out);
        }
        Node::Pow(a, k) => {
            render_node(a, names, Prec::Atom, out);
            out.push('^');
            out.push_str(&k.to_string());
        }
        Node::Sin(a) => {
            out.push_str("sin(");
            render_node(a, names, Prec::Sum, out);
            out.push(')');
        }
        Node::Cos(a) => {
            out.push_str("cos(");
            render_node(a, names, Prec::Sum, out);
            out.push(')');
        }
        Node::Exp(a) => {
            out.push_str("exp(");
            render_node(a, names, Prec::Sum, out);
            out.push(')');
        }
    }
    if needs_parens {
        out.push(')');
    }
}
