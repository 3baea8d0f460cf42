//! Terminating rewrite pass: constant folding, 0/1 absorption, like-term
//! merging on flattened sums, and like-base power merging on flattened
//! products. No distribution and no canonical form; zero decisions fall back
//! to sampling (`Expression::zeroness`).

use super::{Node, Scalar};
use std::collections::BTreeMap;
use std::sync::Arc;

pub fn simplify(node: &Arc<Node>) -> Arc<Node> {
    let mut cur = node.clone();
    for _ in 0..4 {
        let next = pass(&cur);
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}

fn num(s: Scalar) -> Arc<Node> {
    Arc::new(Node::Num(s))
}

fn pass(node: &Arc<Node>) -> Arc<Node> {
    match &**node {
        Node::Num(_) | Node::Coord(_) => node.clone(),
        Node::Add(..) | Node::Sub(..) => rebuild_sum(node),
        Node::Mul(..) | Node::Div(..) | Node::Pow(..) => rebuild_product(node),
        Node::Sin(a) => {
            let a = pass(a);
            match &*a {
                Node::Num(s) if s.is_zero() => num(Scalar::ZERO),
                Node::Num(s) => num(Scalar::Float(s.to_f64().sin())),
                _ => Arc::new(Node::Sin(a)),
            }
        }
        Node::Cos(a) => {
            let a = pass(a);
            match &*a {
                Node::Num(s) if s.is_zero() => num(Scalar::ONE),
                Node::Num(s) => num(Scalar::Float(s.to_f64().cos())),
                _ => Arc::new(Node::Cos(a)),
            }
        }
        Node::Exp(a) => {
            let a = pass(a);
            match &*a {
                Node::Num(s) if s.is_zero() => num(Scalar::ONE),
                Node::Num(s) => num(Scalar::Float(s.to_f64().exp())),
                _ => Arc::new(Node::Exp(a)),
            }
        }
    }
}

/// Flatten a sum into constant + coefficient-weighted terms, merge like
/// terms, and rebuild in deterministic (structural) order.
fn rebuild_sum(node: &Arc<Node>) -> Arc<Node> {
    let mut terms: BTreeMap<Arc<Node>, Scalar> = BTreeMap::new();
    let mut konst = Scalar::ZERO;
    collect_linear(node, Scalar::ONE, &mut terms, &mut konst);

    let mut acc: Option<Arc<Node>> = None;
    for (term, coeff) in terms {
        if coeff.is_zero() {
            continue;
        }
        let positive = coeff.to_f64() > 0.0;
        let magnitude = if positive { coeff } else { coeff.neg() };
        let make = |c: Scalar| -> Arc<Node> {
            if c.is_one() {
                term.clone()
            } else {
                Arc::new(Node::Mul(num(c), term.clone()))
            }
        };
        acc = Some(match acc {
            None => make(coeff),
            Some(a) => {
                if positive {
                    Arc::new(Node::Add(a, make(magnitude)))
                } else {
                    Arc::new(Node::Sub(a, make(magnitude)))
                }
            }
        });
    }
    match acc {
        None => num(konst),
        Some(a) if konst.is_zero() => a,
        Some(a) => {
            if konst.to_f64() > 0.0 {
                Arc::new(Node::Add(a, num(konst)))
            } else {
                Arc::new(Node::Sub(a, num(konst.neg())))
            }
        }
    }
}

fn collect_linear(
    node: &Arc<Node>,
    sign: Scalar,
    terms: &mut BTreeMap<Arc<Node>, Scalar>,
    konst: &mut Scalar,
) {
    match &**node {
        Node::Add(a, b) => {
            collect_linear(a, sign, terms, konst);
            collect_linear(b, sign, terms, konst);
        }
        Node::Sub(a, b) => {
            collect_linear(a, sign, terms, konst);
            collect_linear(b, sign.neg(), terms, konst);
        }
        _ => {
            let s = pass(node);
            match &*s {
                Node::Add(..) | Node::Sub(..) => {
                    // A child collapsed into a shallower sum; recurse once more.
                    collect_linear(&s, sign, terms, konst)
                }
                Node::Num(c) => *konst = konst.add(sign.mul(*c)),
                Node::Mul(a, b) => {
                    // Canonical products carry their constant outermost.
                    if let Node::Num(c) = &**a {
                        let entry = terms.entry(b.clone()).or_insert(Scalar::ZERO);
                        *entry = entry.add(sign.mul(*c));
                    } else {
                        let entry = terms.entry(s.clone()).or_insert(Scalar::ZERO);
                        *entry = entry.add(sign);
                    }
                }
                _ => {
                    let entry = terms.entry(s.clone()).or_insert(Scalar::ZERO);
                    *entry = entry.add(sign);
                }
            }
        }
    }
}

/// Flatten a product into a constant coefficient and powers of distinct
/// bases; merge powers; rebuild as `coeff * numerator / denominator`.
fn rebuild_product(node: &Arc<Node>) -> Arc<Node> {
    let mut coeff = Scalar::ONE;
    let mut bases: BTreeMap<Arc<Node>, i32> = BTreeMap::new();
    if !collect_product(node, 1, &mut coeff, &mut bases) {
        // A constant sub-result could not be folded exactly (zero divisor or
        // overflowing power); keep the node with simplified children.
        return structural(node);
    }
    if coeff.is_zero() {
        return num(Scalar::ZERO);
    }

    let mut numerator: Option<Arc<Node>> = None;
    let mut denominator: Option<Arc<Node>> = None;
    for (base, power) in bases {
        if power == 0 {
            continue;
        }
        let (slot, p) = if power > 0 {
            (&mut numerator, power)
        } else {
            (&mut denominator, -power)
        };
        let factor = if p == 1 {
            base
        } else {
            Arc::new(Node::Pow(base, p))
        };
        *slot = Some(match slot.take() {
            None => factor,
            Some(acc) => Arc::new(Node::Mul(acc, factor)),
        });
    }

    let core = match (numerator, denominator) {
        (None, None) => return num(coeff),
        (Some(n), None) => n,
        (n, Some(d)) => Arc::new(Node::Div(n.unwrap_or_else(|| num(Scalar::ONE)), d)),
    };
    if coeff.is_one() {
        core
    } else {
        Arc::new(Node::Mul(num(coeff), core))
    }
}

fn collect_product(
    node: &Arc<Node>,
    exp: i32,
    coeff: &mut Scalar,
    bases: &mut BTreeMap<Arc<Node>, i32>,
) -> bool {
    match &**node {
        Node::Mul(a, b) => {
            collect_product(a, exp, coeff, bases) && collect_product(b, exp, coeff, bases)
        }
        Node::Div(a, b) => {
            collect_product(a, exp, coeff, bases) && collect_product(b, -exp, coeff, bases)
        }
        Node::Pow(a, k) => match k.checked_mul(exp) {
            Some(kk) => collect_product(a, kk, coeff, bases),
            None => false,
        },
        _ => {
            let s = pass(node);
            match &*s {
                Node::Mul(..) | Node::Div(..) | Node::Pow(..) => {
                    collect_product(&s, exp, coeff, bases)
                }
                Node::Num(c) => match c.powi(exp) {
                    Some(p) => {
                        *coeff = coeff.mul(p);
                        true
                    }
                    None => false,
                },
                _ => {
                    *bases.entry(s.clone()).or_insert(0) += exp;
                    true
                }
            }
        }
    }
}

/// Children-only simplification, shape preserved.
fn structural(node: &Arc<Node>) -> Arc<Node> {
    match &**node {
        Node::Add(a, b) => Arc::new(Node::Add(pass(a), pass(b))),
        Node::Sub(a, b) => Arc::new(Node::Sub(pass(a), pass(b))),
        Node::Mul(a, b) => Arc::new(Node::Mul(pass(a), pass(b))),
        Node::Div(a, b) => Arc::new(Node::Div(pass(a), pass(b))),
        Node::Pow(a, k) => Arc::new(Node::Pow(pass(a), *k)),
        _ => node.clone(),
    }
}
