//! Property tests for the calculus kernel: parse/render round-trips over a
//! fixed corpus and random trees, simplifier value preservation, derivative
//! linearity and finite-difference agreement, and the pairing axioms.

use dirac_aa_core::chart::Chart;
use dirac_aa_core::expr::{Expression, Node, Scalar};
use dirac_aa_core::pointwise::{pairing, DoubleVector};
use proptest::prelude::*;
use std::sync::Arc;

fn chart3() -> Arc<Chart> {
    Chart::cartesian("xyz", &["x", "y", "z"], &[(-2.0, 2.0), (-2.0, 2.0), (-2.0, 2.0)]).unwrap()
}

/// Fifty expressions covering every grammar production.
const CORPUS: [&str; 50] = [
    "x",
    "y + z",
    "x - y - z",
    "x * y * z",
    "x / y / z",
    "x^2",
    "x^-2",
    "x^0",
    "-x",
    "-x^2",
    "-(x * y)",
    "x + y * z",
    "(x + y) * z",
    "x - (y - z)",
    "x / (y + 3)",
    "2 * pi * x",
    "sin(x)",
    "cos(y)",
    "exp(z)",
    "sin(2 * pi * x)",
    "cos(x + y)",
    "exp(x * y)",
    "sin(cos(x))",
    "exp(sin(x) + cos(y))",
    "sin(x)^2 + cos(x)^2",
    "1/2",
    "3/4 + 1/4",
    "0.5",
    "1e-3",
    "2.5E2",
    "1.25e-7 * x",
    "x^3 - 3 * x^2 + 3 * x - 1",
    "(x + y)^2",
    "(x - y)^3 / 8",
    "x * y + y * z + z * x",
    "x / 2 + y / 3 + z / 6",
    "pi",
    "pi^2",
    "2 * pi",
    "sin(pi * x) * cos(pi * y)",
    "exp(-x)",
    "exp(-(x^2 + y^2))",
    "1 / (1 + x^2)",
    "x^2 / (x^2 + 1)",
    "(sin(x) + 1) * (cos(x) - 1)",
    "x - -y",
    "x * -y",
    "3 - 2 - 1",
    "x^2 * y^3 * z^4",
    "sin(x * y * z) / (2 + cos(x))",
];

#[test]
fn corpus_round_trips() {
    let c = chart3();
    for src in CORPUS {
        let parsed = Expression::parse(src, &c)
            .unwrap_or_else(|e| panic!("corpus entry '{src}' failed to parse: {e}"));
        let rendered = parsed.render();
        let reparsed = Expression::parse(&rendered, &c)
            .unwrap_or_else(|e| panic!("render of '{src}' = '{rendered}' failed to reparse: {e}"));
        assert_eq!(parsed, reparsed, "round trip of '{src}' via '{rendered}'");
    }
}

#[test]
fn corpus_survives_simplify_with_equal_values() {
    let c = chart3();
    let points = [[0.37, 0.91, -0.53], [1.13, -0.42, 0.77], [-0.98, 1.21, 0.35]];
    for src in CORPUS {
        let parsed = Expression::parse(src, &c).unwrap();
        let simplified = parsed.simplify();
        for p in &points {
            match (parsed.eval(p), simplified.eval(p)) {
                (Ok(a), Ok(b)) => assert!(
                    (a - b).abs() <= 1e-12 * a.abs().max(1.0),
                    "'{src}' changed value: {a} vs {b}"
                ),
                // Division by zero may legitimately move under rewriting
                // only if the original failed too.
                (Err(_), _) => {}
                (Ok(a), Err(e)) => panic!("simplify broke '{src}' at {p:?}: {a} vs {e}"),
            }
        }
    }
}

// Random expression trees without division (derivative-friendly).
fn smooth_node() -> impl Strategy<Value = Arc<Node>> {
    let leaf = prop_oneof![
        (0usize..3).prop_map(|i| Arc::new(Node::Coord(i))),
        (-4i64..5).prop_map(|v| Arc::new(Node::Num(Scalar::from_int(v)))),
        (-1.5f64..1.5).prop_map(|v| Arc::new(Node::Num(Scalar::Float(v)))),
    ];
    leaf.prop_recursive(3, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Arc::new(Node::Add(a, b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Arc::new(Node::Sub(a, b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Arc::new(Node::Mul(a, b))),
            (inner.clone(), 0i32..4).prop_map(|(a, k)| Arc::new(Node::Pow(a, k))),
            inner.clone().prop_map(|a| Arc::new(Node::Sin(a))),
            inner.clone().prop_map(|a| Arc::new(Node::Cos(a))),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_trees_round_trip(node in smooth_node()) {
        let c = chart3();
        let e = Expression::new(c.clone(), node);
        let rendered = e.render();
        let reparsed = Expression::parse(&rendered, &c).expect("reparse");
        prop_assert_eq!(e, reparsed);
    }

    #[test]
    fn simplify_preserves_values(node in smooth_node()) {
        let c = chart3();
        let e = Expression::new(c.clone(), node);
        let s = e.simplify();
        for p in [[0.31, -0.77, 0.49], [1.03, 0.58, -0.91]] {
            let a = e.eval(&p).expect("smooth tree evaluates");
            let b = s.eval(&p).expect("simplified tree evaluates");
            // Cancellation in like-term merging can lose relative accuracy;
            // compare against the tree magnitude.
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0),
                "{} vs {} for {}", a, b, e.render());
        }
    }

    #[test]
    fn derivative_matches_finite_differences(node in smooth_node()) {
        let c = chart3();
        let e = Expression::new(c.clone(), node);
        let d = e.diff("y").expect("diff");
        let p = [0.41, 0.23, -0.67];
        let h = 1e-5;
        let up = e.eval(&[p[0], p[1] + h, p[2]]).unwrap();
        let dn = e.eval(&[p[0], p[1] - h, p[2]]).unwrap();
        let fd = (up - dn) / (2.0 * h);
        let sym = d.eval(&p).unwrap();
        let scale = sym.abs().max(up.abs()).max(1.0);
        prop_assert!((sym - fd).abs() <= 1e-6 * scale,
            "d/dy {} = {} vs fd {}", e.render(), sym, fd);
    }

    #[test]
    fn diff_is_linear(a in smooth_node(), b in smooth_node(), ca in -2.0f64..2.0, cb in -2.0f64..2.0) {
        let c = chart3();
        let ea = Expression::new(c.clone(), a);
        let eb = Expression::new(c.clone(), b);
        let combo = ea.scale(ca).add(&eb.scale(cb));
        let d_combo = combo.diff("x").unwrap();
        let da = ea.diff("x").unwrap();
        let db = eb.diff("x").unwrap();
        let p = [0.53, -0.29, 0.87];
        let lhs = d_combo.eval(&p).unwrap();
        let rhs = ca * da.eval(&p).unwrap() + cb * db.eval(&p).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn pairing_symmetric_and_bilinear(
        xs in prop::collection::vec(-3.0f64..3.0, 9),
        s in -2.0f64..2.0,
    ) {
        let u = DoubleVector::new(vec![xs[0], xs[1]], vec![xs[2], xs[3]]).unwrap();
        let v = DoubleVector::new(vec![xs[4], xs[5]], vec![xs[6], xs[7]]).unwrap();
        let sym = (pairing(&u, &v).unwrap() - pairing(&v, &u).unwrap()).abs();
        prop_assert!(sym <= 1e-12);
        let scaled = DoubleVector { x: &v.x * s, a: &v.a * s };
        let lin = (pairing(&u, &scaled).unwrap() - s * pairing(&u, &v).unwrap()).abs();
        prop_assert!(lin <= 1e-12 * (1.0 + s.abs()) * (1.0 + xs[8].abs()));
    }
}
