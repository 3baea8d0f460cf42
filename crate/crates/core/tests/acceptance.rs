//! Acceptance suite: every shipped guarantee, one test per criterion, each
//! printing a single PASS line with its measured numbers. Tolerances are
//! pinned in code; the bundled scenario corpus drives the checks.

use dirac_aa_core::action::{isotropy_of_fields, ActionFamily, ActionSetup};
use dirac_aa_core::chart::Chart;
use dirac_aa_core::dirac::DiracField;
use dirac_aa_core::expr::Expression;
use dirac_aa_core::fields::{BivectorField, KForm, TensorValues, VectorField};
use dirac_aa_core::flow::{FlowEngine, SystemFlow, WeightedField};
use dirac_aa_core::halton::sample_points;
use dirac_aa_core::lattice::unimodular_transform;
use dirac_aa_core::runner::unimodular_samples;
use dirac_aa_core::scenario::Scenario;
use dirac_aa_core::system::IntegrableSystem;
use dirac_aa_core::torus::{
    find_period_lattice, joint_flow, verify_structure_preservation, TorusGrid,
    TorusQuadrature,
};
use nalgebra::DMatrix;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

const POSITIVE_SCENARIOS: [&str; 9] = [
    "oscillator",
    "pendulum",
    "t2xr",
    "t2xr_sqrt2",
    "poisson_r3",
    "dirac_t2xr2",
    "canonical",
    "product_r4",
    "induced_t2xr2",
];

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenarios/{name}.toml"))
}

fn load(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).unwrap_or_else(|e| panic!("loading {name}: {e}"))
}

struct Built {
    chart: Arc<Chart>,
    dirac: DiracField,
    samples: Vec<Vec<f64>>,
    sys: Option<IntegrableSystem>,
    scenario: Scenario,
}

fn build(name: &str) -> Built {
    let scenario = load(name);
    let parent = scenario.build_chart().unwrap();
    let parent_samples = sample_points(&parent, 128, 0);
    let built = scenario
        .build_structure(&parent, &parent_samples, 32, 0)
        .unwrap_or_else(|e| panic!("structure of {name}: {e}"));
    let chart = built.dirac.chart().clone();
    let samples = if chart == parent {
        parent_samples
    } else {
        sample_points(&chart, 128, 0)
    };
    let mut sys = scenario.build_system(&chart).unwrap();
    if let (Some(s), Ok(Some(hams))) = (sys.as_mut(), scenario.hamiltonian_exprs(&chart)) {
        s.bind_hamiltonians(&built.dirac, hams, &samples)
            .unwrap_or_else(|e| panic!("binding {name}: {e}"));
    }
    Built { chart, dirac: built.dirac, samples, sys, scenario }
}

fn build_family(b: &Built) -> ActionFamily {
    let disk = b.scenario.build_disk(&b.chart).unwrap().expect("disk");
    ActionFamily::build(ActionSetup {
        engine: FlowEngine::default(),
        sys: b.sys.clone().expect("system"),
        dirac: b.dirac.clone(),
        disk,
        seed: b.scenario.torus.as_ref().unwrap().seed.clone(),
        hypothesis: b.scenario.hypothesis().unwrap(),
        search: b.scenario.lattice_search(),
    })
    .unwrap_or_else(|e| panic!("family: {e}"))
}

#[test]
fn criterion_01_axiom_suite() {
    let start = Instant::now();
    let mut worst_gram = 0.0f64;
    let mut worst_closed = 0.0f64;
    for name in POSITIVE_SCENARIOS {
        let b = build(name);
        let frame = b.dirac.verify_frame(&b.samples).unwrap();
        let closed = b.dirac.courant_closedness(&b.samples).unwrap();
        assert!(frame.max_gram <= 1e-10, "{name}: isotropy {:.3e}", frame.max_gram);
        assert!(closed.max_residual <= 1e-9, "{name}: closedness {:.3e}", closed.max_residual);
        worst_gram = worst_gram.max(frame.max_gram);
        worst_closed = worst_closed.max(closed.max_residual);
    }
    // Negative controls must fail loudly.
    let bad = build("nonclosed");
    let closed = bad.dirac.courant_closedness(&bad.samples).unwrap();
    assert!(closed.max_residual >= 0.05, "nonclosed control too quiet: {:.3e}", closed.max_residual);

    let nc = load("noncommuting");
    let chart = nc.build_chart().unwrap();
    let samples = sample_points(&chart, 128, 0);
    let sys = nc.build_system(&chart).unwrap().unwrap();
    let report = sys.check_integrability(&samples, &samples).unwrap();
    assert!(report.commutator_residual >= 0.05, "noncommuting control too quiet");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() <= 5.0, "axiom suite took {elapsed:?} (> 5 s)");
    println!(
        "ACCEPTANCE 01 axiom-suite: PASS (isotropy <= {worst_gram:.2e}, closedness <= {worst_closed:.2e}, controls fail, {elapsed:?})"
    );
}

#[test]
fn criterion_02_bi_corank_map() {
    let expected = [
        ("oscillator", (0usize, 0usize)),
        ("poisson_r3", (0, 1)),
        ("t2xr", (1, 0)),
        ("dirac_t2xr2", (1, 1)),
    ];
    for (name, (r, s)) in expected {
        let b = build(name);
        for p in b.samples.iter().take(32) {
            let bc = b.dirac.frame_at(p).unwrap().bi_corank().unwrap();
            assert_eq!((bc.r, bc.s), (r, s), "{name} at {p:?}");
            assert_eq!((b.chart.dim() - bc.r - bc.s) % 2, 0, "parity at {p:?}");
        }
    }
    // Parity holds across every positive scenario.
    for name in POSITIVE_SCENARIOS {
        let b = build(name);
        for p in b.samples.iter().take(16) {
            let bc = b.dirac.frame_at(p).unwrap().bi_corank().unwrap();
            assert_eq!((b.chart.dim() - bc.r - bc.s) % 2, 0, "{name}: parity at {p:?}");
        }
    }
    println!("ACCEPTANCE 02 bi-corank-map: PASS ((0,0),(0,1),(1,0),(1,1) as expected, parity even)");
}

#[test]
fn criterion_03_liouville_machinery() {
    let start = Instant::now();
    let engine = FlowEngine::default();

    // sqrt(2)-flow lattice up to unimodular equivalence.
    let b = build("t2xr_sqrt2");
    let sys = b.sys.as_ref().unwrap();
    let seed = &b.scenario.torus.as_ref().unwrap().seed;
    let search = b.scenario.lattice_search();
    let tc = find_period_lattice(&engine, sys, seed, &search).unwrap();
    let s2 = 2.0f64.sqrt();
    let expected = DMatrix::from_row_slice(2, 2, &[1.0, -s2, 0.0, 1.0]);
    let u = unimodular_transform(&expected, tc.lattice()).expect("unimodular equivalence");
    let recovered = &u * &expected;
    assert!((recovered - tc.lattice()).amax() <= 1e-8, "lattice off by more than 1e-8");

    // Oscillator period.
    let b = build("oscillator");
    let sys = b.sys.as_ref().unwrap();
    let search = b.scenario.lattice_search();
    let tc1 = find_period_lattice(&engine, sys, &[1.0, 0.0], &search).unwrap();
    let period = tc1.lattice()[(0, 0)];
    assert!(
        (period - 2.0 * std::f64::consts::PI).abs() <= 1e-9,
        "oscillator period {period}"
    );

    // Two base points on one torus give equivalent lattices.
    let flow = SystemFlow::new(sys.chart(), sys.fields());
    let other = joint_flow(&engine, &flow, &[1.77], &[1.0, 0.0]).unwrap();
    let tc2 = find_period_lattice(&engine, sys, &other, &search).unwrap();
    assert!(unimodular_transform(tc1.lattice(), tc2.lattice()).is_some());

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() <= 10.0, "Liouville machinery took {elapsed:?}");
    println!(
        "ACCEPTANCE 03 liouville-machinery: PASS (sqrt2 lattice equivalent, period {period:.12}, {elapsed:?})"
    );
}

#[test]
fn criterion_04_structure_preservation_and_averaging() {
    let engine = FlowEngine::default();
    let mut worst_pres = 0.0f64;
    for name in POSITIVE_SCENARIOS {
        let b = build(name);
        let (Some(sys), Some(tb)) = (b.sys.as_ref(), b.scenario.torus.as_ref()) else {
            continue;
        };
        let search = b.scenario.lattice_search();
        let tc = find_period_lattice(&engine, sys, &tb.seed, &search).unwrap();
        let report = verify_structure_preservation(sys, &tc, &b.dirac, &b.samples).unwrap();
        assert!(report.system_residual <= 1e-8, "{name}: system residual {:.3e}", report.system_residual);
        assert!(
            report.generator_residual <= 1e-8,
            "{name}: generator residual {:.3e}",
            report.generator_residual
        );
        worst_pres = worst_pres.max(report.generator_residual.max(report.system_residual));
    }

    // The torus generator preserves the bivector in the Schouten sense.
    {
        let b = build("poisson_r3");
        let sys = b.sys.as_ref().unwrap();
        let tb = b.scenario.torus.as_ref().unwrap();
        let tc = find_period_lattice(&engine, sys, &tb.seed, &b.scenario.lattice_search()).unwrap();
        let pi = BivectorField::from_terms(&b.chart, vec![((0, 1), Expression::int(&b.chart, 1))])
            .unwrap();
        let z = tc.generator_field(sys, 0).unwrap();
        let schouten = pi.schouten_with(&z).unwrap();
        let residual = schouten.max_abs_on(&b.samples).unwrap_or(0.0);
        assert!(residual <= 1e-9, "generator Schouten residual {residual:.3e}");
    }

    // Averaging fixes invariant tensors and is idempotent.
    let mut worst_fix = 0.0f64;
    let mut worst_idem = 0.0f64;
    for name in ["oscillator", "poisson_r3", "dirac_t2xr2"] {
        let b = build(name);
        let sys = b.sys.as_ref().unwrap();
        let tb = b.scenario.torus.as_ref().unwrap();
        let search = b.scenario.lattice_search();
        let tc = find_period_lattice(&engine, sys, &tb.seed, &search).unwrap();
        let quad = TorusQuadrature::uniform(sys.p(), 16).unwrap();
        let grid = TorusGrid::build(&engine, sys, &tc, &quad).unwrap();
        // The structure's own tensor is invariant by Dirac preservation.
        let tensor = match name {
            "oscillator" => {
                KForm::from_terms(&b.chart, 2, vec![(vec![0, 1], Expression::int(&b.chart, 1))])
                    .unwrap()
                    .as_tensor()
            }
            "poisson_r3" => BivectorField::from_terms(
                &b.chart,
                vec![((0, 1), Expression::int(&b.chart, 1))],
            )
            .unwrap()
            .as_tensor(),
            _ => KForm::from_terms(&b.chart, 2, vec![(vec![0, 2], Expression::int(&b.chart, 1))])
                .unwrap()
                .as_tensor(),
        };
        let avg = grid.average(&tensor).unwrap();
        assert!(avg.max_deviation <= 1e-10, "{name}: average moved the tensor {:.3e}", avg.max_deviation);
        let idem = grid.reaverage_change(&avg);
        assert!(idem <= 1e-10, "{name}: averaging not idempotent {idem:.3e}");
        worst_fix = worst_fix.max(avg.max_deviation);
        worst_idem = worst_idem.max(idem);
    }
    println!(
        "ACCEPTANCE 04 structure-preservation: PASS (residuals <= {worst_pres:.2e}, average fix <= {worst_fix:.2e}, idempotence <= {worst_idem:.2e})"
    );
}

#[test]
fn criterion_05_torus_isotropy() {
    let mut worst = 0.0f64;
    for name in ["oscillator", "t2xr", "t2xr_sqrt2", "poisson_r3", "dirac_t2xr2", "canonical", "product_r4"] {
        let b = build(name);
        let sys = b.sys.as_ref().unwrap();
        assert!(sys.hamiltonians().is_some(), "{name} must bind Hamiltonians");
        let iso = isotropy_of_fields(&b.dirac, sys, &b.samples).unwrap();
        assert!(iso <= 1e-9, "{name}: omega_S(X_i, X_j) = {iso:.3e}");
        worst = worst.max(iso);
    }
    // The designed non-Hamiltonian control is flagged.
    let b = build("nonhamiltonian");
    let sys = b.sys.as_ref().unwrap();
    let iso = isotropy_of_fields(&b.dirac, sys, &b.samples).unwrap();
    assert!(iso >= 0.5, "control should be flagged, got {iso:.3e}");
    println!(
        "ACCEPTANCE 05 torus-isotropy: PASS (Hamiltonian scenarios <= {worst:.2e}, control flagged at {iso:.2})"
    );
}

#[test]
fn criterion_06_actions() {
    let start = Instant::now();

    // Oscillator: A(r) - A(r0) = pi (r^2 - r0^2) by path integral.
    let b = build("oscillator");
    let fam = build_family(&b);
    let x0 = fam.nodes()[0].disk_values[0];
    let mut worst_path = 0.0f64;
    for nd in fam.nodes() {
        let x = nd.disk_values[0];
        let expected = std::f64::consts::PI * (x * x - x0 * x0);
        worst_path = worst_path.max((nd.actions[0] - expected).abs());
    }
    let probe = [1.07, 0.31];
    let r2 = probe[0] * probe[0] + probe[1] * probe[1];
    let expected = std::f64::consts::PI * (r2 - x0 * x0);
    let a_probe = fam.action_by_path_integral(0, &probe).unwrap();
    worst_path = worst_path.max((a_probe - expected).abs());
    assert!(worst_path <= 1e-7, "oscillator path actions off by {worst_path:.3e}");

    // |Mineur| agrees with the path integrals.
    let alpha = KForm::from_terms(&b.chart, 1, vec![(vec![1], Expression::coord(&b.chart, 0))])
        .unwrap();
    let m0 = fam.action_by_mineur(0, 0, &alpha).unwrap();
    let mut worst_mineur = 0.0f64;
    for (i, nd) in fam.nodes().iter().enumerate() {
        let m = fam.action_by_mineur(i, 0, &alpha).unwrap();
        worst_mineur = worst_mineur.max(((m.abs() - m0.abs()) - nd.actions[0]).abs());
    }
    assert!(worst_mineur <= 1e-7, "Mineur mismatch {worst_mineur:.3e}");

    // Pendulum against the independent area oracle at fixed energy.
    let b = build("pendulum");
    let fam = build_family(&b);
    let oracle = |energy: f64| -> f64 {
        // Area under p(q) = sqrt(2 (E + cos 2 pi q)) over one period, by the
        // trapezoid rule on a periodic integrand.
        let n = 4096;
        (0..n)
            .map(|i| {
                let q = i as f64 / n as f64;
                (2.0 * (energy + (2.0 * std::f64::consts::PI * q).cos())).sqrt()
            })
            .sum::<f64>()
            / n as f64
    };
    let h = Expression::parse("p^2/2 - cos(2*pi*q)", &b.chart).unwrap();
    let e0 = h.eval(&fam.nodes()[0].base_point).unwrap();
    let base_area = oracle(e0);
    let mut worst_pendulum = 0.0f64;
    for nd in fam.nodes() {
        let e = h.eval(&nd.base_point).unwrap();
        let expected = oracle(e) - base_area;
        worst_pendulum = worst_pendulum.max((nd.actions[0] - expected).abs());
    }
    assert!(worst_pendulum <= 1e-6, "pendulum action vs oracle: {worst_pendulum:.3e}");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() <= 20.0, "actions took {elapsed:?}");
    println!(
        "ACCEPTANCE 06 actions: PASS (oscillator <= {worst_path:.2e}, Mineur <= {worst_mineur:.2e}, pendulum <= {worst_pendulum:.2e}, {elapsed:?})"
    );
}

#[test]
fn criterion_07_full_action_angle() {
    let mut worst = 0.0f64;
    for (name, probe) in [
        ("oscillator", vec![1.05, 0.2]),
        ("t2xr", vec![0.2, 0.6, 0.05]),
        ("dirac_t2xr2", vec![0.2, 0.6, 0.05, 0.1]),
    ] {
        let b = build(name);
        let fam = build_family(&b);
        let res = fam.full_aa_residual_at(&probe, 1e-4, false).unwrap();
        assert!(res <= 1e-5, "{name}: full AA residual {res:.3e}");
        worst = worst.max(res);
    }
    // O(h^2) convergence of the raw differencing residual (oscillator).
    let b = build("oscillator");
    let fam = build_family(&b);
    let probe = [1.05, 0.2];
    let r1 = fam.full_aa_residual_at(&probe, 2e-2, true).unwrap();
    let r2 = fam.full_aa_residual_at(&probe, 1e-2, true).unwrap();
    let ratio = r1 / r2;
    assert!(
        (2.8..6.0).contains(&ratio),
        "expected O(h^2): r({:.0e}) = {r1:.3e}, r({:.0e}) = {r2:.3e}, ratio {ratio:.2}",
        2e-2,
        1e-2
    );
    println!(
        "ACCEPTANCE 07 full-action-angle: PASS (residuals <= {worst:.2e}, h^2 ratio {ratio:.2})"
    );
}

#[test]
fn criterion_08_partial_action_angle() {
    // Poisson circle system: defect annihilates the angle directions.
    let b = build("poisson_r3");
    let fam = build_family(&b);
    let probe = [1.0, 0.3, 0.0];
    let delta = fam.aa_defect_at(&probe, 1e-4).unwrap();
    let z = fam.sys().fields()[0].eval(&probe).unwrap();
    let mut angle_defect = 0.0f64;
    for c in 0..3 {
        let mut e = nalgebra::DVector::zeros(3);
        e[c] = 1.0;
        angle_defect = angle_defect.max((z.transpose() * &delta * e)[(0, 0)].abs());
    }
    assert!(angle_defect <= 1e-5, "poisson circle angle defect {angle_defect:.3e}");

    // Product scenario: angle defect vanishes and f[u,v] = 1 is recovered.
    let b = build("product_r4");
    let fam = build_family(&b);
    let probe = [1.02, 0.3, 0.1, -0.2];
    let delta = fam.aa_defect_at(&probe, 1e-4).unwrap();
    let z = fam.sys().fields()[0].eval(&probe).unwrap();
    let mut product_defect = 0.0f64;
    for c in 0..4 {
        let mut e = nalgebra::DVector::zeros(4);
        e[c] = 1.0;
        product_defect = product_defect.max((z.transpose() * &delta * e)[(0, 0)].abs());
    }
    assert!(product_defect <= 1e-5, "product angle defect {product_defect:.3e}");
    let f_uv = delta[(2, 3)];
    assert!((f_uv - 1.0).abs() <= 1e-6, "recovered f[u,v] = {f_uv}");
    println!(
        "ACCEPTANCE 08 partial-action-angle: PASS (defects <= {:.2e}, f[u,v] = {f_uv:.9})",
        angle_defect.max(product_defect)
    );
}

#[test]
fn criterion_09_coaffine() {
    // Five seeded unimodular recombinations on the type-(2,1) scenario.
    let b = build("t2xr");
    let fam = build_family(&b);
    let mut worst = 0.0f64;
    for u in unimodular_samples(2, 5, 12345) {
        let dev = fam.coaffine_transition(&u).unwrap();
        assert!(dev <= 1e-7, "transition deviation {dev:.3e} for U = {u:?}");
        worst = worst.max(dev);
    }
    let rank = fam.action_dependence_rank().unwrap();
    assert_eq!(rank, 1, "type-(2,1) scenario must have dependence rank 1");
    println!("ACCEPTANCE 09 coaffine: PASS (transitions <= {worst:.2e}, dependence rank {rank})");
}

#[test]
fn criterion_10_calculus_kernel() {
    let c = Chart::cartesian("xyz", &["x", "y", "z"], &[(-1.5, 1.5); 3]).unwrap();

    // d^2 = 0 on randomized 1-forms (fixed pseudo-random coefficients).
    let coeffs = ["x^2*y - z", "sin(x)*z + y", "exp(x*y/4) - y^2*z"];
    for (i, coeff) in coeffs.iter().enumerate() {
        let form = KForm::from_terms(
            &c,
            1,
            vec![(vec![i], Expression::parse(coeff, &c).unwrap())],
        )
        .unwrap();
        let dd = form.exterior_d().exterior_d();
        let samples = sample_points(&c, 32, 7);
        let max = dd.max_abs_on(&samples).unwrap_or(0.0);
        assert!(max <= 1e-9, "d^2 residual {max:.3e}");
    }

    // Cartan formula against the Leibniz tensor Lie derivative.
    let x = VectorField::parse(&c, &["y*z", "sin(x)", "x^2/4"]).unwrap();
    let w = KForm::from_terms(
        &c,
        2,
        vec![
            (vec![0, 1], Expression::parse("z^2 + 1", &c).unwrap()),
            (vec![1, 2], Expression::parse("cos(x)", &c).unwrap()),
        ],
    )
    .unwrap();
    let cartan = w.lie_derivative(&x).unwrap();
    let leibniz = w.as_tensor().lie_derivative(&x).unwrap();
    for p in sample_points(&c, 16, 3) {
        let a = cartan.eval_matrix(&p).unwrap();
        let t = leibniz.eval_dense(&p).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((a[(i, j)] - t.get(&[i, j])).abs() <= 1e-9, "Cartan mismatch");
            }
        }
    }

    // Jacobi identity for the Lie bracket.
    let y = VectorField::parse(&c, &["x*y", "1", "cos(z)"]).unwrap();
    let z = VectorField::parse(&c, &["z^2/4", "x", "y"]).unwrap();
    let j1 = x.lie_bracket(&y.lie_bracket(&z).unwrap()).unwrap();
    let j2 = y.lie_bracket(&z.lie_bracket(&x).unwrap()).unwrap();
    let j3 = z.lie_bracket(&x.lie_bracket(&y).unwrap()).unwrap();
    for p in sample_points(&c, 16, 5) {
        let total = j1.eval(&p).unwrap() + j2.eval(&p).unwrap() + j3.eval(&p).unwrap();
        assert!(total.amax() <= 1e-9, "Jacobi residual {:.3e}", total.amax());
    }

    // Schouten bracket against the finite-difference flow-pullback oracle
    // (Richardson-extrapolated central differences of Phi_h^* Pi).
    let pi = BivectorField::from_terms(
        &c,
        vec![
            ((0, 1), Expression::parse("1 + z^2/4", &c).unwrap()),
            ((1, 2), Expression::parse("x/2", &c).unwrap()),
        ],
    )
    .unwrap();
    let field = VectorField::parse(&c, &["y/2", "sin(x)/2", "x*z/4"]).unwrap();
    let symbolic = pi.schouten_with(&field).unwrap();
    let engine = FlowEngine { rel_tol: 1e-13, abs_tol: 1e-14, max_steps: 1_000_000 };
    let wf = WeightedField::from_field(&field).without_domain_guard();
    let pullback_at = |x0: &[f64], t: f64| -> TensorValues {
        let (image, jac) = wf.flow_with_jacobian(&engine, x0, t).unwrap();
        let vals = pi.as_tensor().eval_dense(&image).unwrap();
        let jac_inv = jac.clone().try_inverse().unwrap();
        vals.pullback(&jac, &jac_inv)
    };
    for p in [[0.4, -0.3, 0.6], [-0.5, 0.7, 0.1]] {
        let central = |h: f64| -> TensorValues {
            let mut fwd = pullback_at(&p, h);
            let bwd = pullback_at(&p, -h);
            fwd.add_scaled(&bwd, -1.0);
            for v in fwd.data.iter_mut() {
                *v /= 2.0 * h;
            }
            fwd
        };
        let d1 = central(1e-2);
        let d2 = central(5e-3);
        // Richardson: (4 D_{h/2} - D_h) / 3.
        let mut oracle = d2.clone();
        for (o, (a, b)) in oracle.data.iter_mut().zip(d2.data.iter().zip(&d1.data)) {
            *o = (4.0 * a - b) / 3.0;
        }
        let exact = symbolic.as_tensor().eval_dense(&p).unwrap();
        let err = oracle.max_abs_diff(&exact);
        assert!(err <= 1e-9, "Schouten vs flow oracle: {err:.3e}");
    }

    // The same flow oracle for a 2-form: L_X omega against pullback
    // differencing.
    let omega = KForm::from_terms(
        &c,
        2,
        vec![(vec![0, 1], Expression::parse("1 + z^2/4", &c).unwrap())],
    )
    .unwrap();
    let lie = omega.lie_derivative(&field).unwrap();
    let pullback_form = |x0: &[f64], t: f64| -> TensorValues {
        let (image, jac) = wf.flow_with_jacobian(&engine, x0, t).unwrap();
        let vals = omega.as_tensor().eval_dense(&image).unwrap();
        let jac_inv = jac.clone().try_inverse().unwrap();
        vals.pullback(&jac, &jac_inv)
    };
    for p in [[0.4, -0.3, 0.6]] {
        let central = |h: f64| -> TensorValues {
            let mut fwd = pullback_form(&p, h);
            let bwd = pullback_form(&p, -h);
            fwd.add_scaled(&bwd, -1.0);
            for v in fwd.data.iter_mut() {
                *v /= 2.0 * h;
            }
            fwd
        };
        let d1 = central(1e-2);
        let d2 = central(5e-3);
        let mut oracle = d2.clone();
        for (o, (a, b)) in oracle.data.iter_mut().zip(d2.data.iter().zip(&d1.data)) {
            *o = (4.0 * a - b) / 3.0;
        }
        let exact = lie.as_tensor().eval_dense(&p).unwrap();
        let err = oracle.max_abs_diff(&exact);
        assert!(err <= 1e-9, "form Lie derivative vs flow oracle: {err:.3e}");
    }

    println!("ACCEPTANCE 10 calculus-kernel: PASS (d^2, Cartan, Jacobi, Schouten-vs-flow at 1e-9)");
}
