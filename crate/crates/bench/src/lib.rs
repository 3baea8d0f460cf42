//! Shared fixtures for the benchmark suite.

use dirac_aa_core::chart::Chart;
use dirac_aa_core::dirac::DiracField;
use dirac_aa_core::expr::Expression;
use dirac_aa_core::fields::{KForm, VectorField};
use dirac_aa_core::system::IntegrableSystem;
use std::sync::Arc;

pub fn oscillator_chart() -> Arc<Chart> {
    Chart::cartesian("xy", &["x", "y"], &[(-2.2, 2.2), (-2.2, 2.2)]).unwrap()
}

pub fn oscillator_system() -> IntegrableSystem {
    let c = oscillator_chart();
    let x = VectorField::parse(&c, &["y", "-x"]).unwrap();
    let f = Expression::parse("(x^2 + y^2)/2", &c).unwrap();
    IntegrableSystem::new(&c, vec![x], vec![f]).unwrap()
}

pub fn t2xr2_structure() -> DiracField {
    let c = Chart::new(
        "t2xr2",
        &["th1", "th2", "z", "w"],
        &[true, true, false, false],
        &[(0.0, 1.0), (0.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)],
    )
    .unwrap();
    let one = Expression::int(&c, 1);
    let sections = vec![
        dirac_aa_core::dirac::Section::new(
            VectorField::coordinate(&c, 0),
            KForm::from_terms(&c, 1, vec![(vec![2], one.clone())]).unwrap(),
        )
        .unwrap(),
        dirac_aa_core::dirac::Section::new(VectorField::coordinate(&c, 1), KForm::zero(&c, 1))
            .unwrap(),
        dirac_aa_core::dirac::Section::new(
            VectorField::coordinate(&c, 2),
            KForm::from_terms(&c, 1, vec![(vec![0], one.clone())]).unwrap().neg(),
        )
        .unwrap(),
        dirac_aa_core::dirac::Section::new(
            VectorField::zero(&c),
            KForm::from_terms(&c, 1, vec![(vec![3], one)]).unwrap(),
        )
        .unwrap(),
    ];
    DiracField::new(&c, sections, dirac_aa_core::dirac::DiracKind::General).unwrap()
}
