//! Integrable systems of type `(p, q)`: `p` commuting vector fields and `q`
//! joint first integrals on an n-chart with `p + q = n`, plus optional
//! Hamiltonians bound against a Dirac structure.

use crate::chart::{same_chart, Chart};
use crate::dirac::DiracField;
use crate::error::{CoreError, Result};
use crate::expr::Expression;
use crate::fields::VectorField;
use crate::linalg;
use crate::tol;
use nalgebra::DMatrix;
use std::sync::Arc;

/// Residuals and wedge norms of the defining conditions over a sample set.
#[derive(Debug, Clone)]
pub struct RegularityReport {
    /// Max |[X_i, X_j]| component over samples.
    pub commutator_residual: f64,
    /// Max |X_i(F_j)| over samples.
    pub invariance_residual: f64,
    /// Min smallest-singular-value of the p x n field matrix over the
    /// declared regular samples.
    pub wedge_x_min: f64,
    /// Same for the q x n differential matrix.
    pub wedge_df_min: f64,
    pub worst_point: Vec<f64>,
}

impl RegularityReport {
    pub fn passes(&self) -> bool {
        self.commutator_residual <= tol::SYSTEM_RESIDUAL
            && self.invariance_residual <= tol::SYSTEM_RESIDUAL
            && self.wedge_x_min > tol::WEDGE_MIN
            && self.wedge_df_min > tol::WEDGE_MIN
    }
}

/// The tuple `(X_1..X_p, F_1..F_q)` with optional Hamiltonians `H_1..H_p`.
#[derive(Debug, Clone)]
pub struct IntegrableSystem {
    chart: Arc<Chart>,
    fields: Vec<VectorField>,
    integrals: Vec<Expression>,
    hamiltonians: Option<Vec<Expression>>,
    /// Sub-box of the domain declared regular (condition iii holds there);
    /// defaults to the whole domain box.
    regular_box: Option<Vec<(f64, f64)>>,
}

impl IntegrableSystem {
    pub fn new(
        chart: &Arc<Chart>,
        fields: Vec<VectorField>,
        integrals: Vec<Expression>,
    ) -> Result<IntegrableSystem> {
        if fields.is_empty() {
            return Err(CoreError::Scenario("need at least one vector field".into()));
        }
        if fields.len() + integrals.len() != chart.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: chart.dim(),
                got: fields.len() + integrals.len(),
            });
        }
        for f in &fields {
            same_chart(chart, f.chart())?;
        }
        for g in &integrals {
            same_chart(chart, g.chart())?;
        }
        Ok(IntegrableSystem {
            chart: chart.clone(),
            fields,
            integrals,
            hamiltonians: None,
            regular_box: None,
        })
    }

    pub fn with_regular_box(mut self, regular_box: Vec<(f64, f64)>) -> Result<IntegrableSystem> {
        if regular_box.len() != self.chart.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.chart.dim(),
                got: regular_box.len(),
            });
        }
        self.regular_box = Some(regular_box);
        Ok(self)
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn p(&self) -> usize {
        self.fields.len()
    }

    pub fn q(&self) -> usize {
        self.integrals.len()
    }

    pub fn fields(&self) -> &[VectorField] {
        &self.fields
    }

    pub fn integrals(&self) -> &[Expression] {
        &self.integrals
    }

    pub fn hamiltonians(&self) -> Option<&[Expression]> {
        self.hamiltonians.as_deref()
    }

    /// Samples over the declared regular region (the regular box if one was
    /// given, else the chart's domain box).
    pub fn regular_samples(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        match &self.regular_box {
            None => Ok(crate::halton::sample_points(&self.chart, n, seed)),
            Some(bx) => {
                let names: Vec<&str> =
                    self.chart.coord_names().iter().map(|s| s.as_str()).collect();
                let sub = Chart::new("regular-region", &names, self.chart.periodic_flags(), bx)?;
                Ok(crate::halton::sample_points(&sub, n, seed))
            }
        }
    }

    /// Evaluate the p x n matrix of field components (row i = X_i(x)).
    pub fn field_matrix(&self, point: &[f64]) -> Result<DMatrix<f64>> {
        let p = self.p();
        let n = self.chart.dim();
        let mut m = DMatrix::zeros(p, n);
        for (i, f) in self.fields.iter().enumerate() {
            let v = f.eval(point)?;
            m.set_row(i, &v.transpose());
        }
        Ok(m)
    }

    /// Evaluate the q x n matrix of integral differentials (row j = dF_j(x)).
    pub fn differential_matrix(&self, point: &[f64]) -> Result<DMatrix<f64>> {
        let q = self.q();
        let n = self.chart.dim();
        let mut m = DMatrix::zeros(q, n);
        for (j, g) in self.integrals.iter().enumerate() {
            for k in 0..n {
                m[(j, k)] = g.diff_index(k).eval(point)?;
            }
        }
        Ok(m)
    }

    /// The defining conditions over samples: commutators and invariance on
    /// `samples`, wedge norms on `regular_samples` (condition iii holds
    /// "almost everywhere", so it is only enforced on the declared region).
    pub fn check_integrability(
        &self,
        samples: &[Vec<f64>],
        regular_samples: &[Vec<f64>],
    ) -> Result<RegularityReport> {
        let mut commutator_residual = 0.0f64;
        let mut invariance_residual = 0.0f64;
        let mut worst = samples.first().cloned().unwrap_or_default();

        let p = self.p();
        let mut brackets = Vec::new();
        for i in 0..p {
            for j in (i + 1)..p {
                brackets.push(self.fields[i].lie_bracket(&self.fields[j])?);
            }
        }
        let mut derivatives = Vec::new();
        for f in &self.fields {
            for g in &self.integrals {
                derivatives.push(f.apply(g)?);
            }
        }
        for pt in samples {
            for b in &brackets {
                let v = b.eval(pt)?.amax();
                if v > commutator_residual {
                    commutator_residual = v;
                    worst = pt.clone();
                }
            }
            for d in &derivatives {
                let v = d.eval(pt)?.abs();
                if v > invariance_residual {
                    invariance_residual = v;
                    worst = pt.clone();
                }
            }
        }

        let mut wedge_x_min = f64::INFINITY;
        let mut wedge_df_min = f64::INFINITY;
        for pt in regular_samples {
            wedge_x_min = wedge_x_min.min(linalg::min_singular_value(&self.field_matrix(pt)?));
            if self.q() > 0 {
                wedge_df_min =
                    wedge_df_min.min(linalg::min_singular_value(&self.differential_matrix(pt)?));
            }
        }
        Ok(RegularityReport {
            commutator_residual,
            invariance_residual,
            wedge_x_min,
            wedge_df_min,
            worst_point: worst,
        })
    }

    /// Condition iii) at a single point.
    pub fn is_regular_at(&self, point: &[f64]) -> Result<bool> {
        let wx = linalg::min_singular_value(&self.field_matrix(point)?);
        let wf = if self.q() > 0 {
            linalg::min_singular_value(&self.differential_matrix(point)?)
        } else {
            f64::INFINITY
        };
        Ok(wx > tol::WEDGE_MIN && wf > tol::WEDGE_MIN)
    }

    /// Verify `(X_i, dH_i)` against the structure for every i and bind the
    /// Hamiltonians; also checks that the Poisson brackets `{H_i, H_j} =
    /// X_i(H_j)` vanish at the samples.
    pub fn bind_hamiltonians(
        &mut self,
        dirac: &DiracField,
        hamiltonians: Vec<Expression>,
        samples: &[Vec<f64>],
    ) -> Result<()> {
        if hamiltonians.len() != self.p() {
            return Err(CoreError::DimensionMismatch {
                expected: self.p(),
                got: hamiltonians.len(),
            });
        }
        for (x, h) in self.fields.iter().zip(&hamiltonians) {
            let verdict = dirac.is_hamiltonian_pair(x, h, samples)?;
            if !verdict.ok {
                return Err(CoreError::NotHamiltonian {
                    residual: verdict.max_residual,
                    point: verdict.worst_point,
                });
            }
        }
        // Prop: pairwise brackets {H_i, H_j} vanish near a regular level.
        for (i, x) in self.fields.iter().enumerate() {
            for (j, h) in hamiltonians.iter().enumerate() {
                if i == j {
                    continue;
                }
                let bracket = x.apply(h)?;
                for pt in samples {
                    let v = bracket.eval(pt)?.abs();
                    if v > tol::SYSTEM_RESIDUAL {
                        return Err(CoreError::NotHamiltonian { residual: v, point: pt.clone() });
                    }
                }
            }
        }
        self.hamiltonians = Some(hamiltonians);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::KForm;
    use crate::halton::sample_points;

    fn oscillator() -> IntegrableSystem {
        let c = Chart::cartesian("xy", &["x", "y"], &[(-2.2, 2.2), (-2.2, 2.2)]).unwrap();
        let x = VectorField::parse(&c, &["y", "-x"]).unwrap();
        let f = Expression::parse("(x^2 + y^2) / 2", &c).unwrap();
        IntegrableSystem::new(&c, vec![x], vec![f])
            .unwrap()
            .with_regular_box(vec![(0.5, 1.4), (0.5, 1.4)])
            .unwrap()
    }

    fn t2xr_system() -> IntegrableSystem {
        let c = Chart::new(
            "t2xr",
            &["th1", "th2", "z"],
            &[true, true, false],
            &[(0.0, 1.0), (0.0, 1.0), (-1.0, 1.0)],
        )
        .unwrap();
        let x1 = VectorField::parse(&c, &["1", "0", "0"]).unwrap();
        let x2 = VectorField::parse(&c, &["0", "1", "0"]).unwrap();
        let f = Expression::coord(&c, 2);
        IntegrableSystem::new(&c, vec![x1, x2], vec![f]).unwrap()
    }

    #[test]
    fn oscillator_passes_on_annular_region() {
        let sys = oscillator();
        let samples = sample_points(sys.chart(), 64, 0);
        let regular = sys.regular_samples(64, 0).unwrap();
        let report = sys.check_integrability(&samples, &regular).unwrap();
        assert!(report.passes(), "{report:?}");
        assert_eq!(report.commutator_residual, 0.0);
        assert_eq!(report.invariance_residual, 0.0);
        assert!(report.wedge_x_min > 0.5);
    }

    #[test]
    fn constant_field_system_passes() {
        let sys = t2xr_system();
        let samples = sample_points(sys.chart(), 64, 0);
        let regular = sys.regular_samples(64, 0).unwrap();
        assert!(sys.check_integrability(&samples, &regular).unwrap().passes());
    }

    #[test]
    fn non_commuting_fields_fail() {
        let c = Chart::cartesian("xy", &["x", "y"], &[(-1.0, 1.0), (-1.0, 1.0)]).unwrap();
        let x1 = VectorField::parse(&c, &["1", "0"]).unwrap();
        let x2 = VectorField::parse(&c, &["0", "x"]).unwrap();
        let sys = IntegrableSystem::new(&c, vec![x1, x2], vec![]).unwrap();
        let samples = sample_points(&c, 64, 0);
        let report = sys.check_integrability(&samples, &samples).unwrap();
        assert!(!report.passes());
        assert!((report.commutator_residual - 1.0).abs() < 1e-12);
    }

    #[test]
    fn regularity_at_points() {
        let sys = oscillator();
        assert!(sys.is_regular_at(&[1.0, 0.0]).unwrap());
        assert!(!sys.is_regular_at(&[0.0, 0.0]).unwrap());
        let sys2 = t2xr_system();
        assert!(sys2.is_regular_at(&[0.3, 0.9, -0.2]).unwrap());
    }

    #[test]
    fn verdict_invariant_under_recombination() {
        let sys = t2xr_system();
        let c = sys.chart().clone();
        let samples = sample_points(&c, 64, 0);
        // Unimodular integer recombination of the fields, invertible
        // recombination of the integrals (q = 1: scaling).
        let y1 = sys.fields()[0].add(&sys.fields()[1]).unwrap();
        let y2 = sys.fields()[1].clone();
        let g = sys.integrals()[0].scale(3.0);
        let rec = IntegrableSystem::new(&c, vec![y1, y2], vec![g]).unwrap();
        assert!(rec.check_integrability(&samples, &samples).unwrap().passes());
    }

    #[test]
    fn bind_hamiltonians_on_oscillator() {
        let mut sys = oscillator();
        let c = sys.chart().clone();
        let samples = sample_points(&c, 32, 0);
        let omega =
            KForm::from_terms(&c, 2, vec![(vec![0, 1], Expression::int(&c, 1))]).unwrap();
        let d = DiracField::from_presymplectic(&omega, &samples).unwrap();
        let h = Expression::parse("(x^2 + y^2) / 2", &c).unwrap();
        sys.bind_hamiltonians(&d, vec![h], &samples).unwrap();
        assert!(sys.hamiltonians().is_some());

        // A wrong Hamiltonian is rejected.
        let mut sys2 = oscillator();
        let bad = Expression::coord(&c, 0);
        assert!(matches!(
            sys2.bind_hamiltonians(&d, vec![bad], &samples),
            Err(CoreError::NotHamiltonian { .. })
        ));
    }

    #[test]
    fn bind_hamiltonians_on_t2xr2() {
        let d = crate::dirac::tests::t2xr2_field();
        let c = d.chart().clone();
        let x1 = VectorField::coordinate(&c, 0);
        let x2 = VectorField::coordinate(&c, 1);
        let f1 = Expression::coord(&c, 2);
        let f2 = Expression::coord(&c, 3);
        let mut sys = IntegrableSystem::new(&c, vec![x1, x2], vec![f1, f2]).unwrap();
        let samples = sample_points(&c, 32, 0);
        let h1 = Expression::coord(&c, 2);
        let h2 = Expression::zero(&c);
        sys.bind_hamiltonians(&d, vec![h1, h2], &samples).unwrap();
    }
}
