//! Field-level Dirac structures on a chart: frames of smooth sections,
//! axiom verification (pointwise isotropy and rank, Courant closedness),
//! Hamiltonian pairs, Casimirs, admissibility, Poisson brackets, canonical
//! constructions and constraint-induced structures on coordinate slices.

use crate::chart::{same_chart, Chart};
use crate::error::{CoreError, Result};
use crate::expr::Expression;
use crate::fields::{BivectorField, KForm, VectorField};
use crate::linalg;
use crate::pointwise::{DiracPointFrame, DoubleVector};
use crate::tol;
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;
use std::sync::Arc;

/// A smooth section `(X, alpha)` of `TM ⊕ T*M` over a chart.
#[derive(Debug, Clone)]
pub struct Section {
    pub x: VectorField,
    pub alpha: KForm,
}

impl Section {
    pub fn new(x: VectorField, alpha: KForm) -> Result<Section> {
        same_chart(x.chart(), alpha.chart())?;
        if alpha.degree() != 1 {
            return Err(CoreError::Degree("section covector part must be a 1-form".into()));
        }
        Ok(Section { x, alpha })
    }

    pub fn chart(&self) -> &Arc<Chart> {
        self.x.chart()
    }

    /// The Courant bracket
    /// `[(X1, a1), (X2, a2)] = ([X1, X2], L_{X1} a2 - i_{X2} d a1)`.
    pub fn courant_bracket(&self, other: &Section) -> Result<Section> {
        let x = self.x.lie_bracket(&other.x)?;
        let lie = other.alpha.lie_derivative(&self.x)?;
        let contraction = self.alpha.exterior_d().interior(&other.x)?;
        let alpha = lie.add(&contraction.neg())?;
        Section::new(x, alpha)
    }

    pub fn eval(&self, point: &[f64]) -> Result<DoubleVector> {
        Ok(DoubleVector {
            x: self.x.eval(point)?,
            a: self.alpha.eval_covector(point)?,
        })
    }

    /// Constant linear combination of sections.
    pub fn linear_combination(
        chart: &Arc<Chart>,
        coeffs: &[f64],
        sections: &[Section],
    ) -> Result<Section> {
        let mut x = VectorField::zero(chart);
        let mut alpha = KForm::zero(chart, 1);
        for (c, s) in coeffs.iter().zip(sections) {
            x = x.add(&s.x.scale(*c))?;
            alpha = alpha.add(&s.alpha.scale(*c))?;
        }
        Section::new(x, alpha)
    }
}

/// How a Dirac frame was declared or constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiracKind {
    General,
    PresymplecticGraph,
    PoissonGraph,
    Canonical,
}

/// Scale-free membership verdict at the worst sample point.
#[derive(Debug, Clone)]
pub struct MembershipReport {
    pub ok: bool,
    pub max_residual: f64,
    pub worst_point: Vec<f64>,
}

/// Frame axioms over a sample set: pointwise rank and isotropy.
#[derive(Debug, Clone)]
pub struct FrameReport {
    pub max_gram: f64,
    pub worst_point: Vec<f64>,
    pub rank_ok: bool,
}

/// Courant closedness residuals over a sample set.
#[derive(Debug, Clone)]
pub struct ClosednessReport {
    pub max_residual: f64,
    pub worst_pair: (usize, usize),
    pub worst_point: Vec<f64>,
}

/// A Dirac structure presented by a global frame of `n` sections.
#[derive(Debug, Clone)]
pub struct DiracField {
    chart: Arc<Chart>,
    sections: Vec<Section>,
    kind: DiracKind,
}

impl DiracField {
    pub fn new(chart: &Arc<Chart>, sections: Vec<Section>, kind: DiracKind) -> Result<DiracField> {
        if sections.len() != chart.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: chart.dim(),
                got: sections.len(),
            });
        }
        for s in &sections {
            same_chart(chart, s.x.chart())?;
        }
        Ok(DiracField { chart: chart.clone(), sections, kind })
    }

    /// Graph of a closed 2-form: sections `(d_i, i_{d_i} omega)`. The sign
    /// convention pairs Hamiltonian fields as `dH = i_X omega`.
    pub fn from_presymplectic(omega: &KForm, samples: &[Vec<f64>]) -> Result<DiracField> {
        if omega.degree() != 2 {
            return Err(CoreError::Degree("presymplectic structure must be a 2-form".into()));
        }
        let chart = omega.chart().clone();
        let domega = omega.exterior_d();
        if !domega.is_empty() {
            // Worst sample residual of the non-closed part.
            let mut worst = (0.0f64, samples.first().cloned().unwrap_or_default());
            for p in samples {
                let mut norm = 0.0f64;
                for coeff in domega.terms().values() {
                    norm += coeff.eval(p)?.powi(2);
                }
                let norm = norm.sqrt();
                if norm > worst.0 {
                    worst = (norm, p.clone());
                }
            }
            if worst.0 > tol::ISOTROPY {
                return Err(CoreError::NotClosed { residual: worst.0, point: worst.1 });
            }
        }
        let sections = (0..chart.dim())
            .map(|i| {
                let e = VectorField::coordinate(&chart, i);
                let alpha = omega.interior(&e)?;
                Section::new(e, alpha)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DiracField { chart, sections, kind: DiracKind::PresymplecticGraph })
    }

    /// Graph of a bivector: sections `(sharp(dx_i), dx_i)` with
    /// `sharp(a)^j = sum_i Pi^{ji} a_i`, so that the graph of the standard
    /// bivector coincides with the graph of the standard symplectic form.
    /// The Jacobi identity is not checked here; it surfaces as the Courant
    /// closedness residual of the frame.
    pub fn from_poisson(pi: &BivectorField) -> Result<DiracField> {
        let chart = pi.chart().clone();
        let n = chart.dim();
        let sections = (0..n)
            .map(|i| {
                let comps: Vec<Expression> = (0..n).map(|j| pi.component(j, i)).collect();
                let x = VectorField::new(&chart, comps)?;
                let alpha = KForm::from_terms(&chart, 1, vec![(vec![i], Expression::int(&chart, 1))])?;
                Section::new(x, alpha)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DiracField { chart, sections, kind: DiracKind::PoissonGraph })
    }

    /// The canonical structure on coordinates
    /// `(q_1..q_p, p_1..p_p, v_1..v_r, c_1..c_s)`: leaves `{c = const}` carry
    /// `sum dq_i ^ dp_i` with kernel spanned by the `v` directions.
    pub fn canonical(chart: &Arc<Chart>, p: usize, r: usize, s: usize) -> Result<DiracField> {
        let n = chart.dim();
        if 2 * p + r + s != n {
            return Err(CoreError::DimensionMismatch { expected: n, got: 2 * p + r + s });
        }
        let one = Expression::int(chart, 1);
        let mut sections = Vec::with_capacity(n);
        for i in 0..p {
            // (d_{q_i}, dp_i)
            let alpha = KForm::from_terms(chart, 1, vec![(vec![p + i], one.clone())])?;
            sections.push(Section::new(VectorField::coordinate(chart, i), alpha)?);
        }
        for i in 0..p {
            // (d_{p_i}, -dq_i)
            let alpha =
                KForm::from_terms(chart, 1, vec![(vec![i], one.clone())])?.neg();
            sections.push(Section::new(VectorField::coordinate(chart, p + i), alpha)?);
        }
        for i in 0..r {
            // Kernel directions: (d_{v_i}, 0)
            sections.push(Section::new(
                VectorField::coordinate(chart, 2 * p + i),
                KForm::zero(chart, 1),
            )?);
        }
        for i in 0..s {
            // Casimir codirections: (0, dc_i)
            let alpha = KForm::from_terms(chart, 1, vec![(vec![2 * p + r + i], one.clone())])?;
            sections.push(Section::new(VectorField::zero(chart), alpha)?);
        }
        Ok(DiracField { chart: chart.clone(), sections, kind: DiracKind::Canonical })
    }

    /// Default chart for the canonical structure.
    pub fn canonical_chart(p: usize, r: usize, s: usize) -> Result<Arc<Chart>> {
        let mut names = Vec::new();
        for i in 1..=p {
            names.push(format!("q{i}"));
        }
        for i in 1..=p {
            names.push(format!("p{i}"));
        }
        for i in 1..=r {
            names.push(format!("v{i}"));
        }
        for i in 1..=s {
            names.push(format!("c{i}"));
        }
        let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let n = refs.len();
        Chart::cartesian("canonical", &refs, &vec![(-1.0, 1.0); n])
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn kind(&self) -> DiracKind {
        self.kind
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    /// Evaluate the frame at a point (errors if the span drops rank).
    pub fn frame_at(&self, point: &[f64]) -> Result<DiracPointFrame> {
        let cols = self
            .sections
            .iter()
            .map(|s| s.eval(point))
            .collect::<Result<Vec<_>>>()?;
        DiracPointFrame::new(point.to_vec(), cols)
    }

    /// Pointwise axioms over a sample set: rank n and isotropy at each point.
    pub fn verify_frame(&self, samples: &[Vec<f64>]) -> Result<FrameReport> {
        let mut max_gram = 0.0f64;
        let mut worst = samples.first().cloned().unwrap_or_default();
        for p in samples {
            let frame = self.frame_at(p)?;
            let g = frame.max_gram_entry();
            if g > max_gram {
                max_gram = g;
                worst = p.clone();
            }
        }
        Ok(FrameReport { max_gram, worst_point: worst, rank_ok: true })
    }

    /// Closedness under the Courant bracket: every pairwise bracket of frame
    /// sections must stay in the frame span. Residuals are least-squares
    /// distances normalized by the section magnitudes at the point.
    pub fn courant_closedness(&self, samples: &[Vec<f64>]) -> Result<ClosednessReport> {
        let n = self.chart.dim();
        let mut report = ClosednessReport {
            max_residual: 0.0,
            worst_pair: (0, 0),
            worst_point: samples.first().cloned().unwrap_or_default(),
        };
        for i in 0..n {
            for j in (i + 1)..n {
                let bracket = self.sections[i].courant_bracket(&self.sections[j])?;
                for p in samples {
                    let frame = self.frame_at(p)?;
                    let b = bracket.eval(p)?;
                    let scale = (self.sections[i].eval(p)?.norm()
                        * self.sections[j].eval(p)?.norm())
                    .max(1.0);
                    let d = linalg::distance_to_span(&frame.stacked(), &b.stacked(), tol::RANK_REL)
                        / scale;
                    if d > report.max_residual {
                        report.max_residual = d;
                        report.worst_pair = (i, j);
                        report.worst_point = p.clone();
                    }
                }
            }
        }
        Ok(report)
    }

    /// Is `(X, dH)` a section of the structure (sampled membership)?
    pub fn is_hamiltonian_pair(
        &self,
        x: &VectorField,
        h: &Expression,
        samples: &[Vec<f64>],
    ) -> Result<MembershipReport> {
        same_chart(&self.chart, x.chart())?;
        let dh = KForm::differential(h);
        let mut max_residual = 0.0f64;
        let mut worst = samples.first().cloned().unwrap_or_default();
        for p in samples {
            let frame = self.frame_at(p)?;
            let v = DoubleVector { x: x.eval(p)?, a: dh.eval_covector(p)? };
            let r = frame.membership_residual(&v);
            if r > max_residual {
                max_residual = r;
                worst = p.clone();
            }
        }
        Ok(MembershipReport { ok: max_residual <= tol::MEMBERSHIP, max_residual, worst_point: worst })
    }

    /// Is `(0, df)` a section (Casimir function)?
    pub fn is_casimir(&self, f: &Expression, samples: &[Vec<f64>]) -> Result<MembershipReport> {
        let zero = VectorField::zero(&self.chart);
        self.is_hamiltonian_pair(&zero, f, samples)
    }

    /// Does `dH` annihilate the kernel of the induced leaf forms?
    pub fn is_admissible_hamiltonian(
        &self,
        h: &Expression,
        samples: &[Vec<f64>],
    ) -> Result<MembershipReport> {
        let dh = KForm::differential(h);
        let mut max_residual = 0.0f64;
        let mut worst = samples.first().cloned().unwrap_or_default();
        for p in samples {
            let frame = self.frame_at(p)?;
            let kernel = frame.kernel_basis();
            let cov = dh.eval_covector(p)?;
            let scale = cov.norm().max(1.0);
            for k in 0..kernel.ncols() {
                let r = cov.dot(&kernel.column(k).into_owned()).abs() / scale;
                if r > max_residual {
                    max_residual = r;
                    worst = p.clone();
                }
            }
        }
        Ok(MembershipReport { ok: max_residual <= tol::MEMBERSHIP, max_residual, worst_point: worst })
    }

    /// Poisson bracket `{H, F} = X_H(F)` after verifying `(X_H, dH)` is a
    /// section.
    pub fn poisson_bracket(
        &self,
        h: &Expression,
        f: &Expression,
        x_h: &VectorField,
        samples: &[Vec<f64>],
    ) -> Result<Expression> {
        let verdict = self.is_hamiltonian_pair(x_h, h, samples)?;
        if !verdict.ok {
            return Err(CoreError::NotHamiltonian {
                residual: verdict.max_residual,
                point: verdict.worst_point,
            });
        }
        x_h.apply(f)
    }

    /// Extract the bivector of a Poisson graph (round-trip of
    /// `from_poisson`): `Pi^{ji}` is the `j`-component of section `i`.
    pub fn extract_poisson(&self) -> Result<BivectorField> {
        let n = self.chart.dim();
        let mut terms = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                // component (i, j): Pi^{ij} = x-part j of section... sharp
                // gives sections[k].x^j = Pi^{jk}, so Pi^{ij} = sections[j].x^i.
                terms.push(((i, j), self.sections[j].x.component(i).clone()));
            }
        }
        BivectorField::from_terms(&self.chart, terms)
    }

    /// Induced structure on the coordinate slice `{coords = values}`:
    /// pointwise `D_Q = {(X, a|_TQ) : X in TQ, (X, a) in D}`, realized as
    /// constant recombinations of the restricted sections. Rank must be
    /// constant across slice samples.
    pub fn induced_on_level(
        &self,
        constraints: &[(String, f64)],
        slice_samples: usize,
        seed: u64,
    ) -> Result<DiracField> {
        let n = self.chart.dim();
        let fixed_indices = constraints
            .iter()
            .map(|(name, _)| self.chart.index_of(name))
            .collect::<Result<Vec<_>>>()?;
        let mut fixed = BTreeMap::new();
        for (idx, (_, v)) in fixed_indices.iter().zip(constraints) {
            fixed.insert(*idx, *v);
        }
        let k = fixed.len();
        if k == 0 || k >= n {
            return Err(CoreError::NonRegularConstraint(
                "need between 1 and n-1 constraint coordinates".into(),
            ));
        }
        let sub = self.chart.slice(&fixed_indices)?;
        let expected_rank = n - k;

        // Samples on the slice, lifted to the ambient chart.
        let lifts: Vec<Vec<f64>> = crate::halton::sample_points(&sub, slice_samples, seed)
            .into_iter()
            .map(|sp| lift_point(&sp, &fixed, n))
            .collect();

        // Common kernel of the fixed-coordinate rows of the tangent parts.
        let mut stacked = DMatrix::zeros(0, n);
        for p in lifts.iter().take(8) {
            let frame = self.frame_at(p)?;
            let x = frame.x_parts();
            let mut rows = DMatrix::zeros(k, n);
            for (ri, &ci) in fixed_indices.iter().enumerate() {
                rows.set_row(ri, &x.row(ci));
            }
            let old = stacked;
            stacked = DMatrix::zeros(old.nrows() + k, n);
            stacked.rows_mut(0, old.nrows()).copy_from(&old);
            stacked.rows_mut(old.nrows(), k).copy_from(&rows);
        }
        let kernel = linalg::null_space_basis(&stacked, tol::RANK_REL);
        if kernel.ncols() < expected_rank {
            return Err(CoreError::NonRegularConstraint(format!(
                "tangency kernel has dimension {} < {} (no constant recombination)",
                kernel.ncols(),
                expected_rank
            )));
        }

        // Restrict candidate sections symbolically.
        let candidates: Vec<Section> = (0..kernel.ncols())
            .map(|j| {
                let coeffs: Vec<f64> = kernel.column(j).iter().copied().collect();
                let combined = Section::linear_combination(&self.chart, &coeffs, &self.sections)?;
                let x_comps: Vec<Expression> = (0..n)
                    .filter(|i| !fixed.contains_key(i))
                    .map(|i| combined.x.component(i).restrict(&fixed, &sub))
                    .collect();
                let x = VectorField::new(&sub, x_comps)?;
                let alpha = combined.alpha.pullback_to_slice(&fixed, &sub)?;
                Section::new(x, alpha)
            })
            .collect::<Result<Vec<_>>>()?;

        // Greedy selection of an independent subset at the base sample.
        let base = lifts
            .first()
            .map(|p| project_point(p, &fixed))
            .ok_or_else(|| CoreError::NonRegularConstraint("no slice samples".into()))?;
        let mut chosen: Vec<Section> = Vec::new();
        let mut chosen_cols: Vec<DVector<f64>> = Vec::new();
        for cand in &candidates {
            if chosen.len() == expected_rank {
                break;
            }
            let v = cand.eval(&base)?.stacked();
            let current = linalg::from_columns(2 * expected_rank, &chosen_cols);
            let d = linalg::distance_to_span(&current, &v, tol::RANK_REL);
            if d > 1e-6 * v.norm().max(1.0) {
                chosen.push(cand.clone());
                chosen_cols.push(v);
            }
        }
        if chosen.len() != expected_rank {
            return Err(CoreError::NonRegularConstraint(format!(
                "induced span has rank {} < {} at the base point",
                chosen.len(),
                expected_rank
            )));
        }
        let induced = DiracField::new(&sub, chosen, DiracKind::General)?;

        // Rank constancy across the slice.
        for p in lifts.iter() {
            let sp = project_point(p, &fixed);
            induced.frame_at(&sp).map_err(|e| {
                CoreError::NonRegularConstraint(format!("rank jump at {sp:?}: {e}"))
            })?;
        }
        Ok(induced)
    }
}

fn lift_point(slice_point: &[f64], fixed: &BTreeMap<usize, f64>, n: usize) -> Vec<f64> {
    let mut full = vec![0.0; n];
    let mut si = 0usize;
    for (i, slot) in full.iter_mut().enumerate() {
        if let Some(&v) = fixed.get(&i) {
            *slot = v;
        } else {
            *slot = slice_point[si];
            si += 1;
        }
    }
    full
}

fn project_point(full: &[f64], fixed: &BTreeMap<usize, f64>) -> Vec<f64> {
    full.iter()
        .enumerate()
        .filter(|(i, _)| !fixed.contains_key(i))
        .map(|(_, &v)| v)
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::halton::sample_points;
    use crate::pointwise::BiCorank;

    fn r2() -> Arc<Chart> {
        Chart::cartesian("xy", &["x", "y"], &[(-2.0, 2.0), (-2.0, 2.0)]).unwrap()
    }

    fn r3() -> Arc<Chart> {
        Chart::cartesian("xyz", &["x", "y", "z"], &[(-1.0, 1.0); 3]).unwrap()
    }

    pub(crate) fn t2xr2_chart() -> Arc<Chart> {
        Chart::new(
            "t2xr2",
            &["th1", "th2", "z", "w"],
            &[true, true, false, false],
            &[(0.0, 1.0), (0.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)],
        )
        .unwrap()
    }

    fn area_form(chart: &Arc<Chart>) -> KForm {
        KForm::from_terms(chart, 2, vec![(vec![0, 1], Expression::int(chart, 1))]).unwrap()
    }

    /// {(d_th1, dz), (d_th2, 0), (d_z, -d_th1), (0, dw)}
    pub(crate) fn t2xr2_field() -> DiracField {
        let c = t2xr2_chart();
        let one = Expression::int(&c, 1);
        let sections = vec![
            Section::new(
                VectorField::coordinate(&c, 0),
                KForm::from_terms(&c, 1, vec![(vec![2], one.clone())]).unwrap(),
            )
            .unwrap(),
            Section::new(VectorField::coordinate(&c, 1), KForm::zero(&c, 1)).unwrap(),
            Section::new(
                VectorField::coordinate(&c, 2),
                KForm::from_terms(&c, 1, vec![(vec![0], one.clone())]).unwrap().neg(),
            )
            .unwrap(),
            Section::new(
                VectorField::zero(&c),
                KForm::from_terms(&c, 1, vec![(vec![3], one)]).unwrap(),
            )
            .unwrap(),
        ];
        DiracField::new(&c, sections, DiracKind::General).unwrap()
    }

    #[test]
    fn presymplectic_graph_frame() {
        let c = r2();
        let samples = sample_points(&c, 32, 0);
        let d = DiracField::from_presymplectic(&area_form(&c), &samples).unwrap();
        // Frame {(d_x, dy), (d_y, -dx)}.
        assert_eq!(d.sections()[0].alpha.coefficient(&[1]).eval(&[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(d.sections()[1].alpha.coefficient(&[0]).eval(&[0.0, 0.0]).unwrap(), -1.0);
        let report = d.verify_frame(&samples).unwrap();
        assert!(report.max_gram <= 1e-15);
    }

    #[test]
    fn presymplectic_accepts_degenerating_closed_form() {
        // omega = y dx ^ dy (the a=1, b=2 coefficient example).
        let c = Chart::cartesian("xy", &["x", "y"], &[(0.1, 2.0), (0.1, 2.0)]).unwrap();
        let y = Expression::coord(&c, 1);
        let omega = KForm::from_terms(&c, 2, vec![(vec![0, 1], y)]).unwrap();
        let samples = sample_points(&c, 32, 0);
        let d = DiracField::from_presymplectic(&omega, &samples).unwrap();
        // Frame {(d_x, y dy), (d_y, -y dx)}.
        assert_eq!(d.sections()[0].alpha.coefficient(&[1]).eval(&[0.5, 0.7]).unwrap(), 0.7);
        assert_eq!(d.sections()[1].alpha.coefficient(&[0]).eval(&[0.5, 0.7]).unwrap(), -0.7);
    }

    #[test]
    fn presymplectic_rejects_non_closed() {
        let c = r3();
        let z = Expression::coord(&c, 2);
        let omega = KForm::from_terms(&c, 2, vec![(vec![0, 1], z)]).unwrap();
        let samples = sample_points(&c, 32, 0);
        match DiracField::from_presymplectic(&omega, &samples) {
            Err(CoreError::NotClosed { residual, .. }) => assert!(residual > 0.5),
            other => panic!("expected NotClosed, got {other:?}"),
        }
    }

    #[test]
    fn poisson_graph_matches_hand_frame() {
        let c = r3();
        let pi =
            BivectorField::from_terms(&c, vec![((0, 1), Expression::int(&c, 1))]).unwrap();
        let d = DiracField::from_poisson(&pi).unwrap();
        // sharp(dx) = -d_y, sharp(dy) = d_x, sharp(dz) = 0.
        let p = [0.2, -0.3, 0.5];
        let s0 = d.sections()[0].eval(&p).unwrap();
        assert_eq!(s0.x.as_slice(), &[0.0, -1.0, 0.0]);
        assert_eq!(s0.a.as_slice(), &[1.0, 0.0, 0.0]);
        let s2 = d.sections()[2].eval(&p).unwrap();
        assert_eq!(s2.x.as_slice(), &[0.0, 0.0, 0.0]);
        let frame = d.frame_at(&p).unwrap();
        assert_eq!(frame.bi_corank().unwrap(), BiCorank { r: 0, s: 1, m: 1 });
    }

    #[test]
    fn poisson_and_presymplectic_graphs_agree_on_r2() {
        // The standard bivector and the standard area form present the same
        // structure under the chosen sharp convention.
        let c = r2();
        let samples = sample_points(&c, 16, 0);
        let dp = DiracField::from_poisson(
            &BivectorField::from_terms(&c, vec![((0, 1), Expression::int(&c, 1))]).unwrap(),
        )
        .unwrap();
        let dw = DiracField::from_presymplectic(&area_form(&c), &samples).unwrap();
        for p in &samples {
            let fa = dp.frame_at(p).unwrap();
            for j in 0..2 {
                let col = dw.frame_at(p).unwrap().column(j);
                assert!(fa.membership_residual(&col) < 1e-12);
            }
        }
    }

    #[test]
    fn zero_poisson_structure() {
        let c = r3();
        let d = DiracField::from_poisson(&BivectorField::zero(&c)).unwrap();
        let frame = d.frame_at(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(frame.bi_corank().unwrap(), BiCorank { r: 0, s: 3, m: 0 });
    }

    #[test]
    fn linear_poisson_structure_closed() {
        // Pi = y d_x ^ d_y passes the closedness residual.
        let c = Chart::cartesian("xy", &["x", "y"], &[(0.1, 2.0), (0.1, 2.0)]).unwrap();
        let y = Expression::coord(&c, 1);
        let pi = BivectorField::from_terms(&c, vec![((0, 1), y)]).unwrap();
        let d = DiracField::from_poisson(&pi).unwrap();
        let samples = sample_points(&c, 32, 0);
        let r = d.courant_closedness(&samples).unwrap();
        assert!(r.max_residual <= 1e-9, "{r:?}");
    }

    #[test]
    fn canonical_structures() {
        // (p, r, s) = (1, 0, 0): standard symplectic plane.
        let chart = DiracField::canonical_chart(1, 0, 0).unwrap();
        let d = DiracField::canonical(&chart, 1, 0, 0).unwrap();
        let f = d.frame_at(&[0.1, 0.2]).unwrap();
        assert_eq!(f.bi_corank().unwrap(), BiCorank { r: 0, s: 0, m: 1 });

        // (1, 1, 1): bi-corank (1, 1) on R^4.
        let chart = DiracField::canonical_chart(1, 1, 1).unwrap();
        let d = DiracField::canonical(&chart, 1, 1, 1).unwrap();
        let samples = sample_points(&chart, 16, 0);
        for p in &samples {
            let f = d.frame_at(p).unwrap();
            assert_eq!(f.bi_corank().unwrap(), BiCorank { r: 1, s: 1, m: 1 });
        }
        let r = d.courant_closedness(&samples).unwrap();
        assert!(r.max_residual <= 1e-12);

        // (0, 1, 1): fully degenerate leaves.
        let chart = DiracField::canonical_chart(0, 1, 1).unwrap();
        let d = DiracField::canonical(&chart, 0, 1, 1).unwrap();
        let f = d.frame_at(&[0.3, -0.4]).unwrap();
        let leaf = f.leaf_two_form().unwrap();
        assert_eq!(leaf.rank(), 0);
        assert_eq!(f.bi_corank().unwrap(), BiCorank { r: 1, s: 1, m: 0 });
    }

    #[test]
    fn courant_bracket_examples() {
        let c = r2();
        let one = Expression::int(&c, 1);
        // [(d_x, dy), (d_y, -dx)] = 0.
        let s1 = Section::new(
            VectorField::coordinate(&c, 0),
            KForm::from_terms(&c, 1, vec![(vec![1], one.clone())]).unwrap(),
        )
        .unwrap();
        let s2 = Section::new(
            VectorField::coordinate(&c, 1),
            KForm::from_terms(&c, 1, vec![(vec![0], one.clone())]).unwrap().neg(),
        )
        .unwrap();
        let b = s1.courant_bracket(&s2).unwrap();
        assert!(b.x.components().iter().all(|e| e.is_zero_node()));
        assert!(b.alpha.is_empty());

        // [(d_z, 0), (d_x, z dy)] = (0, dy).
        let c3 = r3();
        let z = Expression::coord(&c3, 2);
        let s1 = Section::new(VectorField::coordinate(&c3, 2), KForm::zero(&c3, 1)).unwrap();
        let s2 = Section::new(
            VectorField::coordinate(&c3, 0),
            KForm::from_terms(&c3, 1, vec![(vec![1], z)]).unwrap(),
        )
        .unwrap();
        let b = s1.courant_bracket(&s2).unwrap();
        assert!(b.x.components().iter().all(|e| e.is_zero_node()));
        assert_eq!(b.alpha.coefficient(&[1]).eval(&[0.0; 3]).unwrap(), 1.0);

        // [(x d_y, 0), (d_x, 0)] = (-d_y, 0).
        let x = Expression::coord(&c, 0);
        let s1 = Section::new(
            VectorField::new(&c, vec![Expression::zero(&c), x]).unwrap(),
            KForm::zero(&c, 1),
        )
        .unwrap();
        let s2 = Section::new(VectorField::coordinate(&c, 0), KForm::zero(&c, 1)).unwrap();
        let b = s1.courant_bracket(&s2).unwrap();
        assert_eq!(b.x.component(1).eval(&[0.4, 0.1]).unwrap(), -1.0);
        assert!(b.alpha.is_empty());
    }

    #[test]
    fn closedness_of_graph_and_counterexample() {
        let c = r2();
        let samples = sample_points(&c, 64, 0);
        let d = DiracField::from_presymplectic(&area_form(&c), &samples).unwrap();
        assert!(d.courant_closedness(&samples).unwrap().max_residual <= 1e-12);

        // Pointwise graph of the non-closed z dx ^ dy: frame
        // {(d_x, z dy), (d_y, -z dx), (d_z, 0)}.
        let c3 = r3();
        let z = Expression::coord(&c3, 2);
        let sections = vec![
            Section::new(
                VectorField::coordinate(&c3, 0),
                KForm::from_terms(&c3, 1, vec![(vec![1], z.clone())]).unwrap(),
            )
            .unwrap(),
            Section::new(
                VectorField::coordinate(&c3, 1),
                KForm::from_terms(&c3, 1, vec![(vec![0], z.clone())]).unwrap().neg(),
            )
            .unwrap(),
            Section::new(VectorField::coordinate(&c3, 2), KForm::zero(&c3, 1)).unwrap(),
        ];
        let bad = DiracField::new(&c3, sections, DiracKind::General).unwrap();
        let samples3 = sample_points(&c3, 64, 0);
        assert!(bad.verify_frame(&samples3).unwrap().max_gram <= 1e-15);
        let r = bad.courant_closedness(&samples3).unwrap();
        assert!(r.max_residual >= 0.1, "negative control residual {r:?}");
    }

    #[test]
    fn t2xr2_is_closed_and_isotropic() {
        let d = t2xr2_field();
        let samples = sample_points(d.chart(), 64, 0);
        assert!(d.verify_frame(&samples).unwrap().max_gram <= 1e-15);
        assert!(d.courant_closedness(&samples).unwrap().max_residual <= 1e-12);
    }

    #[test]
    fn hamiltonian_pairs() {
        let c = r2();
        let samples = sample_points(&c, 32, 0);
        let d = DiracField::from_presymplectic(&area_form(&c), &samples).unwrap();
        // dH = i_X omega: X = y d_x - x d_y, H = (x^2 + y^2) / 2.
        let x = VectorField::parse(&c, &["y", "-x"]).unwrap();
        let h = Expression::parse("(x^2 + y^2) / 2", &c).unwrap();
        assert!(d.is_hamiltonian_pair(&x, &h, &samples).unwrap().ok);
        // H = x is not a Hamiltonian for that field.
        let bad = Expression::parse("x", &c).unwrap();
        assert!(!d.is_hamiltonian_pair(&x, &bad, &samples).unwrap().ok);
    }

    #[test]
    fn hamiltonian_pair_of_hyperbolic_example() {
        // omega = y dx ^ dy, X = x d_x - (y/2) d_y, H = x y^2 / 2.
        let c = Chart::cartesian("xy", &["x", "y"], &[(0.1, 2.0), (0.1, 2.0)]).unwrap();
        let y = Expression::coord(&c, 1);
        let omega = KForm::from_terms(&c, 2, vec![(vec![0, 1], y)]).unwrap();
        let samples = sample_points(&c, 32, 0);
        let d = DiracField::from_presymplectic(&omega, &samples).unwrap();
        let x = VectorField::parse(&c, &["x", "-y/2"]).unwrap();
        let h = Expression::parse("x * y^2 / 2", &c).unwrap();
        let v = d.is_hamiltonian_pair(&x, &h, &samples).unwrap();
        assert!(v.ok, "residual {}", v.max_residual);
    }

    #[test]
    fn isotropic_field_is_hamiltonian_for_zero() {
        let d = t2xr2_field();
        let samples = sample_points(d.chart(), 32, 0);
        let x = VectorField::coordinate(d.chart(), 1); // d_th2 in the kernel
        let h = Expression::zero(d.chart());
        assert!(d.is_hamiltonian_pair(&x, &h, &samples).unwrap().ok);
    }

    #[test]
    fn casimirs() {
        let c3 = r3();
        let pi =
            BivectorField::from_terms(&c3, vec![((0, 1), Expression::int(&c3, 1))]).unwrap();
        let d = DiracField::from_poisson(&pi).unwrap();
        let samples = sample_points(&c3, 32, 0);
        let z = Expression::coord(&c3, 2);
        assert!(d.is_casimir(&z, &samples).unwrap().ok);

        let d2 = t2xr2_field();
        let samples2 = sample_points(d2.chart(), 32, 0);
        let w = Expression::coord(d2.chart(), 3);
        assert!(d2.is_casimir(&w, &samples2).unwrap().ok);

        let c = r2();
        let samples = sample_points(&c, 32, 0);
        let dsym = DiracField::from_presymplectic(&area_form(&c), &samples).unwrap();
        let x = Expression::coord(&c, 0);
        assert!(!dsym.is_casimir(&x, &samples).unwrap().ok);
    }

    #[test]
    fn admissibility() {
        let d = t2xr2_field();
        let samples = sample_points(d.chart(), 32, 0);
        // Kernel is d_th2: th2 itself is not admissible, z is.
        let th2 = Expression::coord(d.chart(), 1);
        assert!(!d.is_admissible_hamiltonian(&th2, &samples).unwrap().ok);
        let z = Expression::coord(d.chart(), 2);
        assert!(d.is_admissible_hamiltonian(&z, &samples).unwrap().ok);

        // On a Poisson graph every function is admissible (r = 0).
        let c3 = r3();
        let pi =
            BivectorField::from_terms(&c3, vec![((0, 1), Expression::int(&c3, 1))]).unwrap();
        let dp = DiracField::from_poisson(&pi).unwrap();
        let samples3 = sample_points(&c3, 32, 0);
        let any = Expression::parse("x * y + z^3", &c3).unwrap();
        assert!(dp.is_admissible_hamiltonian(&any, &samples3).unwrap().ok);
    }

    #[test]
    fn poisson_bracket_sign_under_the_graph_convention() {
        // X_x solves dx = i_X omega for omega = dx ^ dy: X_x = -d_y, so
        // {x, y} = X_x(y) = -1.
        let c = r2();
        let samples = sample_points(&c, 32, 0);
        let d = DiracField::from_presymplectic(&area_form(&c), &samples).unwrap();
        let x = Expression::coord(&c, 0);
        let y = Expression::coord(&c, 1);
        let x_x = VectorField::parse(&c, &["0", "-1"]).unwrap();
        let b = d.poisson_bracket(&x, &y, &x_x, &samples).unwrap();
        assert_eq!(b.eval(&[0.4, 0.7]).unwrap(), -1.0);

        // {H, H} = 0.
        let h = Expression::parse("(x^2 + y^2) / 2", &c).unwrap();
        let x_h = VectorField::parse(&c, &["y", "-x"]).unwrap();
        let hh = d.poisson_bracket(&h, &h, &x_h, &samples).unwrap();
        assert!(hh.is_zero());
    }

    #[test]
    fn poisson_bracket_requires_verified_pair() {
        let c = r2();
        let samples = sample_points(&c, 32, 0);
        let d = DiracField::from_presymplectic(&area_form(&c), &samples).unwrap();
        let h = Expression::coord(&c, 0);
        let f = Expression::coord(&c, 1);
        let wrong = VectorField::parse(&c, &["1", "0"]).unwrap();
        assert!(matches!(
            d.poisson_bracket(&h, &f, &wrong, &samples),
            Err(CoreError::NotHamiltonian { .. })
        ));
    }

    #[test]
    fn hamiltonian_verdict_stable_under_casimir_and_isotropic_shift() {
        let d = t2xr2_field();
        let c = d.chart().clone();
        let samples = sample_points(&c, 32, 0);
        let x = VectorField::coordinate(&c, 0); // d_th1
        let h = Expression::coord(&c, 2); // z
        assert!(d.is_hamiltonian_pair(&x, &h, &samples).unwrap().ok);
        // X + (isotropic d_th2), H + (Casimir w): still a Hamiltonian pair.
        let x2 = x.add(&VectorField::coordinate(&c, 1)).unwrap();
        let h2 = h.add(&Expression::coord(&c, 3));
        assert!(d.is_hamiltonian_pair(&x2, &h2, &samples).unwrap().ok);
    }

    #[test]
    fn poisson_round_trip() {
        let c = r3();
        let y = Expression::coord(&c, 1);
        let pi = BivectorField::from_terms(
            &c,
            vec![((0, 1), y), ((1, 2), Expression::parse("x^2", &c).unwrap())],
        )
        .unwrap();
        let d = DiracField::from_poisson(&pi).unwrap();
        let back = d.extract_poisson().unwrap();
        let samples = sample_points(&c, 16, 0);
        for p in &samples {
            let a = pi.eval_matrix(p).unwrap();
            let b = back.eval_matrix(p).unwrap();
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn leaf_form_of_presymplectic_graph_reproduces_omega() {
        let c = r2();
        let samples = sample_points(&c, 16, 0);
        let omega = area_form(&c);
        let d = DiracField::from_presymplectic(&omega, &samples).unwrap();
        for p in &samples {
            let leaf = d.frame_at(p).unwrap().leaf_two_form().unwrap();
            let m = leaf.coordinate_matrix();
            let expected = omega.eval_matrix(p).unwrap();
            assert!((m - expected).norm() < 1e-10);
        }
    }

    #[test]
    fn induced_structure_on_z_slice_of_poisson_r3() {
        let c = r3();
        let pi =
            BivectorField::from_terms(&c, vec![((0, 1), Expression::int(&c, 1))]).unwrap();
        let d = DiracField::from_poisson(&pi).unwrap();
        let induced = d.induced_on_level(&[("z".into(), 0.5)], 16, 0).unwrap();
        assert_eq!(induced.chart().dim(), 2);
        let f = induced.frame_at(&[0.2, -0.6]).unwrap();
        assert_eq!(f.bi_corank().unwrap(), BiCorank { r: 0, s: 0, m: 1 });
        let leaf = f.leaf_two_form().unwrap().coordinate_matrix();
        assert!((leaf[(0, 1)] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn induced_structure_on_w_slice_of_t2xr2() {
        let d = t2xr2_field();
        let induced = d.induced_on_level(&[("w".into(), 0.0)], 16, 0).unwrap();
        assert_eq!(induced.chart().dim(), 3);
        let f = induced.frame_at(&[0.1, 0.7, 0.3]).unwrap();
        assert_eq!(f.bi_corank().unwrap(), BiCorank { r: 1, s: 0, m: 1 });
        // omega = d_th1 ^ dz on the slice.
        let leaf = f.leaf_two_form().unwrap().coordinate_matrix();
        assert!((leaf[(0, 2)] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn induced_structure_on_x_slice_of_symplectic_r2() {
        let c = r2();
        let samples = sample_points(&c, 16, 0);
        let d = DiracField::from_presymplectic(&area_form(&c), &samples).unwrap();
        let induced = d.induced_on_level(&[("x".into(), 0.0)], 16, 0).unwrap();
        assert_eq!(induced.chart().dim(), 1);
        let f = induced.frame_at(&[0.4]).unwrap();
        let bc = f.bi_corank().unwrap();
        assert_eq!((bc.r, bc.s), (1, 0));
    }
}
