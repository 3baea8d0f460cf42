//! Tensor calculus over a chart: vector fields, differential forms, bivector
//! fields and general tensor fields, with the Lie bracket, exterior
//! derivative, interior product, Lie derivative, the vector-with-bivector
//! Schouten bracket and pullback to coordinate slices.
//!
//! Forms are stored sparsely on strictly increasing index tuples; charts stay
//! small (n <= 8) but most forms have few terms.

use crate::chart::{same_chart, Chart};
use crate::error::{CoreError, Result};
use crate::expr::Expression;
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Sort an index tuple, returning the permutation sign; `None` when an index
/// repeats (the term vanishes by antisymmetry).
fn sort_indices(mut idx: Vec<usize>) -> Option<(Vec<usize>, f64)> {
    let mut sign = 1.0;
    // Insertion sort with sign tracking; tuples are tiny.
    for i in 1..idx.len() {
        let mut j = i;
        while j > 0 && idx[j - 1] > idx[j] {
            idx.swap(j - 1, j);
            sign = -sign;
            j -= 1;
        }
    }
    for w in idx.windows(2) {
        if w[0] == w[1] {
            return None;
        }
    }
    Some((idx, sign))
}

// ---------------------------------------------------------------------------
// Vector fields
// ---------------------------------------------------------------------------

/// A smooth vector field: one expression per coordinate direction.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    chart: Arc<Chart>,
    components: Vec<Expression>,
}

impl VectorField {
    pub fn new(chart: &Arc<Chart>, components: Vec<Expression>) -> Result<VectorField> {
        if components.len() != chart.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: chart.dim(),
                got: components.len(),
            });
        }
        for c in &components {
            same_chart(chart, c.chart())?;
        }
        Ok(VectorField { chart: chart.clone(), components })
    }

    pub fn parse(chart: &Arc<Chart>, sources: &[&str]) -> Result<VectorField> {
        let comps = sources
            .iter()
            .map(|s| Expression::parse(s, chart))
            .collect::<Result<Vec<_>>>()?;
        VectorField::new(chart, comps)
    }

    pub fn zero(chart: &Arc<Chart>) -> VectorField {
        let comps = (0..chart.dim()).map(|_| Expression::zero(chart)).collect();
        VectorField { chart: chart.clone(), components: comps }
    }

    /// The coordinate field for one direction.
    pub fn coordinate(chart: &Arc<Chart>, index: usize) -> VectorField {
        let comps = (0..chart.dim())
            .map(|i| Expression::int(chart, i64::from(i == index)))
            .collect();
        VectorField { chart: chart.clone(), components: comps }
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn component(&self, i: usize) -> &Expression {
        &self.components[i]
    }

    pub fn components(&self) -> &[Expression] {
        &self.components
    }

    pub fn eval(&self, point: &[f64]) -> Result<DVector<f64>> {
        let vals = self
            .components
            .iter()
            .map(|c| c.eval(point))
            .collect::<Result<Vec<_>>>()?;
        Ok(DVector::from_vec(vals))
    }

    /// Apply to a scalar: `X(f) = sum_i X^i d_i f`.
    pub fn apply(&self, f: &Expression) -> Result<Expression> {
        same_chart(&self.chart, f.chart())?;
        let mut acc = Expression::zero(&self.chart);
        for (i, xi) in self.components.iter().enumerate() {
            acc = acc.add(&xi.mul(&f.diff_index(i)));
        }
        Ok(acc.simplify())
    }

    pub fn add(&self, other: &VectorField) -> Result<VectorField> {
        same_chart(&self.chart, &other.chart)?;
        let comps = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.add(b).simplify())
            .collect();
        VectorField::new(&self.chart, comps)
    }

    pub fn scale(&self, c: f64) -> VectorField {
        let comps = self.components.iter().map(|e| e.scale(c).simplify()).collect();
        VectorField { chart: self.chart.clone(), components: comps }
    }

    pub fn scale_expr(&self, c: &Expression) -> VectorField {
        let comps = self.components.iter().map(|e| e.mul(c).simplify()).collect();
        VectorField { chart: self.chart.clone(), components: comps }
    }

    /// `[X, Y]^k = X(Y^k) - Y(X^k)`.
    pub fn lie_bracket(&self, other: &VectorField) -> Result<VectorField> {
        same_chart(&self.chart, &other.chart)?;
        let comps = (0..self.chart.dim())
            .map(|k| {
                let a = self.apply(&other.components[k])?;
                let b = other.apply(&self.components[k])?;
                Ok(a.sub(&b).simplify())
            })
            .collect::<Result<Vec<_>>>()?;
        VectorField::new(&self.chart, comps)
    }

    pub fn as_tensor(&self) -> TensorField {
        let mut comps = BTreeMap::new();
        for (i, e) in self.components.iter().enumerate() {
            if !e.is_zero_node() {
                comps.insert((vec![i], vec![]), e.clone());
            }
        }
        TensorField { chart: self.chart.clone(), contra: 1, cova: 0, comps }
    }

    /// Constant linear combination `sum_i c_i fields_i`.
    pub fn linear_combination(
        chart: &Arc<Chart>,
        coeffs: &[f64],
        fields: &[VectorField],
    ) -> Result<VectorField> {
        let mut acc = VectorField::zero(chart);
        for (c, f) in coeffs.iter().zip(fields) {
            acc = acc.add(&f.scale(*c))?;
        }
        Ok(acc)
    }
}

// ---------------------------------------------------------------------------
// Differential forms
// ---------------------------------------------------------------------------

/// A differential k-form with sparse antisymmetric coefficients on strictly
/// increasing index tuples.
#[derive(Debug, Clone, PartialEq)]
pub struct KForm {
    chart: Arc<Chart>,
    degree: usize,
    terms: BTreeMap<Vec<usize>, Expression>,
}

impl KForm {
    pub fn zero(chart: &Arc<Chart>, degree: usize) -> KForm {
        KForm { chart: chart.clone(), degree, terms: BTreeMap::new() }
    }

    /// Build from (indices, coefficient) pairs; indices are sorted and signs
    /// folded into the coefficients, repeated indices drop.
    pub fn from_terms(
        chart: &Arc<Chart>,
        degree: usize,
        terms: Vec<(Vec<usize>, Expression)>,
    ) -> Result<KForm> {
        if degree > chart.dim() {
            return Err(CoreError::Degree(format!(
                "degree {degree} exceeds chart dimension {}",
                chart.dim()
            )));
        }
        let mut form = KForm::zero(chart, degree);
        for (idx, coeff) in terms {
            if idx.len() != degree {
                return Err(CoreError::Degree(format!(
                    "index tuple {idx:?} does not match degree {degree}"
                )));
            }
            same_chart(chart, coeff.chart())?;
            form.accumulate(idx, coeff);
        }
        form.prune();
        Ok(form)
    }

    /// The differential of a scalar as a 1-form.
    pub fn differential(f: &Expression) -> KForm {
        let chart = f.chart().clone();
        let mut terms = BTreeMap::new();
        for i in 0..chart.dim() {
            let d = f.diff_index(i);
            if !d.is_zero_node() {
                terms.insert(vec![i], d);
            }
        }
        KForm { chart, degree: 1, terms }
    }

    fn accumulate(&mut self, idx: Vec<usize>, coeff: Expression) {
        if let Some((sorted, sign)) = sort_indices(idx) {
            let signed = if sign > 0.0 { coeff } else { coeff.neg() };
            match self.terms.remove(&sorted) {
                None => {
                    self.terms.insert(sorted, signed);
                }
                Some(existing) => {
                    self.terms.insert(sorted, existing.add(&signed));
                }
            }
        }
    }

    fn prune(&mut self) {
        let simplified: BTreeMap<Vec<usize>, Expression> = self
            .terms
            .iter()
            .map(|(k, v)| (k.clone(), v.simplify()))
            .filter(|(_, v)| !v.is_zero_node())
            .collect();
        self.terms = simplified;
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn terms(&self) -> &BTreeMap<Vec<usize>, Expression> {
        &self.terms
    }

    pub fn coefficient(&self, idx: &[usize]) -> Expression {
        self.terms
            .get(idx)
            .cloned()
            .unwrap_or_else(|| Expression::zero(&self.chart))
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, other: &KForm) -> Result<KForm> {
        same_chart(&self.chart, &other.chart)?;
        if self.degree != other.degree {
            return Err(CoreError::Degree("cannot add forms of different degree".into()));
        }
        let mut out = self.clone();
        for (idx, coeff) in &other.terms {
            out.accumulate(idx.clone(), coeff.clone());
        }
        out.prune();
        Ok(out)
    }

    pub fn neg(&self) -> KForm {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> KForm {
        let terms = self
            .terms
            .iter()
            .map(|(k, v)| (k.clone(), v.scale(c).simplify()))
            .filter(|(_, v)| !v.is_zero_node())
            .collect();
        KForm { chart: self.chart.clone(), degree: self.degree, terms }
    }

    pub fn scale_expr(&self, c: &Expression) -> KForm {
        let terms = self
            .terms
            .iter()
            .map(|(k, v)| (k.clone(), v.mul(c).simplify()))
            .filter(|(_, v)| !v.is_zero_node())
            .collect();
        KForm { chart: self.chart.clone(), degree: self.degree, terms }
    }

    pub fn wedge(&self, other: &KForm) -> Result<KForm> {
        same_chart(&self.chart, &other.chart)?;
        let degree = self.degree + other.degree;
        if degree > self.chart.dim() {
            return Ok(KForm::zero(&self.chart, degree.min(self.chart.dim())));
        }
        let mut out = KForm::zero(&self.chart, degree);
        for (ia, ca) in &self.terms {
            for (ib, cb) in &other.terms {
                let mut idx = ia.clone();
                idx.extend_from_slice(ib);
                out.accumulate(idx, ca.mul(cb));
            }
        }
        out.prune();
        Ok(out)
    }

    /// Exterior derivative: `d(f dx_I) = sum_i d_i f dx_i ^ dx_I`.
    pub fn exterior_d(&self) -> KForm {
        let mut out = KForm::zero(&self.chart, self.degree + 1);
        for (idx, coeff) in &self.terms {
            for i in 0..self.chart.dim() {
                let d = coeff.diff_index(i);
                if d.is_zero_node() {
                    continue;
                }
                let mut full = Vec::with_capacity(idx.len() + 1);
                full.push(i);
                full.extend_from_slice(idx);
                out.accumulate(full, d);
            }
        }
        out.prune();
        out
    }

    /// Interior product in the first slot: `(i_X w)(v...) = w(X, v...)`.
    pub fn interior(&self, x: &VectorField) -> Result<KForm> {
        same_chart(&self.chart, x.chart())?;
        if self.degree == 0 {
            return Err(CoreError::Degree("interior product needs degree >= 1".into()));
        }
        let mut out = KForm::zero(&self.chart, self.degree - 1);
        for (idx, coeff) in &self.terms {
            // w(X, e_rest) expands over the slot X occupies.
            for (slot, &i) in idx.iter().enumerate() {
                let rest: Vec<usize> = idx
                    .iter()
                    .enumerate()
                    .filter(|(s, _)| *s != slot)
                    .map(|(_, &v)| v)
                    .collect();
                let sign = if slot % 2 == 0 { 1.0 } else { -1.0 };
                let term = coeff.mul(x.component(i)).scale(sign);
                out.accumulate(rest, term);
            }
        }
        out.prune();
        Ok(out)
    }

    /// Cartan formula: `L_X = i_X d + d i_X`.
    pub fn lie_derivative(&self, x: &VectorField) -> Result<KForm> {
        let a = self.exterior_d().interior(x)?;
        if self.degree == 0 {
            return Ok(a);
        }
        let b = self.interior(x)?.exterior_d();
        a.add(&b)
    }

    /// Pull back to the coordinate slice that fixes the given coordinates:
    /// substitutes the values and drops differentials of fixed coordinates.
    pub fn pullback_to_slice(
        &self,
        fixed: &BTreeMap<usize, f64>,
        sub: &Arc<Chart>,
    ) -> Result<KForm> {
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
        let mut out = KForm::zero(sub, self.degree.min(sub.dim()));
        if self.degree > sub.dim() {
            return Ok(out);
        }
        'terms: for (idx, coeff) in &self.terms {
            let mut new_idx = Vec::with_capacity(idx.len());
            for &i in idx {
                match remap[i] {
                    Some(j) => new_idx.push(j),
                    None => continue 'terms,
                }
            }
            out.accumulate(new_idx, coeff.restrict(fixed, sub));
        }
        out.prune();
        Ok(out)
    }

    /// Evaluate a 1-form to a covector.
    pub fn eval_covector(&self, point: &[f64]) -> Result<DVector<f64>> {
        if self.degree != 1 {
            return Err(CoreError::Degree("eval_covector needs degree 1".into()));
        }
        let mut v = DVector::zeros(self.chart.dim());
        for (idx, coeff) in &self.terms {
            v[idx[0]] = coeff.eval(point)?;
        }
        Ok(v)
    }

    /// Evaluate a 2-form to an antisymmetric matrix.
    pub fn eval_matrix(&self, point: &[f64]) -> Result<DMatrix<f64>> {
        if self.degree != 2 {
            return Err(CoreError::Degree("eval_matrix needs degree 2".into()));
        }
        let n = self.chart.dim();
        let mut m = DMatrix::zeros(n, n);
        for (idx, coeff) in &self.terms {
            let v = coeff.eval(point)?;
            m[(idx[0], idx[1])] = v;
            m[(idx[1], idx[0])] = -v;
        }
        Ok(m)
    }

    /// Worst |coefficient| of the form over a sample set (all-zero check).
    pub fn max_abs_on(&self, samples: &[Vec<f64>]) -> Result<f64> {
        let mut max: f64 = 0.0;
        for p in samples {
            for coeff in self.terms.values() {
                max = max.max(coeff.eval(p)?.abs());
            }
        }
        Ok(max)
    }

    pub fn as_tensor(&self) -> TensorField {
        let mut comps = BTreeMap::new();
        for (idx, coeff) in &self.terms {
            // Antisymmetric extension over all permutations of the tuple.
            for (perm, sign) in permutations_with_sign(idx) {
                let e = if sign > 0.0 { coeff.clone() } else { coeff.neg() };
                comps.insert((vec![], perm), e.simplify());
            }
        }
        TensorField {
            chart: self.chart.clone(),
            contra: 0,
            cova: self.degree,
            comps,
        }
    }
}

fn permutations_with_sign(idx: &[usize]) -> Vec<(Vec<usize>, f64)> {
    fn permute_rec(arr: &mut Vec<usize>, start: usize, sign: f64, out: &mut Vec<(Vec<usize>, f64)>) {
        if start == arr.len() {
            out.push((arr.clone(), sign));
            return;
        }
        for i in start..arr.len() {
            let flip = if i == start { 1.0 } else { -1.0 };
            arr.swap(start, i);
            permute_rec(arr, start + 1, sign * flip, out);
            arr.swap(start, i);
        }
    }
    let mut out = Vec::new();
    let mut arr: Vec<usize> = idx.to_vec();
    if arr.is_empty() {
        return vec![(vec![], 1.0)];
    }
    permute_rec(&mut arr, 0, 1.0, &mut out);
    out
}

// ---------------------------------------------------------------------------
// Bivector fields
// ---------------------------------------------------------------------------

/// A bivector field with sparse coefficients on increasing index pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct BivectorField {
    chart: Arc<Chart>,
    terms: BTreeMap<(usize, usize), Expression>,
}

impl BivectorField {
    pub fn zero(chart: &Arc<Chart>) -> BivectorField {
        BivectorField { chart: chart.clone(), terms: BTreeMap::new() }
    }

    pub fn from_terms(
        chart: &Arc<Chart>,
        terms: Vec<((usize, usize), Expression)>,
    ) -> Result<BivectorField> {
        let mut out = BivectorField::zero(chart);
        for ((i, j), coeff) in terms {
            same_chart(chart, coeff.chart())?;
            out.accumulate(i, j, coeff);
        }
        out.prune();
        Ok(out)
    }

    fn accumulate(&mut self, i: usize, j: usize, coeff: Expression) {
        use std::cmp::Ordering;
        let (key, signed) = match i.cmp(&j) {
            Ordering::Equal => return,
            Ordering::Less => ((i, j), coeff),
            Ordering::Greater => ((j, i), coeff.neg()),
        };
        match self.terms.remove(&key) {
            None => {
                self.terms.insert(key, signed);
            }
            Some(e) => {
                self.terms.insert(key, e.add(&signed));
            }
        }
    }

    fn prune(&mut self) {
        let simplified: BTreeMap<(usize, usize), Expression> = self
            .terms
            .iter()
            .map(|(k, v)| (*k, v.simplify()))
            .filter(|(_, v)| !v.is_zero_node())
            .collect();
        self.terms = simplified;
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn terms(&self) -> &BTreeMap<(usize, usize), Expression> {
        &self.terms
    }

    /// Full component `Pi^{ij}` (antisymmetric).
    pub fn component(&self, i: usize, j: usize) -> Expression {
        use std::cmp::Ordering;
        match i.cmp(&j) {
            Ordering::Equal => Expression::zero(&self.chart),
            Ordering::Less => self
                .terms
                .get(&(i, j))
                .cloned()
                .unwrap_or_else(|| Expression::zero(&self.chart)),
            Ordering::Greater => self
                .terms
                .get(&(j, i))
                .map(|e| e.neg().simplify())
                .unwrap_or_else(|| Expression::zero(&self.chart)),
        }
    }

    pub fn eval_matrix(&self, point: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.chart.dim();
        let mut m = DMatrix::zeros(n, n);
        for (&(i, j), coeff) in &self.terms {
            let v = coeff.eval(point)?;
            m[(i, j)] = v;
            m[(j, i)] = -v;
        }
        Ok(m)
    }

    /// Schouten bracket with a vector field, `[X, Pi] = L_X Pi`:
    /// `(L_X Pi)^{ij} = X(Pi^{ij}) - Pi^{mj} d_m X^i - Pi^{im} d_m X^j`.
    pub fn schouten_with(&self, x: &VectorField) -> Result<BivectorField> {
        same_chart(&self.chart, x.chart())?;
        let n = self.chart.dim();
        let mut out = BivectorField::zero(&self.chart);
        for i in 0..n {
            for j in (i + 1)..n {
                let mut term = x.apply(&self.component(i, j))?;
                for m in 0..n {
                    let a = self.component(m, j).mul(&x.component(i).diff_index(m));
                    let b = self.component(i, m).mul(&x.component(j).diff_index(m));
                    term = term.sub(&a).sub(&b);
                }
                out.accumulate(i, j, term.simplify());
            }
        }
        out.prune();
        Ok(out)
    }

    pub fn as_tensor(&self) -> TensorField {
        let mut comps = BTreeMap::new();
        for (&(i, j), coeff) in &self.terms {
            comps.insert((vec![i, j], vec![]), coeff.clone());
            comps.insert((vec![j, i], vec![]), coeff.neg().simplify());
        }
        TensorField { chart: self.chart.clone(), contra: 2, cova: 0, comps }
    }

    pub fn max_abs_on(&self, samples: &[Vec<f64>]) -> Result<f64> {
        let mut max: f64 = 0.0;
        for p in samples {
            for coeff in self.terms.values() {
                max = max.max(coeff.eval(p)?.abs());
            }
        }
        Ok(max)
    }
}

// ---------------------------------------------------------------------------
// General tensor fields
// ---------------------------------------------------------------------------

/// Sparse tensor components: (upper tuple, lower tuple) paired with the
/// coefficient expression.
pub type TensorComponents = Vec<((Vec<usize>, Vec<usize>), Expression)>;

/// A tensor field of contravariant order `contra` and covariant order `cova`,
/// stored as a sparse map from (upper tuple, lower tuple) to coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    chart: Arc<Chart>,
    contra: usize,
    cova: usize,
    comps: BTreeMap<(Vec<usize>, Vec<usize>), Expression>,
}

impl TensorField {
    pub fn new(
        chart: &Arc<Chart>,
        contra: usize,
        cova: usize,
        comps: TensorComponents,
    ) -> Result<TensorField> {
        let mut map = BTreeMap::new();
        for ((up, down), coeff) in comps {
            if up.len() != contra || down.len() != cova {
                return Err(CoreError::Degree("tensor index orders mismatch".into()));
            }
            if up.iter().chain(&down).any(|&i| i >= chart.dim()) {
                return Err(CoreError::Degree("tensor index out of range".into()));
            }
            same_chart(chart, coeff.chart())?;
            let e = coeff.simplify();
            if !e.is_zero_node() {
                map.insert((up, down), e);
            }
        }
        Ok(TensorField { chart: chart.clone(), contra, cova, comps: map })
    }

    pub fn scalar(f: &Expression) -> TensorField {
        let mut comps = BTreeMap::new();
        if !f.is_zero_node() {
            comps.insert((vec![], vec![]), f.clone());
        }
        TensorField { chart: f.chart().clone(), contra: 0, cova: 0, comps }
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn orders(&self) -> (usize, usize) {
        (self.contra, self.cova)
    }

    pub fn components(&self) -> &BTreeMap<(Vec<usize>, Vec<usize>), Expression> {
        &self.comps
    }

    pub fn component(&self, up: &[usize], down: &[usize]) -> Expression {
        self.comps
            .get(&(up.to_vec(), down.to_vec()))
            .cloned()
            .unwrap_or_else(|| Expression::zero(&self.chart))
    }

    /// Leibniz expansion of the Lie derivative:
    /// `(L_X T)^I_J = X(T^I_J) - sum_{a,m} (d_m X^{i_a}) T^{..m..}_J
    ///              + sum_{b,m} (d_{j_b} X^m) T^I_{..m..}`.
    ///
    /// Stored components scatter: a component with upper index `m` in slot
    /// `a` feeds every target upper index `i` with weight `-d_m X^i`, and a
    /// component with lower index `m` in slot `b` feeds every target lower
    /// index `j` with weight `+d_j X^m`.
    pub fn lie_derivative(&self, x: &VectorField) -> Result<TensorField> {
        same_chart(&self.chart, x.chart())?;
        let n = self.chart.dim();
        let mut out: BTreeMap<(Vec<usize>, Vec<usize>), Expression> = BTreeMap::new();
        fn entry(
            map: &mut BTreeMap<(Vec<usize>, Vec<usize>), Expression>,
            key: (Vec<usize>, Vec<usize>),
            e: Expression,
        ) {
            if e.is_zero_node() {
                return;
            }
            match map.remove(&key) {
                None => {
                    map.insert(key, e);
                }
                Some(prev) => {
                    map.insert(key, prev.add(&e));
                }
            }
        }
        for ((up, down), coeff) in &self.comps {
            entry(&mut out, (up.clone(), down.clone()), x.apply(coeff)?);
            for (a, &m) in up.iter().enumerate() {
                for i in 0..n {
                    let d = x.component(i).diff_index(m);
                    if d.is_zero_node() {
                        continue;
                    }
                    let mut new_up = up.clone();
                    new_up[a] = i;
                    entry(&mut out, (new_up, down.clone()), coeff.mul(&d).neg());
                }
            }
            for (b, &m) in down.iter().enumerate() {
                for j in 0..n {
                    let d = x.component(m).diff_index(j);
                    if d.is_zero_node() {
                        continue;
                    }
                    let mut new_down = down.clone();
                    new_down[b] = j;
                    entry(&mut out, (up.clone(), new_down), coeff.mul(&d));
                }
            }
        }
        let comps = out
            .into_iter()
            .map(|(k, v)| (k, v.simplify()))
            .filter(|(_, v)| !v.is_zero_node())
            .collect();
        Ok(TensorField { chart: self.chart.clone(), contra: self.contra, cova: self.cova, comps })
    }

    /// Numeric component array at a point (row-major over `n^(contra+cova)`).
    pub fn eval_dense(&self, point: &[f64]) -> Result<TensorValues> {
        let n = self.chart.dim();
        let order = self.contra + self.cova;
        let mut data = vec![0.0; n.pow(order as u32)];
        for ((up, down), coeff) in &self.comps {
            let mut flat = 0usize;
            for &i in up.iter().chain(down.iter()) {
                flat = flat * n + i;
            }
            data[flat] = coeff.eval(point)?;
        }
        Ok(TensorValues { n, contra: self.contra, cova: self.cova, data })
    }

    pub fn max_abs_on(&self, samples: &[Vec<f64>]) -> Result<f64> {
        let mut max: f64 = 0.0;
        for p in samples {
            for coeff in self.comps.values() {
                max = max.max(coeff.eval(p)?.abs());
            }
        }
        Ok(max)
    }
}

/// Dense numeric tensor components at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorValues {
    pub n: usize,
    pub contra: usize,
    pub cova: usize,
    pub data: Vec<f64>,
}

impl TensorValues {
    pub fn zeros(n: usize, contra: usize, cova: usize) -> TensorValues {
        TensorValues { n, contra, cova, data: vec![0.0; n.pow((contra + cova) as u32)] }
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let f = self.flat(idx);
        self.data[f] = v;
    }

    fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn add_scaled(&mut self, other: &TensorValues, c: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn max_abs_diff(&self, other: &TensorValues) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Pull back through a linear map: contravariant slots contract with
    /// `m_inv`, covariant slots with `m` (`m = dPhi`, tensor taken at the
    /// image point).
    pub fn pullback(&self, m: &DMatrix<f64>, m_inv: &DMatrix<f64>) -> TensorValues {
        let n = self.n;
        let order = self.contra + self.cova;
        let mut out = TensorValues::zeros(n, self.contra, self.cova);
        let mut idx = vec![0usize; order];
        let mut src = vec![0usize; order];
        loop {
            // out[idx] = sum over src of prod factors * self[src]
            let mut total = 0.0;
            loop {
                let mut factor = 1.0;
                for a in 0..self.contra {
                    factor *= m_inv[(idx[a], src[a])];
                    if factor == 0.0 {
                        break;
                    }
                }
                if factor != 0.0 {
                    for b in self.contra..order {
                        factor *= m[(src[b], idx[b])];
                        if factor == 0.0 {
                            break;
                        }
                    }
                }
                if factor != 0.0 {
                    total += factor * self.get(&src);
                }
                if !increment(&mut src, n) {
                    break;
                }
            }
            out.set(&idx, total);
            src.iter_mut().for_each(|v| *v = 0);
            if !increment(&mut idx, n) {
                break;
            }
        }
        out
    }
}

fn increment(idx: &mut [usize], n: usize) -> bool {
    for v in idx.iter_mut().rev() {
        *v += 1;
        if *v < n {
            return true;
        }
        *v = 0;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::Chart;

    fn xy() -> Arc<Chart> {
        Chart::cartesian("xy", &["x", "y"], &[(-2.0, 2.0), (-2.0, 2.0)]).unwrap()
    }

    fn xyz() -> Arc<Chart> {
        Chart::cartesian("xyz", &["x", "y", "z"], &[(-2.0, 2.0); 3]).unwrap()
    }

    fn vf(chart: &Arc<Chart>, comps: &[&str]) -> VectorField {
        VectorField::parse(chart, comps).unwrap()
    }

    #[test]
    fn lie_bracket_of_coordinate_fields_vanishes() {
        let c = xy();
        let b = vf(&c, &["1", "0"]).lie_bracket(&vf(&c, &["0", "1"])).unwrap();
        assert!(b.components().iter().all(|e| e.is_zero_node()));
    }

    #[test]
    fn lie_bracket_x_dy_with_dx() {
        let c = xy();
        // [x d_y, d_x] = -d_y
        let b = vf(&c, &["0", "x"]).lie_bracket(&vf(&c, &["1", "0"])).unwrap();
        assert!(b.component(0).is_zero_node());
        assert_eq!(b.component(1).eval(&[0.3, 0.7]).unwrap(), -1.0);
    }

    #[test]
    fn lie_bracket_antisymmetry_on_self() {
        let c = xy();
        let x = vf(&c, &["x*y", "sin(x)"]);
        let b = x.lie_bracket(&x).unwrap();
        assert!(b.components().iter().all(|e| e.is_zero_node()));
    }

    #[test]
    fn jacobi_identity_sampled() {
        let c = xy();
        let x = vf(&c, &["y", "x^2"]);
        let y = vf(&c, &["x*y", "1"]);
        let z = vf(&c, &["sin(x)", "y"]);
        let j1 = x.lie_bracket(&y.lie_bracket(&z).unwrap()).unwrap();
        let j2 = y.lie_bracket(&z.lie_bracket(&x).unwrap()).unwrap();
        let j3 = z.lie_bracket(&x.lie_bracket(&y).unwrap()).unwrap();
        for &(px, py) in &[(0.3, 0.8), (-1.1, 0.4), (0.9, -0.5)] {
            let total = j1.eval(&[px, py]).unwrap()
                + j2.eval(&[px, py]).unwrap()
                + j3.eval(&[px, py]).unwrap();
            assert!(total.norm() < 1e-9, "jacobi residual {}", total.norm());
        }
    }

    #[test]
    fn exterior_d_of_x_dy() {
        let c = xy();
        let x = Expression::coord(&c, 0);
        let form = KForm::from_terms(&c, 1, vec![(vec![1], x)]).unwrap();
        let d = form.exterior_d();
        assert_eq!(d.degree(), 2);
        assert_eq!(d.coefficient(&[0, 1]).eval(&[0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn exterior_d_of_z_dx_dy() {
        let c = xyz();
        let z = Expression::coord(&c, 2);
        let form = KForm::from_terms(&c, 2, vec![(vec![0, 1], z)]).unwrap();
        let d = form.exterior_d();
        // dz ^ dx ^ dy = + dx ^ dy ^ dz after sorting (cyclic, even).
        assert_eq!(d.coefficient(&[0, 1, 2]).eval(&[0.0; 3]).unwrap(), 1.0);
    }

    #[test]
    fn d_squared_is_zero() {
        let c = xyz();
        let f = Expression::parse("x^2 * y + sin(z)", &c).unwrap();
        let ddf = KForm::differential(&f).exterior_d();
        assert!(ddf.is_empty(), "d(df) = {ddf:?}");
        let form = KForm::from_terms(
            &c,
            1,
            vec![
                (vec![0], Expression::parse("y*z", &c).unwrap()),
                (vec![2], Expression::parse("exp(x)", &c).unwrap()),
            ],
        )
        .unwrap();
        let dd = form.exterior_d().exterior_d();
        assert!(dd.is_empty());
    }

    #[test]
    fn interior_products() {
        let c = xy();
        let one = Expression::int(&c, 1);
        let w = KForm::from_terms(&c, 2, vec![(vec![0, 1], one)]).unwrap();
        // d_x -| (dx ^ dy) = dy
        let i = w.interior(&vf(&c, &["1", "0"])).unwrap();
        assert_eq!(i.coefficient(&[1]).eval(&[0.0, 0.0]).unwrap(), 1.0);
        assert!(i.coefficient(&[0]).is_zero_node());
        // (y d_x - x d_y) -| (dx ^ dy) = y dy + x dx
        let rot = vf(&c, &["y", "-x"]);
        let i = w.interior(&rot).unwrap();
        assert_eq!(i.coefficient(&[0]).eval(&[3.0, 5.0]).unwrap(), 3.0);
        assert_eq!(i.coefficient(&[1]).eval(&[3.0, 5.0]).unwrap(), 5.0);
        // X -| (X -| w) = 0
        let ii = i.interior(&rot).unwrap();
        assert!(ii.is_empty() || ii.coefficient(&[]).is_zero_node());
    }

    #[test]
    fn interior_of_zero_form_is_an_error() {
        let c = xy();
        let f = KForm::from_terms(&c, 0, vec![(vec![], Expression::int(&c, 3))]).unwrap();
        assert!(f.interior(&vf(&c, &["1", "0"])).is_err());
    }

    #[test]
    fn lie_derivative_of_x_dy_along_dx() {
        let c = xy();
        let x = Expression::coord(&c, 0);
        let form = KForm::from_terms(&c, 1, vec![(vec![1], x)]).unwrap();
        let l = form.lie_derivative(&vf(&c, &["1", "0"])).unwrap();
        assert_eq!(l.coefficient(&[1]).eval(&[0.3, 0.4]).unwrap(), 1.0);
        assert!(l.coefficient(&[0]).is_zero_node());
    }

    #[test]
    fn rotation_preserves_area_form() {
        let c = xy();
        let one = Expression::int(&c, 1);
        let w = KForm::from_terms(&c, 2, vec![(vec![0, 1], one)]).unwrap();
        let rot = vf(&c, &["y", "-x"]);
        let l = w.lie_derivative(&rot).unwrap();
        assert!(l.is_empty(), "L_rot(dx^dy) = {l:?}");
    }

    #[test]
    fn cartan_formula_matches_direct_tensor_lie() {
        let c = xy();
        let w = KForm::from_terms(
            &c,
            2,
            vec![(vec![0, 1], Expression::parse("x^2 + y", &c).unwrap())],
        )
        .unwrap();
        let x = vf(&c, &["y^2", "sin(x)"]);
        let cartan = w.lie_derivative(&x).unwrap();
        let tensor = w.as_tensor().lie_derivative(&x).unwrap();
        for &(px, py) in &[(0.2, 0.7), (-0.8, 0.4)] {
            let a = cartan.eval_matrix(&[px, py]).unwrap();
            let b = tensor.eval_dense(&[px, py]).unwrap();
            assert!((a[(0, 1)] - b.get(&[0, 1])).abs() < 1e-10);
        }
    }

    #[test]
    fn lie_derivative_leibniz_over_wedge() {
        let c = xyz();
        let a = KForm::from_terms(&c, 1, vec![(vec![0], Expression::parse("y*z", &c).unwrap())])
            .unwrap();
        let b = KForm::from_terms(&c, 1, vec![(vec![1], Expression::parse("exp(x)", &c).unwrap())])
            .unwrap();
        let x = vf(&c, &["z", "x*y", "1"]);
        let lhs = a.wedge(&b).unwrap().lie_derivative(&x).unwrap();
        let rhs = a
            .lie_derivative(&x)
            .unwrap()
            .wedge(&b)
            .unwrap()
            .add(&a.wedge(&b.lie_derivative(&x).unwrap()).unwrap())
            .unwrap();
        for p in [[0.3, 0.5, -0.4], [1.1, -0.2, 0.8]] {
            let ma = lhs.eval_matrix(&p).unwrap();
            let mb = rhs.eval_matrix(&p).unwrap();
            assert!((ma - mb).norm() < 1e-10);
        }
    }

    #[test]
    fn schouten_examples() {
        let c3 = xyz();
        let one = Expression::int(&c3, 1);
        let pi = BivectorField::from_terms(&c3, vec![((0, 1), one)]).unwrap();
        // [d_x, Pi] = 0
        let s = pi.schouten_with(&vf(&c3, &["1", "0", "0"])).unwrap();
        assert!(s.terms().is_empty());
        // [x d_x, Pi] = -Pi
        let s = pi.schouten_with(&vf(&c3, &["x", "0", "0"])).unwrap();
        assert_eq!(s.component(0, 1).eval(&[0.5, 0.2, 0.1]).unwrap(), -1.0);
        // Rotation preserves Pi: [-y d_x + x d_y, Pi] = 0
        let s = pi.schouten_with(&vf(&c3, &["-y", "x", "0"])).unwrap();
        assert!(s.terms().is_empty(), "{s:?}");
    }

    #[test]
    fn pullback_to_slice_examples() {
        let c3 = xyz();
        let one = Expression::int(&c3, 1);
        // dx ^ dy to {y = 0} -> 0
        let w = KForm::from_terms(&c3, 2, vec![((vec![0, 1]), one.clone())]).unwrap();
        let mut fixed = BTreeMap::new();
        fixed.insert(1usize, 0.0);
        let sub = c3.slice(&[1]).unwrap();
        let p = w.pullback_to_slice(&fixed, &sub).unwrap();
        assert!(p.is_empty());

        // (d_th1 ^ dz + dz ^ dw) to {w = 3} -> d_th1 ^ dz
        let c4 = Chart::new(
            "t2r2",
            &["th1", "th2", "z", "w"],
            &[true, true, false, false],
            &[(0.0, 1.0), (0.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)],
        )
        .unwrap();
        let one4 = Expression::int(&c4, 1);
        let w = KForm::from_terms(
            &c4,
            2,
            vec![(vec![0, 2], one4.clone()), (vec![2, 3], one4.clone())],
        )
        .unwrap();
        let mut fixed = BTreeMap::new();
        fixed.insert(3usize, 3.0);
        let sub = c4.slice(&[3]).unwrap();
        let p = w.pullback_to_slice(&fixed, &sub).unwrap();
        assert_eq!(p.terms().len(), 1);
        assert_eq!(p.coefficient(&[0, 2]).eval(&[0.0, 0.0, 0.0]).unwrap(), 1.0);

        // dA ^ dth with A = A(z) pulled back to a torus {z = c} -> 0
        let c3t = Chart::new(
            "tz",
            &["th", "z", "w"],
            &[true, false, false],
            &[(0.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)],
        )
        .unwrap();
        let a = Expression::parse("z^2", &c3t).unwrap();
        let da = KForm::differential(&a);
        let dth = KForm::from_terms(&c3t, 1, vec![(vec![0], Expression::int(&c3t, 1))]).unwrap();
        let form = da.wedge(&dth).unwrap();
        let mut fixed = BTreeMap::new();
        fixed.insert(1usize, 0.6);
        let sub = c3t.slice(&[1]).unwrap();
        let p = form.pullback_to_slice(&fixed, &sub).unwrap();
        assert!(p.is_empty());
    }

    #[test]
    fn tensor_lie_derivative_matches_bracket_for_vectors() {
        let c = xy();
        let x = vf(&c, &["y", "x^2"]);
        let y = vf(&c, &["x*y", "1"]);
        let lt = y.as_tensor().lie_derivative(&x).unwrap();
        let lb = x.lie_bracket(&y).unwrap();
        for p in [[0.4, 0.9], [-0.7, 0.3]] {
            let a = lt.eval_dense(&p).unwrap();
            let b = lb.eval(&p).unwrap();
            assert!((a.get(&[0]) - b[0]).abs() < 1e-10);
            assert!((a.get(&[1]) - b[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn tensor_lie_derivative_matches_schouten_for_bivectors() {
        let c = xyz();
        let pi = BivectorField::from_terms(
            &c,
            vec![((0, 1), Expression::parse("z", &c).unwrap())],
        )
        .unwrap();
        let x = vf(&c, &["y", "x", "x*z"]);
        let lt = pi.as_tensor().lie_derivative(&x).unwrap();
        let ls = pi.schouten_with(&x).unwrap();
        for p in [[0.4, 0.9, 0.2], [-0.7, 0.3, 1.1]] {
            let a = lt.eval_dense(&p).unwrap();
            let b = ls.eval_matrix(&p).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    assert!((a.get(&[i, j]) - b[(i, j)]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn wedge_square_of_one_form_vanishes() {
        let c = xyz();
        let a = KForm::from_terms(
            &c,
            1,
            vec![
                (vec![0], Expression::parse("x*y", &c).unwrap()),
                (vec![2], Expression::parse("sin(y)", &c).unwrap()),
            ],
        )
        .unwrap();
        let sq = a.wedge(&a).unwrap();
        assert!(sq.is_empty());
    }
}
