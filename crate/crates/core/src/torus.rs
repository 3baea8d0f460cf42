//! Liouville torus machinery: joint flows of commuting fields, period
//! lattice detection by recurrence scan plus Newton refinement, angle
//! coordinates, torus averaging of tensor fields and numeric verification of
//! the structure-preservation property of the torus action.

use crate::chart::Chart;
use crate::dirac::{DiracField, Section};
use crate::error::{CoreError, Result};
use crate::fields::{KForm, TensorField, TensorValues, VectorField};
use crate::flow::{FlowEngine, SystemFlow};
use crate::lattice::LatticeBuilder;
use crate::linalg;
use crate::system::IntegrableSystem;
use crate::tol;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Search configuration for the recurrence scan.
#[derive(Debug, Clone)]
pub struct LatticeSearch {
    /// Time-box edge for the scan, per generator direction.
    pub t_max: f64,
    /// Scan step along each time axis.
    pub step: f64,
    /// State-space distance below which a scan point counts as a
    /// near-return worth refining.
    pub near_return: f64,
}

impl Default for LatticeSearch {
    fn default() -> Self {
        LatticeSearch { t_max: tol::DEFAULT_T_MAX, step: 0.05, near_return: 0.15 }
    }
}

/// A Liouville torus: base point, period lattice (rows are time vectors
/// fixing the base point), its level values, and the frequency matrix
/// `A = L^{-1}` (so that `X_i = sum_j A_ij d_theta_j`).
#[derive(Debug, Clone)]
pub struct TorusChart {
    base_point: Vec<f64>,
    lattice: DMatrix<f64>,
    levels: Vec<f64>,
    frequencies: DMatrix<f64>,
    return_error: f64,
}

impl TorusChart {
    /// Assemble a chart from known parts (family interpolation); the lattice
    /// must be invertible. `return_error` is zero by convention here since
    /// no search validated it.
    pub fn from_parts(
        base_point: Vec<f64>,
        lattice: DMatrix<f64>,
        levels: Vec<f64>,
    ) -> Result<TorusChart> {
        let frequencies = lattice
            .clone()
            .try_inverse()
            .ok_or(CoreError::LatticeRankDeficient)?;
        Ok(TorusChart { base_point, lattice, levels, frequencies, return_error: 0.0 })
    }

    pub fn base_point(&self) -> &[f64] {
        &self.base_point
    }

    /// Row i is the time vector t with `Phi_t(base) = base`.
    pub fn lattice(&self) -> &DMatrix<f64> {
        &self.lattice
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// `A = L^{-1}` with `X_i = sum_j A_ij d_theta_j`.
    pub fn frequencies(&self) -> &DMatrix<f64> {
        &self.frequencies
    }

    pub fn return_error(&self) -> f64 {
        self.return_error
    }

    pub fn p(&self) -> usize {
        self.lattice.nrows()
    }

    /// Weights expanding the angle generator `d_theta_k = sum_i L_ki X_i`.
    pub fn generator_weights(&self, k: usize) -> Vec<f64> {
        self.lattice.row(k).iter().copied().collect()
    }

    /// Time vector realizing angles `theta` from the base point.
    pub fn time_for_angles(&self, theta: &[f64]) -> Vec<f64> {
        let th = DVector::from_vec(theta.to_vec());
        (self.lattice.transpose() * th).iter().copied().collect()
    }

    /// The generator vector field `d_theta_k` as a symbolic combination.
    pub fn generator_field(&self, sys: &IntegrableSystem, k: usize) -> Result<VectorField> {
        VectorField::linear_combination(sys.chart(), &self.generator_weights(k), sys.fields())
    }
}

/// Flow `sum_i t_i X_i` for unit time (valid for commuting fields).
pub fn joint_flow(
    engine: &FlowEngine,
    flow: &SystemFlow,
    t: &[f64],
    x0: &[f64],
) -> Result<Vec<f64>> {
    if t.len() != flow.num_fields() {
        return Err(CoreError::DimensionMismatch { expected: flow.num_fields(), got: t.len() });
    }
    flow.flow(engine, t, x0)
}

/// Newton-refine a candidate period `t`: solves `Phi_t(x0) = x0` in the
/// least-squares sense along the torus tangent directions (the Jacobian
/// columns are the vector fields at the endpoint). Returns `None` when the
/// iteration leaves its basin.
fn refine_period(
    engine: &FlowEngine,
    flow: &SystemFlow,
    chart: &Arc<Chart>,
    x0: &[f64],
    mut t: DVector<f64>,
) -> Result<Option<DVector<f64>>> {
    let p = flow.num_fields();
    for _ in 0..30 {
        let weights: Vec<f64> = t.iter().copied().collect();
        let image = flow.flow(engine, &weights, x0)?;
        let residual = DVector::from_vec(chart.displacement(&image, x0));
        if residual.norm() <= 1e-10 {
            return Ok(Some(t));
        }
        let field_vals = flow.field_values(&image)?;
        let n = chart.dim();
        let mut jac = DMatrix::zeros(n, p);
        for (i, f) in field_vals.iter().enumerate() {
            for (r, &v) in f.iter().enumerate() {
                jac[(r, i)] = v;
            }
        }
        let delta = linalg::lstsq(&jac, &(-&residual), tol::RANK_REL);
        if !delta.iter().all(|v| v.is_finite()) || delta.norm() > 1.0 {
            return Ok(None);
        }
        t += delta;
    }
    Ok(None)
}

/// Scan the time box `[0, t_max]^p` on a coarse grid for near-returns, using
/// incremental flow composition along the last axis.
fn scan_near_returns(
    engine: &FlowEngine,
    flow: &SystemFlow,
    chart: &Arc<Chart>,
    x0: &[f64],
    search: &LatticeSearch,
) -> Result<Vec<DVector<f64>>> {
    let p = flow.num_fields();
    let steps = (search.t_max / search.step).ceil() as usize;
    let mut candidates = Vec::new();

    // Recursive sweep: outer axes pick a prefix time vector (flowed from
    // x0 once per prefix), the innermost axis advances incrementally.
    #[allow(clippy::too_many_arguments)]
    fn sweep(
        engine: &FlowEngine,
        flow: &SystemFlow,
        chart: &Arc<Chart>,
        x0: &[f64],
        search: &LatticeSearch,
        steps: usize,
        prefix: &mut Vec<f64>,
        state: Vec<f64>,
        candidates: &mut Vec<DVector<f64>>,
    ) -> Result<()> {
        let p = flow.num_fields();
        let axis = prefix.len();
        if axis == p - 1 {
            // Innermost axis: incremental segments of step * X_axis.
            let mut current = state;
            let mut weights = vec![0.0; p];
            weights[axis] = search.step;
            let mut dist_prev = f64::INFINITY;
            let mut pending: Option<(f64, Vec<f64>)> = None;
            for k in 0..=steps {
                let dist = chart.distance(&current, x0);
                let tl = k as f64 * search.step;
                // Candidate at local minima of the distance along the axis.
                if dist < search.near_return {
                    match &pending {
                        Some((dbest, _)) if *dbest <= dist => {
                            // Distance started rising: flush the pending minimum.
                            if dist_prev <= dist {
                                let (_, tv) = pending.take().unwrap();
                                let mut tvec = prefix.clone();
                                tvec.push(tv[0]);
                                candidates.push(DVector::from_vec(tvec));
                            }
                        }
                        _ => pending = Some((dist, vec![tl])),
                    }
                    if let Some((dbest, tv)) = &mut pending {
                        if dist < *dbest {
                            *dbest = dist;
                            *tv = vec![tl];
                        }
                    }
                } else if let Some((_, tv)) = pending.take() {
                    let mut tvec = prefix.clone();
                    tvec.push(tv[0]);
                    candidates.push(DVector::from_vec(tvec));
                }
                dist_prev = dist;
                if k < steps {
                    current = flow.flow(engine, &weights, &current)?;
                }
            }
            if let Some((_, tv)) = pending.take() {
                let mut tvec = prefix.clone();
                tvec.push(tv[0]);
                candidates.push(DVector::from_vec(tvec));
            }
            return Ok(());
        }
        // Outer axis: advance incrementally, recursing at each node.
        let mut current = state;
        let mut weights = vec![0.0; p];
        weights[axis] = search.step;
        for k in 0..=steps {
            prefix.push(k as f64 * search.step);
            sweep(engine, flow, chart, x0, search, steps, prefix, current.clone(), candidates)?;
            prefix.pop();
            if k < steps {
                current = flow.flow(engine, &weights, &current)?;
            }
        }
        Ok(())
    }

    let mut prefix = Vec::with_capacity(p.saturating_sub(1));
    sweep(engine, flow, chart, x0, search, steps, &mut prefix, x0.to_vec(), &mut candidates)?;
    Ok(candidates)
}

/// Detect the period lattice of the torus through `x0`.
pub fn find_period_lattice(
    engine: &FlowEngine,
    sys: &IntegrableSystem,
    x0: &[f64],
    search: &LatticeSearch,
) -> Result<TorusChart> {
    if !sys.is_regular_at(x0)? {
        return Err(CoreError::HypothesisFailed(format!(
            "system is not regular at the seed point {x0:?}"
        )));
    }
    let chart = sys.chart().clone();
    let flow = SystemFlow::new(&chart, sys.fields());
    let p = sys.p();

    let candidates = scan_near_returns(engine, &flow, &chart, x0, search)?;
    let mut builder = LatticeBuilder::new();
    for cand in candidates {
        if cand.norm() < 1e-9 {
            continue;
        }
        if let Some(refined) = refine_period(engine, &flow, &chart, x0, cand)? {
            if refined.norm() > 1e-6 {
                builder.offer(refined, 1e-6);
            }
        }
    }
    if builder.rank() < p {
        return Err(CoreError::NoRecurrence { t_max: search.t_max });
    }
    let lattice = builder.matrix()?;

    // Validate the basis rows as genuine periods.
    let mut return_error = 0.0f64;
    for i in 0..p {
        let weights: Vec<f64> = lattice.row(i).iter().copied().collect();
        let image = flow.flow(engine, &weights, x0)?;
        return_error = return_error.max(chart.distance(&image, x0));
    }
    if return_error > tol::RETURN_MAP {
        return Err(CoreError::NewtonDiverged(format!(
            "lattice rows return with error {return_error:.3e}"
        )));
    }
    let frequencies = lattice
        .clone()
        .try_inverse()
        .ok_or(CoreError::LatticeRankDeficient)?;
    let levels = sys
        .integrals()
        .iter()
        .map(|f| f.eval(x0))
        .collect::<Result<Vec<_>>>()?;
    Ok(TorusChart { base_point: x0.to_vec(), lattice, levels, frequencies, return_error })
}

/// Angle coordinates of `y` on the torus of `tc`: solves
/// `Phi_{L^T theta}(base) = y`, `theta(base) = 0`, angles mod 1.
pub fn angle_coordinates(
    engine: &FlowEngine,
    sys: &IntegrableSystem,
    tc: &TorusChart,
    y: &[f64],
) -> Result<Vec<f64>> {
    let chart = sys.chart().clone();
    // Level-set membership.
    let mut drift = 0.0f64;
    for (f, lv) in sys.integrals().iter().zip(tc.levels()) {
        drift = drift.max((f.eval(y)? - lv).abs());
    }
    if drift > tol::LEVEL_MATCH {
        return Err(CoreError::OffLevelSet { deviation: drift });
    }
    let flow = SystemFlow::new(&chart, sys.fields());
    let p = tc.p();

    // Coarse seed over the angle grid.
    let grid = 8usize;
    let mut best = (f64::INFINITY, vec![0.0; p]);
    let mut idx = vec![0usize; grid.pow(p as u32)];
    for (flat, _) in idx.iter_mut().enumerate() {
        let mut theta = vec![0.0; p];
        let mut rem = flat;
        for slot in theta.iter_mut() {
            *slot = (rem % grid) as f64 / grid as f64;
            rem /= grid;
        }
        let t = tc.time_for_angles(&theta);
        let image = flow.flow(engine, &t, tc.base_point())?;
        let d = chart.distance(&image, y);
        if d < best.0 {
            best = (d, theta);
        }
    }
    let mut theta = DVector::from_vec(best.1);

    // Newton on theta.
    for _ in 0..40 {
        let t = tc.time_for_angles(theta.as_slice());
        let image = flow.flow(engine, &t, tc.base_point())?;
        let residual = DVector::from_vec(chart.displacement(&image, y));
        if residual.norm() <= 1e-10 {
            let mut out: Vec<f64> = theta.iter().map(|v| v.rem_euclid(1.0)).collect();
            for v in out.iter_mut() {
                if *v > 1.0 - 1e-12 {
                    *v = 0.0;
                }
            }
            return Ok(out);
        }
        // d image / d theta_k = Z_k(image) = sum_i L_ki X_i(image).
        let field_vals = flow.field_values(&image)?;
        let n = chart.dim();
        let mut jac = DMatrix::zeros(n, p);
        for k in 0..p {
            let w = tc.generator_weights(k);
            for r in 0..n {
                let mut acc = 0.0;
                for (i, f) in field_vals.iter().enumerate() {
                    acc += w[i] * f[r];
                }
                jac[(r, k)] = acc;
            }
        }
        let delta = linalg::lstsq(&jac, &(-&residual), tol::RANK_REL);
        if !delta.iter().all(|v| v.is_finite()) {
            break;
        }
        theta += delta;
    }
    Err(CoreError::NewtonDiverged("angle solve did not converge".into()))
}

// ---------------------------------------------------------------------------
// Torus averaging
// ---------------------------------------------------------------------------

/// Per-angle grid sizes for torus quadrature (uniform grid; trapezoid
/// weights are spectrally accurate for smooth periodic integrands).
#[derive(Debug, Clone)]
pub struct TorusQuadrature {
    pub sizes: Vec<usize>,
}

impl TorusQuadrature {
    pub fn uniform(p: usize, size: usize) -> Result<TorusQuadrature> {
        if size < 8 {
            return Err(CoreError::Scenario("angle grid sizes must be >= 8".into()));
        }
        Ok(TorusQuadrature { sizes: vec![size; p] })
    }

    pub fn new(sizes: Vec<usize>) -> Result<TorusQuadrature> {
        if sizes.iter().any(|&s| s < 8) {
            return Err(CoreError::Scenario("angle grid sizes must be >= 8".into()));
        }
        Ok(TorusQuadrature { sizes })
    }
}

/// Precomputed states and flow differentials over an extended angle grid
/// (index range `[0, 2*size_k - 1)` per axis so that translated sources stay
/// in range).
pub struct TorusGrid {
    sizes: Vec<usize>,
    ext_sizes: Vec<usize>,
    states: Vec<Vec<f64>>,
    jacobians: Vec<DMatrix<f64>>,
    jacobian_invs: Vec<DMatrix<f64>>,
}

impl TorusGrid {
    pub fn build(
        engine: &FlowEngine,
        sys: &IntegrableSystem,
        tc: &TorusChart,
        quad: &TorusQuadrature,
    ) -> Result<TorusGrid> {
        let chart = sys.chart().clone();
        let n = chart.dim();
        let p = tc.p();
        if quad.sizes.len() != p {
            return Err(CoreError::DimensionMismatch { expected: p, got: quad.sizes.len() });
        }
        let flow = SystemFlow::new(&chart, sys.fields());
        let ext_sizes: Vec<usize> = quad.sizes.iter().map(|&s| 2 * s - 1).collect();
        let total: usize = ext_sizes.iter().product();
        let mut states = vec![Vec::new(); total];
        let mut jacobians = vec![DMatrix::zeros(0, 0); total];

        // March axis by axis: node (i_0 .. i_{p-1}) extends its predecessor
        // along the last nonzero axis by one angle step of that generator.
        states[0] = tc.base_point().to_vec();
        jacobians[0] = DMatrix::identity(n, n);
        let strides = strides_of(&ext_sizes);
        for flat in 1..total {
            let idx = unflatten(flat, &ext_sizes);
            // Find the last axis with a nonzero index; step from the
            // neighbor one slot back along it.
            let axis = (0..p).rev().find(|&a| idx[a] > 0).unwrap();
            let prev_flat = flat - strides[axis];
            let h = 1.0 / quad.sizes[axis] as f64;
            let mut weights = tc.generator_weights(axis);
            for w in weights.iter_mut() {
                *w *= h;
            }
            let (x, j) = flow.flow_with_jacobian(engine, &weights, &states[prev_flat])?;
            jacobians[flat] = &j * &jacobians[prev_flat];
            states[flat] = x;
        }
        let jacobian_invs = jacobians
            .iter()
            .map(|j| {
                j.clone()
                    .try_inverse()
                    .ok_or_else(|| CoreError::Integrator("flow differential is singular".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TorusGrid { sizes: quad.sizes.clone(), ext_sizes, states, jacobians, jacobian_invs })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn base_count(&self) -> usize {
        self.sizes.iter().product()
    }

    fn ext_flat(&self, idx: &[usize]) -> usize {
        let strides = strides_of(&self.ext_sizes);
        idx.iter().zip(&strides).map(|(i, s)| i * s).sum()
    }

    pub fn state_at(&self, base_idx: &[usize]) -> &[f64] {
        &self.states[self.ext_flat(base_idx)]
    }

    /// Average of `source` over the torus action on every base grid point:
    /// `avg(g) = (1/|G|) sum_{g'} pullback_{g -> g+g'}(source(g+g'))`.
    /// `source` receives the extended index and must return tensor values at
    /// the state of that index.
    fn average_with(
        &self,
        contra: usize,
        cova: usize,
        source: &dyn Fn(&[usize]) -> TensorValues,
    ) -> Vec<TensorValues> {
        let p = self.sizes.len();
        let n = self.states[0].len();
        let base_total = self.base_count();
        let shift_total: usize = self.sizes.iter().product();
        let inv_count = 1.0 / shift_total as f64;
        let mut out = Vec::with_capacity(base_total);
        for gflat in 0..base_total {
            let g = unflatten(gflat, &self.sizes);
            let jg = &self.jacobians[self.ext_flat(&g)];
            let jg_inv = &self.jacobian_invs[self.ext_flat(&g)];
            let mut acc = TensorValues::zeros(n, contra, cova);
            for sflat in 0..shift_total {
                let s = unflatten(sflat, &self.sizes);
                let src_idx: Vec<usize> = g.iter().zip(&s).map(|(a, b)| a + b).collect();
                let ext = self.ext_flat(&src_idx);
                let values = source(&src_idx);
                if contra + cova == 0 {
                    acc.data[0] += values.data[0];
                    continue;
                }
                // dPhi_{t'} at x_g: M = J_{g+g'} J_g^{-1}.
                let m = &self.jacobians[ext] * jg_inv;
                let m_inv = jg * &self.jacobian_invs[ext];
                let pulled = values.pullback(&m, &m_inv);
                acc.add_scaled(&pulled, 1.0);
            }
            for v in acc.data.iter_mut() {
                *v *= inv_count;
            }
            out.push(acc);
        }
        let _ = p;
        out
    }

    /// Average a symbolic tensor field over the torus action. Returns values
    /// on the base grid and the maximum deviation from the pointwise values.
    pub fn average(&self, tensor: &TensorField) -> Result<AveragedTensor> {
        let (contra, cova) = tensor.orders();
        // Evaluate the tensor at every extended node first.
        let ext_total: usize = self.ext_sizes.iter().product();
        let mut evaluated = Vec::with_capacity(ext_total);
        for flat in 0..ext_total {
            evaluated.push(tensor.eval_dense(&self.states[flat])?);
        }
        let grid = self;
        let values = self.average_with(contra, cova, &|idx: &[usize]| {
            evaluated[grid.ext_flat(idx)].clone()
        });
        let mut max_deviation = 0.0f64;
        for (gflat, avg) in values.iter().enumerate() {
            let g = unflatten(gflat, &self.sizes);
            let pointwise = &evaluated[self.ext_flat(&g)];
            max_deviation = max_deviation.max(avg.max_abs_diff(pointwise));
        }
        Ok(AveragedTensor { sizes: self.sizes.clone(), values, max_deviation })
    }

    /// Re-average an already averaged field (grid-periodic extension);
    /// returns the max change, which must vanish for a genuine average.
    pub fn reaverage_change(&self, avg: &AveragedTensor) -> f64 {
        let (contra, cova) = (avg.values[0].contra, avg.values[0].cova);
        let sizes = self.sizes.clone();
        let values2 = self.average_with(contra, cova, &|idx: &[usize]| {
            let wrapped: Vec<usize> =
                idx.iter().zip(&sizes).map(|(i, s)| i % s).collect();
            avg.values[flatten(&wrapped, &sizes)].clone()
        });
        avg.values
            .iter()
            .zip(&values2)
            .fold(0.0f64, |m, (a, b)| m.max(a.max_abs_diff(b)))
    }
}

/// Averaged tensor values on the base angle grid.
#[derive(Debug, Clone)]
pub struct AveragedTensor {
    pub sizes: Vec<usize>,
    pub values: Vec<TensorValues>,
    pub max_deviation: f64,
}

fn strides_of(sizes: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; sizes.len()];
    for a in (0..sizes.len().saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * sizes[a + 1];
    }
    strides
}

fn unflatten(mut flat: usize, sizes: &[usize]) -> Vec<usize> {
    let strides = strides_of(sizes);
    sizes
        .iter()
        .enumerate()
        .map(|(a, _)| {
            let v = flat / strides[a];
            flat %= strides[a];
            v
        })
        .collect()
}

fn flatten(idx: &[usize], sizes: &[usize]) -> usize {
    let strides = strides_of(sizes);
    idx.iter().zip(&strides).map(|(i, s)| i * s).sum()
}

// ---------------------------------------------------------------------------
// Structure preservation
// ---------------------------------------------------------------------------

/// Residuals of the structure-preservation property: (a) each system field
/// preserves the Dirac frame (prerequisite), (b) so does each torus-action
/// generator `d_theta_k = sum_i L_ki X_i`.
#[derive(Debug, Clone)]
pub struct PreservationReport {
    pub system_residual: f64,
    pub generator_residual: f64,
}

fn field_preserves_frame(
    dirac: &DiracField,
    field: &VectorField,
    samples: &[Vec<f64>],
) -> Result<f64> {
    let chart = dirac.chart().clone();
    let section = Section::new(field.clone(), KForm::zero(&chart, 1))?;
    let mut max_res = 0.0f64;
    for e in dirac.sections() {
        let bracket = section.courant_bracket(e)?;
        for pt in samples {
            let frame = dirac.frame_at(pt)?;
            let b = bracket.eval(pt)?;
            let scale = (section.eval(pt)?.norm() * e.eval(pt)?.norm()).max(1.0);
            let d =
                linalg::distance_to_span(&frame.stacked(), &b.stacked(), tol::RANK_REL) / scale;
            max_res = max_res.max(d);
        }
    }
    Ok(max_res)
}

/// Verify that the system fields and the torus generators preserve the Dirac
/// structure at the given samples.
pub fn verify_structure_preservation(
    sys: &IntegrableSystem,
    tc: &TorusChart,
    dirac: &DiracField,
    samples: &[Vec<f64>],
) -> Result<PreservationReport> {
    let mut system_residual = 0.0f64;
    for f in sys.fields() {
        system_residual = system_residual.max(field_preserves_frame(dirac, f, samples)?);
    }
    let mut generator_residual = 0.0f64;
    for k in 0..tc.p() {
        let z = tc.generator_field(sys, k)?;
        generator_residual = generator_residual.max(field_preserves_frame(dirac, &z, samples)?);
    }
    Ok(PreservationReport { system_residual, generator_residual })
}
