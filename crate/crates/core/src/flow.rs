//! Adaptive embedded Runge-Kutta flows (Dormand-Prince 4/5) for vector
//! fields on a chart, including the variational equations needed to push
//! tensors through a flow.

use crate::chart::Chart;
use crate::error::{CoreError, Result};
use crate::expr::Expression;
use crate::fields::VectorField;
use nalgebra::DMatrix;
use std::sync::Arc;

/// Integrator configuration. Defaults target return-map residuals near 1e-10.
#[derive(Debug, Clone)]
pub struct FlowEngine {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
}

impl Default for FlowEngine {
    fn default() -> Self {
        FlowEngine { rel_tol: 1e-11, abs_tol: 1e-12, max_steps: 4_000_000 }
    }
}

// Dormand-Prince 5(4) coefficients.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const ERR: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

impl FlowEngine {
    /// Integrate `y' = rhs(y)` from 0 to `time` (either sign).
    pub fn flow<F>(&self, rhs: &F, y0: &[f64], time: f64) -> Result<Vec<f64>>
    where
        F: Fn(&[f64], &mut [f64]) -> Result<()>,
    {
        let mut y = y0.to_vec();
        self.advance(rhs, &mut y, time)?;
        Ok(y)
    }

    /// Integrate visiting each checkpoint time in order (strictly monotone,
    /// starting from 0); `visit` sees the state at every checkpoint.
    pub fn flow_visiting<F, V>(
        &self,
        rhs: &F,
        y0: &[f64],
        checkpoints: &[f64],
        mut visit: V,
    ) -> Result<Vec<f64>>
    where
        F: Fn(&[f64], &mut [f64]) -> Result<()>,
        V: FnMut(f64, &[f64]),
    {
        let mut y = y0.to_vec();
        let mut t = 0.0;
        for &tc in checkpoints {
            self.advance(rhs, &mut y, tc - t)?;
            t = tc;
            visit(t, &y);
        }
        Ok(y)
    }

    /// Core adaptive loop over a signed duration.
    fn advance<F>(&self, rhs: &F, y: &mut Vec<f64>, duration: f64) -> Result<()>
    where
        F: Fn(&[f64], &mut [f64]) -> Result<()>,
    {
        if duration == 0.0 {
            return Ok(());
        }
        let n = y.len();
        let dir = duration.signum();
        let total = duration.abs();
        let mut t = 0.0f64;
        let mut h = (total * 1e-3).clamp(1e-10, 0.1);
        let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
        rhs(y, &mut k[0])?;
        let mut steps = 0usize;
        while t < total {
            if steps >= self.max_steps {
                return Err(CoreError::Integrator(format!(
                    "step budget exhausted at t = {t:.6e} of {total:.6e}"
                )));
            }
            steps += 1;
            let h_try = h.min(total - t);
            // Stage evaluations.
            let mut ytmp = vec![0.0; n];
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = 0.0;
                    for (j, kj) in k.iter().enumerate().take(s) {
                        let a = A[s - 1][j];
                        if a != 0.0 {
                            acc += a * kj[i];
                        }
                    }
                    ytmp[i] = y[i] + dir * h_try * acc;
                }
                let (head, tail) = k.split_at_mut(s);
                let _ = head;
                rhs(&ytmp, &mut tail[0])?;
            }
            // 5th-order solution and embedded error estimate.
            let mut ynew = vec![0.0; n];
            let mut err_norm_sq = 0.0;
            for i in 0..n {
                let mut acc = 0.0;
                let mut errc = 0.0;
                for s in 0..7 {
                    if B5[s] != 0.0 {
                        acc += B5[s] * k[s][i];
                    }
                    if ERR[s] != 0.0 {
                        errc += ERR[s] * k[s][i];
                    }
                }
                ynew[i] = y[i] + dir * h_try * acc;
                let scale = self.abs_tol + self.rel_tol * y[i].abs().max(ynew[i].abs());
                let e = dir * h_try * errc / scale;
                err_norm_sq += e * e;
            }
            let err = (err_norm_sq / n as f64).sqrt();
            if err <= 1.0 {
                t += h_try;
                *y = ynew;
                // FSAL: stage 7 already evaluated at the accepted point.
                let last = k[6].clone();
                k[0].copy_from_slice(&last);
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h = (h_try * factor).min(total);
            } else {
                let factor = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
                h = h_try * factor;
                if h < 1e-14 * total.max(1.0) {
                    return Err(CoreError::Integrator("step size underflow".into()));
                }
                // Recompute the first stage at the unchanged point.
                rhs(y, &mut k[0])?;
            }
        }
        Ok(())
    }
}

/// A weighted combination `sum_i w_i X_i` of vector fields with its symbolic
/// Jacobian, evaluated numerically along flows.
pub struct WeightedField {
    chart: Arc<Chart>,
    components: Vec<Expression>,
    jacobian: Vec<Vec<Expression>>,
    domain_guard: bool,
}

impl WeightedField {
    pub fn new(chart: &Arc<Chart>, fields: &[VectorField], weights: &[f64]) -> Result<WeightedField> {
        let combined = VectorField::linear_combination(chart, weights, fields)?;
        Ok(WeightedField::from_field(&combined))
    }

    pub fn from_field(field: &VectorField) -> WeightedField {
        let chart = field.chart().clone();
        let n = chart.dim();
        let components: Vec<Expression> = field.components().to_vec();
        let jacobian = (0..n)
            .map(|j| (0..n).map(|m| components[j].diff_index(m)).collect())
            .collect();
        WeightedField { chart, components, jacobian, domain_guard: true }
    }

    /// Disable the chart-domain check (used by probes that deliberately step
    /// slightly outside the sampling box).
    pub fn without_domain_guard(mut self) -> WeightedField {
        self.domain_guard = false;
        self
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    fn guard(&self, y: &[f64]) -> Result<()> {
        if self.domain_guard && !self.chart.contains(y) {
            return Err(CoreError::LeftDomain { point: y.to_vec() });
        }
        Ok(())
    }

    /// RHS closure for the plain flow.
    pub fn rhs(&self) -> impl Fn(&[f64], &mut [f64]) -> Result<()> + '_ {
        move |y, dy| {
            self.guard(y)?;
            for (i, c) in self.components.iter().enumerate() {
                dy[i] = c.eval(y)?;
            }
            Ok(())
        }
    }

    /// RHS for the variational system `[x; J]` with `J' = DV(x) J`
    /// (J stored column-major after the state).
    pub fn variational_rhs(&self) -> impl Fn(&[f64], &mut [f64]) -> Result<()> + '_ {
        let n = self.chart.dim();
        move |y, dy| {
            let x = &y[..n];
            self.guard(x)?;
            for (i, c) in self.components.iter().enumerate() {
                dy[i] = c.eval(x)?;
            }
            // DV at x.
            let mut a = vec![0.0; n * n];
            for j in 0..n {
                for m in 0..n {
                    a[j * n + m] = self.jacobian[j][m].eval(x)?;
                }
            }
            for col in 0..n {
                for row in 0..n {
                    let mut acc = 0.0;
                    for m in 0..n {
                        acc += a[row * n + m] * y[n + col * n + m];
                    }
                    dy[n + col * n + row] = acc;
                }
            }
            Ok(())
        }
    }

    /// Flow a point for the given time.
    pub fn flow_point(&self, engine: &FlowEngine, x0: &[f64], time: f64) -> Result<Vec<f64>> {
        let rhs = self.rhs();
        let mut y = engine.flow(&rhs, x0, time)?;
        self.chart.reduce(&mut y);
        Ok(y)
    }

    /// Flow a point together with the differential of the flow map.
    pub fn flow_with_jacobian(
        &self,
        engine: &FlowEngine,
        x0: &[f64],
        time: f64,
    ) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let n = self.chart.dim();
        let mut y0 = vec![0.0; n + n * n];
        y0[..n].copy_from_slice(x0);
        for i in 0..n {
            y0[n + i * n + i] = 1.0;
        }
        let rhs = self.variational_rhs();
        let y = engine.flow(&rhs, &y0, time)?;
        let mut x = y[..n].to_vec();
        self.chart.reduce(&mut x);
        let jac = DMatrix::from_column_slice(n, n, &y[n..]);
        Ok((x, jac))
    }
}

/// A family of vector fields flowed as runtime-weighted combinations
/// `sum_i w_i X_i`; symbolic Jacobians are derived once at construction.
pub struct SystemFlow {
    chart: Arc<Chart>,
    components: Vec<Vec<Expression>>,
    jacobians: Vec<Vec<Vec<Expression>>>,
}

impl SystemFlow {
    pub fn new(chart: &Arc<Chart>, fields: &[VectorField]) -> SystemFlow {
        let n = chart.dim();
        let components: Vec<Vec<Expression>> =
            fields.iter().map(|f| f.components().to_vec()).collect();
        let jacobians = components
            .iter()
            .map(|comps| {
                comps
                    .iter()
                    .map(|c| (0..n).map(|m| c.diff_index(m)).collect())
                    .collect()
            })
            .collect();
        SystemFlow { chart: chart.clone(), components, jacobians }
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn num_fields(&self) -> usize {
        self.components.len()
    }

    fn eval_combination(&self, weights: &[f64], x: &[f64], out: &mut [f64]) -> Result<()> {
        if !self.chart.contains(x) {
            return Err(CoreError::LeftDomain { point: x.to_vec() });
        }
        for v in out.iter_mut() {
            *v = 0.0;
        }
        for (w, comps) in weights.iter().zip(&self.components) {
            if *w == 0.0 {
                continue;
            }
            for (i, c) in comps.iter().enumerate() {
                out[i] += w * c.eval(x)?;
            }
        }
        Ok(())
    }

    /// Evaluate each field at a point (rows of the p x n matrix).
    pub fn field_values(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.components
            .iter()
            .map(|comps| comps.iter().map(|c| c.eval(x)).collect())
            .collect()
    }

    /// Flow `sum_i w_i X_i` for unit time from `x0` (periodic coordinates
    /// reduced on return).
    pub fn flow(&self, engine: &FlowEngine, weights: &[f64], x0: &[f64]) -> Result<Vec<f64>> {
        let rhs = |y: &[f64], dy: &mut [f64]| self.eval_combination(weights, y, dy);
        let mut y = engine.flow(&rhs, x0, 1.0)?;
        self.chart.reduce(&mut y);
        Ok(y)
    }

    /// Flow with the differential of the unit-time map.
    pub fn flow_with_jacobian(
        &self,
        engine: &FlowEngine,
        weights: &[f64],
        x0: &[f64],
    ) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let n = self.chart.dim();
        let rhs = |y: &[f64], dy: &mut [f64]| {
            let x = &y[..n];
            self.eval_combination(weights, x, &mut dy[..n])?;
            let mut a = vec![0.0; n * n];
            for (w, jac) in weights.iter().zip(&self.jacobians) {
                if *w == 0.0 {
                    continue;
                }
                for j in 0..n {
                    for m in 0..n {
                        a[j * n + m] += w * jac[j][m].eval(x)?;
                    }
                }
            }
            for col in 0..n {
                for row in 0..n {
                    let mut acc = 0.0;
                    for m in 0..n {
                        acc += a[row * n + m] * y[n + col * n + m];
                    }
                    dy[n + col * n + row] = acc;
                }
            }
            Ok(())
        };
        let mut y0 = vec![0.0; n + n * n];
        y0[..n].copy_from_slice(x0);
        for i in 0..n {
            y0[n + i * n + i] = 1.0;
        }
        let y = engine.flow(&rhs, &y0, 1.0)?;
        let mut x = y[..n].to_vec();
        self.chart.reduce(&mut x);
        Ok((x, DMatrix::from_column_slice(n, n, &y[n..])))
    }

    /// Flow visiting intermediate fractions of the unit time (ascending in
    /// (0, 1]); used for quadrature along flow segments.
    pub fn flow_visiting<V>(
        &self,
        engine: &FlowEngine,
        weights: &[f64],
        x0: &[f64],
        checkpoints: &[f64],
        visit: V,
    ) -> Result<Vec<f64>>
    where
        V: FnMut(f64, &[f64]),
    {
        let rhs = |y: &[f64], dy: &mut [f64]| self.eval_combination(weights, y, dy);
        engine.flow_visiting(&rhs, x0, checkpoints, visit)
    }
}
