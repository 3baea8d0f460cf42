//! Composite 5-point Gauss-Legendre quadrature with adaptive panel doubling.
//!
//! Integrands along flows are expensive to evaluate at scattered times, so
//! the panel machinery exposes its node list: callers evaluate all nodes in
//! one sequential pass and hand the values back.

use crate::error::{CoreError, Result};
use crate::tol;

// 5-point Gauss-Legendre nodes and weights on [-1, 1].
#[allow(clippy::excessive_precision)]
const GL_NODES: [f64; 5] = [
    -0.906179845938663992797626878299,
    -0.538469310105683091036314420700,
    0.0,
    0.538469310105683091036314420700,
    0.906179845938663992797626878299,
];
#[allow(clippy::excessive_precision)]
const GL_WEIGHTS: [f64; 5] = [
    0.236926885056189087514264040720,
    0.478628670499366468041291514836,
    0.568888888888888888888888888889,
    0.478628670499366468041291514836,
    0.236926885056189087514264040720,
];

/// Node times and weights for `panels` equal panels over `[a, b]`,
/// in ascending time order.
pub fn panel_nodes(a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(5 * panels);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
            out.push((mid + 0.5 * h * x, 0.5 * h.abs() * w * (b - a).signum()));
        }
    }
    out
}

/// Adaptively integrate over `[a, b]`: `values_at` receives the node times
/// (ascending) and returns the integrand values there. Panels double until
/// the result changes by less than the convergence threshold.
pub fn integrate_adaptive<F>(a: f64, b: f64, mut values_at: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if a == b {
        return Ok(0.0);
    }
    let mut panels = 1usize;
    let mut prev: Option<f64> = None;
    loop {
        let nodes = panel_nodes(a, b, panels);
        let times: Vec<f64> = nodes.iter().map(|(t, _)| *t).collect();
        let vals = values_at(&times)?;
        if vals.len() != nodes.len() {
            return Err(CoreError::Scenario("integrand returned wrong node count".into()));
        }
        let total: f64 = nodes.iter().zip(&vals).map(|((_, w), v)| w * v).sum();
        if let Some(p) = prev {
            let change = (total - p).abs();
            if change <= tol::QUADRATURE_CONV * total.abs().max(1.0) {
                return Ok(total);
            }
            if panels >= 512 {
                return Err(CoreError::QuadratureDiverged { change });
            }
        }
        prev = Some(total);
        panels *= 2;
    }
}
