//! Coordinate charts: named coordinates, periodicity flags and the sampling
//! box used by all numeric checks.

use crate::error::{CoreError, Result};
use std::sync::Arc;

/// A coordinate chart of dimension `n`.
///
/// Periodic coordinates are taken mod 1 and must use the domain interval
/// `[0, 1)`. The domain box is the region sampled by numeric checks; it is
/// not a hard wall for symbolic operations.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    name: String,
    coord_names: Vec<String>,
    periodic: Vec<bool>,
    domain_box: Vec<(f64, f64)>,
}

impl Chart {
    pub fn new(
        name: impl Into<String>,
        coord_names: &[&str],
        periodic: &[bool],
        domain_box: &[(f64, f64)],
    ) -> Result<Arc<Chart>> {
        let coord_names: Vec<String> = coord_names.iter().map(|s| s.to_string()).collect();
        let n = coord_names.len();
        if n == 0 {
            return Err(CoreError::InvalidChart("dimension must be >= 1".into()));
        }
        if periodic.len() != n || domain_box.len() != n {
            return Err(CoreError::InvalidChart(
                "periodic flags and domain box must match the dimension".into(),
            ));
        }
        for (i, a) in coord_names.iter().enumerate() {
            for b in &coord_names[i + 1..] {
                if a == b {
                    return Err(CoreError::InvalidChart(format!("duplicate coordinate '{a}'")));
                }
            }
        }
        for (i, &(lo, hi)) in domain_box.iter().enumerate() {
            if lo >= hi {
                return Err(CoreError::InvalidChart(format!(
                    "empty domain interval for '{}'",
                    coord_names[i]
                )));
            }
            if periodic[i] && (lo != 0.0 || hi != 1.0) {
                return Err(CoreError::InvalidChart(format!(
                    "periodic coordinate '{}' must have domain [0, 1)",
                    coord_names[i]
                )));
            }
        }
        Ok(Arc::new(Chart {
            name: name.into(),
            coord_names,
            periodic: periodic.to_vec(),
            domain_box: domain_box.to_vec(),
        }))
    }

    /// Non-periodic chart over the given box.
    pub fn cartesian(name: &str, coords: &[&str], domain: &[(f64, f64)]) -> Result<Arc<Chart>> {
        let periodic = vec![false; coords.len()];
        Chart::new(name, coords, &periodic, domain)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.coord_names.len()
    }

    pub fn coord_names(&self) -> &[String] {
        &self.coord_names
    }

    pub fn coord_name(&self, i: usize) -> &str {
        &self.coord_names[i]
    }

    pub fn is_periodic(&self, i: usize) -> bool {
        self.periodic[i]
    }

    pub fn periodic_flags(&self) -> &[bool] {
        &self.periodic
    }

    pub fn domain_box(&self) -> &[(f64, f64)] {
        &self.domain_box
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.coord_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| CoreError::UnknownCoordinate { name: name.into() })
    }

    /// Reduce periodic coordinates of `point` into `[0, 1)`.
    pub fn reduce(&self, point: &mut [f64]) {
        for (i, x) in point.iter_mut().enumerate() {
            if self.periodic[i] {
                *x = x.rem_euclid(1.0);
            }
        }
    }

    /// Componentwise displacement `a - b`, with periodic components reduced
    /// into `[-1/2, 1/2)`.
    pub fn displacement(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(i, (&x, &y))| {
                let d = x - y;
                if self.periodic[i] {
                    d - (d + 0.5).floor()
                } else {
                    d
                }
            })
            .collect()
    }

    /// Euclidean distance with periodic wrapping.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.displacement(a, b).iter().map(|d| d * d).sum::<f64>().sqrt()
    }

    /// True if `point` lies in the domain box (periodic coordinates always do).
    pub fn contains(&self, point: &[f64]) -> bool {
        point.iter().enumerate().all(|(i, &x)| {
            self.periodic[i] || (x >= self.domain_box[i].0 && x <= self.domain_box[i].1)
        })
    }

    /// Sub-chart obtained by freezing the listed coordinates.
    pub fn slice(&self, fixed: &[usize]) -> Result<Arc<Chart>> {
        let keep: Vec<usize> = (0..self.dim()).filter(|i| !fixed.contains(i)).collect();
        if keep.is_empty() {
            return Err(CoreError::InvalidChart("slice removes every coordinate".into()));
        }
        let names: Vec<&str> = keep.iter().map(|&i| self.coord_names[i].as_str()).collect();
        let periodic: Vec<bool> = keep.iter().map(|&i| self.periodic[i]).collect();
        let domain: Vec<(f64, f64)> = keep.iter().map(|&i| self.domain_box[i]).collect();
        Chart::new(format!("{}-slice", self.name), &names, &periodic, &domain)
    }
}

/// Check that two objects live on the same chart.
pub fn same_chart(a: &Arc<Chart>, b: &Arc<Chart>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a == b {
        Ok(())
    } else {
        Err(CoreError::ChartMismatch {
            left: a.name().to_string(),
            right: b.name().to_string(),
        })
    }
}
