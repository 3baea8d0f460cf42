//! Small-dimension real lattice bases: incremental construction from found
//! period vectors, shortest-basis reduction (Lagrange for p = 2, LLL above)
//! and unimodular-equivalence tests.

use crate::error::{CoreError, Result};
use crate::tol;
use nalgebra::{DMatrix, DVector};

fn gram_schmidt(basis: &[DVector<f64>]) -> (Vec<DVector<f64>>, Vec<Vec<f64>>) {
    let k = basis.len();
    let mut star: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut mu = vec![vec![0.0; k]; k];
    for i in 0..k {
        let mut v = basis[i].clone();
        for j in 0..i {
            let denom = star[j].norm_squared();
            mu[i][j] = if denom > 0.0 { basis[i].dot(&star[j]) / denom } else { 0.0 };
            v -= &star[j] * mu[i][j];
        }
        star.push(v);
    }
    (star, mu)
}

/// LLL reduction (delta = 0.75) of a list of independent row vectors.
pub fn lll_reduce(mut basis: Vec<DVector<f64>>) -> Vec<DVector<f64>> {
    let delta = 0.75;
    let k = basis.len();
    if k <= 1 {
        return basis;
    }
    let mut i = 1usize;
    let mut guard = 0usize;
    while i < k {
        guard += 1;
        if guard > 10_000 {
            break;
        }
        let (star, mu) = gram_schmidt(&basis);
        // Size reduction of b_i against earlier vectors.
        for j in (0..i).rev() {
            let m = mu[i][j].round();
            if m != 0.0 {
                let bj = basis[j].clone();
                basis[i] -= bj * m;
            }
        }
        let (star2, mu2) = gram_schmidt(&basis);
        let lhs = star2[i].norm_squared();
        let rhs = (delta - mu2[i][i - 1] * mu2[i][i - 1]) * star2[i - 1].norm_squared();
        if lhs >= rhs {
            i += 1;
        } else {
            basis.swap(i, i - 1);
            i = i.max(2) - 1;
        }
        let _ = star;
    }
    basis
}

/// Lagrange (Gaussian) reduction of a rank-2 basis to the two shortest
/// vectors.
pub fn lagrange_reduce(mut a: DVector<f64>, mut b: DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    if a.norm_squared() > b.norm_squared() {
        std::mem::swap(&mut a, &mut b);
    }
    loop {
        let n = a.norm_squared();
        if n == 0.0 {
            return (a, b);
        }
        let m = (a.dot(&b) / n).round();
        let b_new = &b - &a * m;
        if b_new.norm_squared() >= b.norm_squared() - 1e-15 {
            return (a, b);
        }
        b = b_new;
        if a.norm_squared() > b.norm_squared() {
            std::mem::swap(&mut a, &mut b);
        }
    }
}

/// Reduce a full-rank basis to a short one (dimension-dispatched).
pub fn reduce_basis(rows: Vec<DVector<f64>>) -> Vec<DVector<f64>> {
    match rows.len() {
        0 | 1 => rows,
        2 => {
            let mut it = rows.into_iter();
            let (a, b) = lagrange_reduce(it.next().unwrap(), it.next().unwrap());
            vec![a, b]
        }
        _ => lll_reduce(rows),
    }
}

/// An incrementally built lattice: candidate period vectors get reduced
/// modulo the current basis; genuinely new directions extend it.
#[derive(Debug, Clone, Default)]
pub struct LatticeBuilder {
    basis: Vec<DVector<f64>>,
}

impl LatticeBuilder {
    pub fn new() -> LatticeBuilder {
        LatticeBuilder { basis: Vec::new() }
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[DVector<f64>] {
        &self.basis
    }

    /// Offer a lattice vector; returns true if it extended or shortened the
    /// basis. `scale` sets the resolution below which remainders are noise.
    pub fn offer(&mut self, v: DVector<f64>, scale: f64) -> bool {
        let mut w = v;
        // Reduce modulo the current basis by rounding the least-squares
        // representation.
        if !self.basis.is_empty() {
            let m = crate::linalg::from_columns(w.len(), &self.basis);
            let coeffs = crate::linalg::lstsq(&m, &w, tol::RANK_REL);
            for (j, c) in coeffs.iter().enumerate() {
                let r = c.round();
                if r != 0.0 {
                    let bj = self.basis[j].clone();
                    w -= bj * r;
                }
            }
        }
        if w.norm() <= scale {
            return false;
        }
        self.basis.push(w);
        self.basis = reduce_basis(std::mem::take(&mut self.basis));
        true
    }

    /// The reduced basis as a p x p matrix (rows = basis vectors) in a
    /// canonical representative: each row's first significant entry is
    /// positive, rows sort lexicographically descending, and the
    /// determinant is positive (all unimodular adjustments).
    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        let p = self.basis.len();
        if p == 0 {
            return Err(CoreError::LatticeRankDeficient);
        }
        let dim = self.basis[0].len();
        if p != dim {
            return Err(CoreError::LatticeRankDeficient);
        }
        let mut rows: Vec<DVector<f64>> = self.basis.clone();
        for r in rows.iter_mut() {
            if let Some(first) = r.iter().find(|v| v.abs() > 1e-9) {
                if *first < 0.0 {
                    r.neg_mut();
                }
            }
        }
        rows.sort_by(|a, b| {
            for (x, y) in b.iter().zip(a.iter()) {
                match x.total_cmp(y) {
                    std::cmp::Ordering::Equal => continue,
                    other => return other,
                }
            }
            std::cmp::Ordering::Equal
        });
        let mut m = DMatrix::zeros(p, p);
        for (i, b) in rows.iter().enumerate() {
            m.set_row(i, &b.transpose());
        }
        let det = m.determinant();
        if det.abs() < 1e-12 {
            return Err(CoreError::LatticeRankDeficient);
        }
        if det < 0.0 {
            // Negating one basis row preserves the lattice.
            let last = p - 1;
            let neg = -m.row(last);
            m.set_row(last, &neg);
        }
        Ok(m)
    }
}

/// The integer matrix `U` with `b = U a`, when one exists with
/// `|det U| = 1` (rows of `a` and `b` are lattice bases).
pub fn unimodular_transform(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let a_inv = a.clone().try_inverse()?;
    let u = b * a_inv;
    let mut rounded = u.clone();
    for v in rounded.iter_mut() {
        *v = v.round();
    }
    if (&u - &rounded).amax() > 1e-6 {
        return None;
    }
    if (rounded.determinant().abs() - 1.0).abs() > 1e-6 {
        return None;
    }
    Some(rounded)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &[f64]) -> DVector<f64> {
        DVector::from_vec(s.to_vec())
    }

    #[test]
    fn lagrange_finds_short_basis() {
        let (a, b) = lagrange_reduce(v(&[5.0, 8.0]), v(&[3.0, 5.0]));
        // Lattice Z^2 in disguise: |det| = 1.
        let det = a[0] * b[1] - a[1] * b[0];
        assert!((det.abs() - 1.0).abs() < 1e-12);
        assert!(a.norm() <= 2.0_f64.sqrt() + 1e-9);
    }

    #[test]
    fn builder_recovers_sqrt2_lattice() {
        // Lattice {(a, b - sqrt2 a)}: offer scattered members.
        let s2 = 2.0f64.sqrt();
        let mut builder = LatticeBuilder::new();
        for (a, b) in [(3.0, 5.0), (1.0, 2.0), (2.0, 1.0), (5.0, 7.0)] {
            builder.offer(v(&[a, b - s2 * a]), 1e-9);
        }
        assert_eq!(builder.rank(), 2);
        let m = builder.matrix().unwrap();
        let expected =
            DMatrix::from_row_slice(2, 2, &[1.0, -s2, 0.0, 1.0]);
        let u = unimodular_transform(&expected, &m).expect("equivalent bases");
        assert!((u.determinant().abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn duplicate_offers_do_not_extend() {
        let mut builder = LatticeBuilder::new();
        assert!(builder.offer(v(&[2.0, 0.0]), 1e-9));
        assert!(!builder.offer(v(&[4.0, 0.0]), 1e-9));
        assert!(!builder.offer(v(&[-2.0, 0.0]), 1e-9));
        assert!(builder.offer(v(&[0.0, 3.0]), 1e-9));
        assert_eq!(builder.rank(), 2);
    }

    #[test]
    fn matrix_is_positively_oriented() {
        let mut builder = LatticeBuilder::new();
        builder.offer(v(&[0.0, 1.0]), 1e-9);
        builder.offer(v(&[1.0, 0.0]), 1e-9);
        let m = builder.matrix().unwrap();
        assert!(m.determinant() > 0.0);
    }

    #[test]
    fn lll_reduces_three_dims() {
        let rows = vec![v(&[1.0, 1.0, 1.0]), v(&[-1.0, 0.0, 2.0]), v(&[3.0, 5.0, 6.0])];
        let red = lll_reduce(rows);
        let m = DMatrix::from_fn(3, 3, |i, j| red[i][j]);
        assert!(m.determinant().abs() > 1e-9);
        // Shortest vector of this classic example has norm 1.
        assert!(red[0].norm() <= 1.0 + 1e-9);
    }

    #[test]
    fn unimodular_transform_rejects_rescaling() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        assert!(unimodular_transform(&a, &b).is_none());
    }
}
