//! Small dense linear-algebra helpers shared by the pointwise and
//! field-level checks: rank decisions by singular values, least-squares
//! membership residuals, orthonormal bases, subspace intersections.

use nalgebra::{DMatrix, DVector};

/// Rank with a relative singular-value threshold (relative to the largest
/// singular value; a zero matrix has rank 0).
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let max = svd.singular_values.max();
    if max <= 0.0 {
        return 0;
    }
    svd.singular_values.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Smallest singular value of an r x c matrix with r <= c (the wedge-norm
/// proxy used for regularity checks).
pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let svd = m.clone().svd(false, false);
    svd.singular_values.min()
}

/// Orthonormal basis of the column space, with the given relative threshold.
pub fn column_space_basis(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    if m.ncols() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.as_ref().expect("left singular vectors");
    let max = svd.singular_values.max();
    let r = if max <= 0.0 {
        0
    } else {
        svd.singular_values.iter().filter(|&&s| s > rel_tol * max).count()
    };
    u.columns(0, r).into_owned()
}

/// Orthonormal basis of the null space of `m` (right singular vectors with
/// small singular values).
pub fn null_space_basis(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // Thin SVD only returns min(r, c) right singular vectors; pad with zero
    // rows so all n of them are available.
    let m = if m.nrows() < n {
        let mut padded = DMatrix::zeros(n, n);
        padded.rows_mut(0, m.nrows()).copy_from(m);
        padded
    } else {
        m.clone()
    };
    let svd = m.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("right singular vectors");
    let max = svd.singular_values.max();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for i in 0..n {
        let s = if i < svd.singular_values.len() {
            svd.singular_values[i]
        } else {
            0.0
        };
        if max <= 0.0 || s <= rel_tol * max {
            cols.push(v_t.row(i).transpose());
        }
    }
    from_columns(n, &cols)
}

/// Minimum-norm least-squares solution of `m x = b`.
pub fn lstsq(m: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    let svd = m.clone().svd(true, true);
    svd.solve(b, rel_tol * svd.singular_values.max().max(1e-300))
        .expect("svd solve")
}

/// Distance from `b` to the column space of `m`.
pub fn distance_to_span(m: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> f64 {
    if m.ncols() == 0 {
        return b.norm();
    }
    let x = lstsq(m, b, rel_tol);
    (m * x - b).norm()
}

/// Basis (as columns) of span(a) ∩ span(b): null vectors of [a | -b] mapped
/// through `a`.
pub fn intersection_basis(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(b.nrows(), n);
    if a.ncols() == 0 || b.ncols() == 0 {
        return DMatrix::zeros(n, 0);
    }
    let mut stacked = DMatrix::zeros(n, a.ncols() + b.ncols());
    stacked.columns_mut(0, a.ncols()).copy_from(a);
    let mut negb = b.clone();
    negb.neg_mut();
    stacked.columns_mut(a.ncols(), b.ncols()).copy_from(&negb);
    let null = null_space_basis(&stacked, rel_tol);
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for j in 0..null.ncols() {
        let coeffs = null.column(j).rows(0, a.ncols()).into_owned();
        let v = a * coeffs;
        if v.norm() > rel_tol {
            cols.push(v);
        }
    }
    let raw = from_columns(n, &cols);
    column_space_basis(&raw, rel_tol)
}

pub fn from_columns(nrows: usize, cols: &[DVector<f64>]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(nrows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.column_mut(j).copy_from(c);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn rank_thresholds() {
        let m = dmatrix![1.0, 0.0; 0.0, 1e-12];
        assert_eq!(rank(&m, 1e-9), 1);
        assert_eq!(rank(&m, 1e-15), 2);
    }

    #[test]
    fn null_space_of_projection() {
        let m = dmatrix![1.0, 0.0, 0.0];
        let ns = null_space_basis(&m, 1e-9);
        assert_eq!(ns.ncols(), 2);
        for j in 0..2 {
            assert!(ns.column(j)[0].abs() < 1e-12);
        }
    }

    #[test]
    fn distance_detects_membership() {
        let m = dmatrix![1.0, 0.0; 0.0, 1.0; 0.0, 0.0];
        let inside = DVector::from_vec(vec![0.3, -0.4, 0.0]);
        let outside = DVector::from_vec(vec![0.0, 0.0, 2.0]);
        assert!(distance_to_span(&m, &inside, 1e-9) < 1e-12);
        assert!((distance_to_span(&m, &outside, 1e-9) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn intersection_of_planes() {
        // span{e1, e2} ∩ span{e2, e3} = span{e2}
        let a = dmatrix![1.0, 0.0; 0.0, 1.0; 0.0, 0.0];
        let b = dmatrix![0.0, 0.0; 1.0, 0.0; 0.0, 1.0];
        let i = intersection_basis(&a, &b, 1e-9);
        assert_eq!(i.ncols(), 1);
        assert!(i.column(0)[0].abs() < 1e-9 && i.column(0)[2].abs() < 1e-9);
        assert!((i.column(0)[1].abs() - 1.0).abs() < 1e-9);
    }
}
