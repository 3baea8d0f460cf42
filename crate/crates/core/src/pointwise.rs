//! Linear algebra in the double space `V ⊕ V*` at a single point: the
//! indefinite pairing, isotropy, bi-corank, tangent/cotangent projections,
//! the induced leaf 2-form, Lagrangian / co-Lagrangian subspace tests and the
//! constant-coefficient Darboux normal form.

use crate::error::{CoreError, Result};
use crate::linalg;
use crate::tol;
use nalgebra::{DMatrix, DVector};

/// An element `(X, a)` of `V ⊕ V*`: tangent part `x`, cotangent part `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleVector {
    pub x: DVector<f64>,
    pub a: DVector<f64>,
}

impl DoubleVector {
    pub fn new(x: Vec<f64>, a: Vec<f64>) -> Result<DoubleVector> {
        if x.len() != a.len() {
            return Err(CoreError::DimensionMismatch { expected: x.len(), got: a.len() });
        }
        Ok(DoubleVector { x: DVector::from_vec(x), a: DVector::from_vec(a) })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Stacked 2n-vector `[x; a]`.
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.dim();
        let mut v = DVector::zeros(2 * n);
        v.rows_mut(0, n).copy_from(&self.x);
        v.rows_mut(n, n).copy_from(&self.a);
        v
    }

    pub fn norm(&self) -> f64 {
        (self.x.norm_squared() + self.a.norm_squared()).sqrt()
    }
}

/// The natural indefinite symmetric pairing
/// `<(X1,a1),(X2,a2)> = (a1(X2) + a2(X1)) / 2`.
pub fn pairing(u: &DoubleVector, v: &DoubleVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(CoreError::DimensionMismatch { expected: u.dim(), got: v.dim() });
    }
    Ok(0.5 * (u.a.dot(&v.x) + v.a.dot(&u.x)))
}

/// Bi-corank `(r, s)` of a rank-n isotropic subspace: `r = dim(D ∩ V)`,
/// `s = dim(D ∩ V*)`, with `n - r - s = 2m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiCorank {
    pub r: usize,
    pub s: usize,
    pub m: usize,
}

/// A basis of an n-dimensional subspace of `V ⊕ V*` at one point: the columns
/// of a 2n x n matrix, split into tangent rows `x_parts` and cotangent rows
/// `a_parts`.
#[derive(Debug, Clone)]
pub struct DiracPointFrame {
    point: Vec<f64>,
    x_parts: DMatrix<f64>,
    a_parts: DMatrix<f64>,
}

/// The leaf 2-form at a point, expressed on an orthonormal basis of the
/// characteristic space `proj_V D`.
#[derive(Debug, Clone)]
pub struct LeafTwoForm {
    /// Orthonormal basis of `proj_V D` (columns, n x (n-s)).
    pub basis: DMatrix<f64>,
    /// Antisymmetric matrix `omega(basis_i, basis_j)`.
    pub matrix: DMatrix<f64>,
}

impl LeafTwoForm {
    /// Value on two arbitrary characteristic vectors (coordinates of V).
    pub fn eval(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let cu = self.basis.transpose() * u;
        let cv = self.basis.transpose() * v;
        (cu.transpose() * &self.matrix * cv)[(0, 0)]
    }

    /// The form as an n x n coordinate matrix (extended by zero off the
    /// characteristic space).
    pub fn coordinate_matrix(&self) -> DMatrix<f64> {
        &self.basis * &self.matrix * self.basis.transpose()
    }

    pub fn rank(&self) -> usize {
        linalg::rank(&self.matrix, tol::RANK_REL)
    }
}

/// Verdict of the Lagrangian test for a subspace of a characteristic leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LagrangianVerdict {
    pub in_leaf: bool,
    pub isotropic: bool,
    pub lagrangian: bool,
}

/// Verdict of the co-Lagrangian test (conditions a), b), c) plus dimension).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoLagrangianVerdict {
    pub spanning: bool,
    pub trivial_kernel_intersection: bool,
    pub leaf_form_vanishes: bool,
    pub dimension_ok: bool,
}

impl CoLagrangianVerdict {
    pub fn co_lagrangian(&self) -> bool {
        self.spanning && self.trivial_kernel_intersection && self.leaf_form_vanishes && self.dimension_ok
    }
}

impl DiracPointFrame {
    /// Build a frame from n double vectors; they must be independent
    /// (rank n, singular-value threshold 1e-9 relative).
    pub fn new(point: Vec<f64>, columns: Vec<DoubleVector>) -> Result<DiracPointFrame> {
        let n = point.len();
        if columns.len() != n {
            return Err(CoreError::DimensionMismatch { expected: n, got: columns.len() });
        }
        let mut x_parts = DMatrix::zeros(n, n);
        let mut a_parts = DMatrix::zeros(n, n);
        for (j, col) in columns.iter().enumerate() {
            if col.dim() != n {
                return Err(CoreError::DimensionMismatch { expected: n, got: col.dim() });
            }
            x_parts.column_mut(j).copy_from(&col.x);
            a_parts.column_mut(j).copy_from(&col.a);
        }
        let frame = DiracPointFrame { point, x_parts, a_parts };
        let rank = linalg::rank(&frame.stacked(), tol::RANK_REL);
        if rank < n {
            return Err(CoreError::RankDeficient { rank, dim: n });
        }
        Ok(frame)
    }

    pub fn dim(&self) -> usize {
        self.point.len()
    }

    pub fn point(&self) -> &[f64] {
        &self.point
    }

    pub fn x_parts(&self) -> &DMatrix<f64> {
        &self.x_parts
    }

    pub fn a_parts(&self) -> &DMatrix<f64> {
        &self.a_parts
    }

    pub fn column(&self, j: usize) -> DoubleVector {
        DoubleVector {
            x: self.x_parts.column(j).into_owned(),
            a: self.a_parts.column(j).into_owned(),
        }
    }

    /// The 2n x n matrix `[X; A]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(2 * n, n);
        m.rows_mut(0, n).copy_from(&self.x_parts);
        m.rows_mut(n, n).copy_from(&self.a_parts);
        m
    }

    /// Recombine the columns by an invertible matrix; spans the same space.
    pub fn recombine(&self, c: &DMatrix<f64>) -> Result<DiracPointFrame> {
        DiracPointFrame::new_from_parts(self.point.clone(), &self.x_parts * c, &self.a_parts * c)
    }

    fn new_from_parts(point: Vec<f64>, x_parts: DMatrix<f64>, a_parts: DMatrix<f64>) -> Result<DiracPointFrame> {
        let n = point.len();
        let frame = DiracPointFrame { point, x_parts, a_parts };
        let rank = linalg::rank(&frame.stacked(), tol::RANK_REL);
        if rank < n {
            return Err(CoreError::RankDeficient { rank, dim: n });
        }
        Ok(frame)
    }

    /// Gram matrix of the pairing on the frame columns. The frame is
    /// isotropic iff every entry is below 1e-10.
    pub fn isotropy_gram(&self) -> DMatrix<f64> {
        0.5 * (self.a_parts.transpose() * &self.x_parts + self.x_parts.transpose() * &self.a_parts)
    }

    pub fn max_gram_entry(&self) -> f64 {
        self.isotropy_gram().iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    pub fn is_isotropic(&self) -> bool {
        self.max_gram_entry() <= tol::ISOTROPY
    }

    fn require_isotropic(&self) -> Result<()> {
        let max = self.max_gram_entry();
        if max > tol::ISOTROPY {
            Err(CoreError::NotIsotropic { max_pairing: max })
        } else {
            Ok(())
        }
    }

    /// `r = dim(D ∩ V)` and `s = dim(D ∩ V*)` by rank of the part matrices;
    /// requires isotropy and even `n - r - s`.
    pub fn bi_corank(&self) -> Result<BiCorank> {
        self.require_isotropic()?;
        let n = self.dim();
        // D ∩ V = {F c : A c = 0}; the frame is injective, so r = nullity(A).
        let r = n - linalg::rank(&self.a_parts, tol::RANK_REL);
        let s = n - linalg::rank(&self.x_parts, tol::RANK_REL);
        if !(n - r - s).is_multiple_of(2) {
            return Err(CoreError::ParityViolation { n, r, s });
        }
        Ok(BiCorank { r, s, m: (n - r - s) / 2 })
    }

    /// Orthonormal bases of `proj_V D` (dimension n - s) and `proj_{V*} D`
    /// (dimension n - r).
    pub fn projections(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        (
            linalg::column_space_basis(&self.x_parts, tol::RANK_REL),
            linalg::column_space_basis(&self.a_parts, tol::RANK_REL),
        )
    }

    /// Orthonormal basis of the kernel `D ∩ V` (tangent vectors paired with
    /// the zero covector).
    pub fn kernel_basis(&self) -> DMatrix<f64> {
        let null = linalg::null_space_basis(&self.a_parts, tol::RANK_REL);
        linalg::column_space_basis(&(&self.x_parts * null), tol::RANK_REL)
    }

    /// Orthonormal basis of `D ∩ V*` (covectors paired with the zero vector).
    pub fn cotangent_intersection_basis(&self) -> DMatrix<f64> {
        let null = linalg::null_space_basis(&self.x_parts, tol::RANK_REL);
        linalg::column_space_basis(&(&self.a_parts * null), tol::RANK_REL)
    }

    /// For a characteristic vector `v` (in `proj_V D`), some covector `a_v`
    /// with `(v, a_v)` in the frame span.
    pub fn covector_for(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let c = linalg::lstsq(&self.x_parts, v, tol::RANK_REL);
        let residual = (&self.x_parts * &c - v).norm();
        if residual > tol::MEMBERSHIP * v.norm().max(1.0) {
            return Err(CoreError::FormMismatch(format!(
                "vector is not in the characteristic space (residual {residual:.3e})"
            )));
        }
        Ok(&self.a_parts * c)
    }

    /// The induced leaf 2-form `omega(v, w) = a_v(w)` on an orthonormal basis
    /// of `proj_V D`. Well defined by isotropy; antisymmetric.
    pub fn leaf_two_form(&self) -> Result<LeafTwoForm> {
        self.require_isotropic()?;
        let (basis, _) = self.projections();
        let k = basis.ncols();
        let mut matrix = DMatrix::zeros(k, k);
        let covectors: Vec<DVector<f64>> = (0..k)
            .map(|i| self.covector_for(&basis.column(i).into_owned()))
            .collect::<Result<_>>()?;
        for i in 0..k {
            for j in 0..k {
                matrix[(i, j)] = covectors[i].dot(&basis.column(j).into_owned());
            }
        }
        // Exact antisymmetrization removes roundoff drift.
        let anti = 0.5 * (&matrix - matrix.transpose());
        Ok(LeafTwoForm { basis, matrix: anti })
    }

    /// Distance of an arbitrary double vector from the frame span, normalized
    /// by the vector's own magnitude (scale-free membership residual).
    pub fn membership_residual(&self, v: &DoubleVector) -> f64 {
        let b = v.stacked();
        let d = linalg::distance_to_span(&self.stacked(), &b, tol::RANK_REL);
        d / b.norm().max(1.0)
    }

    /// Lagrangian test for a subspace (columns of `subspace`) of the leaf:
    /// contained in `proj_V D`, leaf form vanishes on it, and the dimension
    /// equals `rank(omega)/2 + r`.
    pub fn lagrangian_check(&self, subspace: &DMatrix<f64>) -> Result<LagrangianVerdict> {
        let leaf = self.leaf_two_form()?;
        let bc = self.bi_corank()?;
        // Containment in the characteristic space.
        let char_basis = &leaf.basis;
        let mut in_leaf = true;
        for j in 0..subspace.ncols() {
            let col = subspace.column(j).into_owned();
            let d = linalg::distance_to_span(char_basis, &col, tol::RANK_REL);
            if d > tol::MEMBERSHIP * col.norm().max(1.0) {
                in_leaf = false;
            }
        }
        if !in_leaf {
            return Ok(LagrangianVerdict { in_leaf: false, isotropic: false, lagrangian: false });
        }
        let mut max_val: f64 = 0.0;
        for i in 0..subspace.ncols() {
            for j in 0..subspace.ncols() {
                let u = subspace.column(i).into_owned();
                let v = subspace.column(j).into_owned();
                max_val = max_val.max(leaf.eval(&u, &v).abs());
            }
        }
        let isotropic = max_val <= tol::ISOTROPY;
        let k = linalg::rank(subspace, tol::RANK_REL);
        let lagrangian = isotropic && k == leaf.rank() / 2 + bc.r;
        Ok(LagrangianVerdict { in_leaf, isotropic, lagrangian })
    }

    /// Co-Lagrangian test: a) the subspace plus the characteristic space
    /// spans V; b) it meets the kernel `D ∩ V` trivially; c) the leaf form
    /// vanishes on its intersection with the characteristic space; and the
    /// dimension equals `(n - r + s) / 2`.
    pub fn colagrangian_check(&self, subspace: &DMatrix<f64>) -> Result<CoLagrangianVerdict> {
        let n = self.dim();
        let bc = self.bi_corank()?;
        let leaf = self.leaf_two_form()?;
        let dim_l = linalg::rank(subspace, tol::RANK_REL);

        // a) spanning: [L | proj_V D] has full rank.
        let char_basis = &leaf.basis;
        let mut stacked = DMatrix::zeros(n, subspace.ncols() + char_basis.ncols());
        stacked.columns_mut(0, subspace.ncols()).copy_from(subspace);
        stacked.columns_mut(subspace.ncols(), char_basis.ncols()).copy_from(char_basis);
        let spanning = linalg::rank(&stacked, tol::RANK_REL) == n;

        // b) trivial intersection with the kernel.
        let kernel = self.kernel_basis();
        let trivial = if kernel.ncols() == 0 {
            true
        } else {
            linalg::intersection_basis(subspace, &kernel, tol::RANK_REL).ncols() == 0
        };

        // c) omega_S vanishes on L ∩ proj_V D.
        let inter = linalg::intersection_basis(subspace, char_basis, tol::RANK_REL);
        let mut max_val: f64 = 0.0;
        for i in 0..inter.ncols() {
            for j in 0..inter.ncols() {
                let u = inter.column(i).into_owned();
                let v = inter.column(j).into_owned();
                max_val = max_val.max(leaf.eval(&u, &v).abs());
            }
        }
        let leaf_form_vanishes = max_val <= tol::ISOTROPY;

        let dimension_ok = 2 * dim_l == n - bc.r + bc.s;
        Ok(CoLagrangianVerdict {
            spanning,
            trivial_kernel_intersection: trivial,
            leaf_form_vanishes,
            dimension_ok,
        })
    }

    /// Linear Darboux normal form by symplectic Gram-Schmidt: returns the
    /// bi-corank and an n x n change-of-basis matrix `C` (new coordinates
    /// `xi = C x`) after which the leaf form is `sum dx_{2i-1} ^ dx_{2i}`,
    /// the kernel is spanned by the y-directions and `D ∩ V*` by the
    /// z-codirections.
    pub fn linear_darboux(&self) -> Result<(BiCorank, DMatrix<f64>)> {
        self.require_isotropic()?;
        let n = self.dim();
        let bc = self.bi_corank()?;
        let leaf = self.leaf_two_form()?;
        let kernel = self.kernel_basis();

        // Symplectic pairs inside the characteristic space, working modulo
        // the kernel; greedy pivot on the largest |omega(u, v)|.
        let mut pool: Vec<DVector<f64>> = (0..leaf.basis.ncols())
            .map(|j| leaf.basis.column(j).into_owned())
            .collect();
        let mut pairs: Vec<(DVector<f64>, DVector<f64>)> = Vec::new();
        for _ in 0..bc.m {
            // Pick the pair (u, v) from the pool with the largest pairing.
            let mut best = (0usize, 0usize, 0.0f64);
            for i in 0..pool.len() {
                for j in 0..pool.len() {
                    let w = leaf.eval(&pool[i], &pool[j]).abs();
                    if w > best.2 {
                        best = (i, j, w);
                    }
                }
            }
            if best.2 <= tol::RANK_REL {
                return Err(CoreError::RankDeficient { rank: 2 * pairs.len(), dim: 2 * bc.m });
            }
            let (bi, bj, _) = best;
            let e = pool[bi].clone();
            let scale = leaf.eval(&e, &pool[bj]);
            let f = pool[bj].clone() / scale;
            // Remove the symplectic span of (e, f) from the rest of the pool.
            let mut next_pool = Vec::new();
            for (idx, w) in pool.iter().enumerate() {
                if idx == bi || idx == bj {
                    continue;
                }
                let wf = leaf.eval(w, &f);
                let we = leaf.eval(w, &e);
                next_pool.push(w - &e * wf + &f * we);
            }
            pool = next_pool;
            pairs.push((e, f));
        }

        // New tangent basis: (e1, f1, ..., em, fm, kernel, transversal).
        let mut basis_cols: Vec<DVector<f64>> = Vec::new();
        for (e, f) in &pairs {
            basis_cols.push(e.clone());
            basis_cols.push(f.clone());
        }
        for j in 0..kernel.ncols() {
            basis_cols.push(kernel.column(j).into_owned());
        }
        // Complete with directions transverse to the characteristic space,
        // dual to the D ∩ V* covectors.
        let cotangent = self.cotangent_intersection_basis();
        if cotangent.ncols() != bc.s {
            return Err(CoreError::RankDeficient { rank: cotangent.ncols(), dim: bc.s });
        }
        if bc.s > 0 {
            // Transversal directions t_i dual to the D ∩ V* covectors:
            // cotangent_j(t_i) = delta_ij. Those covectors annihilate
            // proj_V D, so the t_i are independent of the columns so far.
            let rows = cotangent.transpose();
            for i in 0..bc.s {
                let mut rhs = DVector::zeros(bc.s);
                rhs[i] = 1.0;
                basis_cols.push(linalg::lstsq(&rows, &rhs, tol::RANK_REL));
            }
        }
        let b = linalg::from_columns(n, &basis_cols);
        if linalg::rank(&b, tol::RANK_REL) != n {
            return Err(CoreError::RankDeficient { rank: linalg::rank(&b, tol::RANK_REL), dim: n });
        }
        let c = b.clone().try_inverse().ok_or(CoreError::RankDeficient { rank: 0, dim: n })?;
        Ok((bc, c))
    }

    /// Transform the frame into the coordinates `xi = C x`: vectors map by
    /// `C`, covectors by `B^T = C^{-T}` applied from the left.
    pub fn transformed(&self, c: &DMatrix<f64>) -> Result<DiracPointFrame> {
        let n = self.dim();
        let b = c.clone().try_inverse().ok_or(CoreError::RankDeficient { rank: 0, dim: n })?;
        DiracPointFrame::new_from_parts(
            self.point.clone(),
            c * &self.x_parts,
            b.transpose() * &self.a_parts,
        )
    }
}
