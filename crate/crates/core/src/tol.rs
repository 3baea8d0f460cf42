//! Numeric thresholds used by the verification pipeline. Values are pinned
//! here; scenario files may scale them through `tol_scale` but the defaults
//! are the contract.

/// Max |Gram entry| for a frame to count as isotropic.
pub const ISOTROPY: f64 = 1e-10;

/// Max normalized Courant-bracket residual for closedness.
pub const CLOSEDNESS: f64 = 1e-9;

/// Negative controls must fail with at least this residual.
pub const NEGATIVE_CONTROL_MIN: f64 = 0.05;

/// Least-squares membership tests ((X, dH) in the frame span, Casimirs, ...).
pub const MEMBERSHIP: f64 = 1e-9;

/// Relative singular-value threshold for all rank decisions.
pub const RANK_REL: f64 = 1e-9;

/// Smallest allowed wedge norm at declared-regular points.
pub const WEDGE_MIN: f64 = 1e-6;

/// Commutator / invariance residuals of integrable systems.
pub const SYSTEM_RESIDUAL: f64 = 1e-9;

/// Return-map accuracy for period-lattice rows and angle solves.
pub const RETURN_MAP: f64 = 1e-8;

/// Allowed drift of first integrals along flows.
pub const INTEGRAL_DRIFT: f64 = 1e-8;

/// Structure-preservation residual for torus generators (Courant/Lie).
pub const STRUCTURE_PRESERVATION: f64 = 1e-8;

/// Torus averaging must fix invariant tensors and be idempotent to this.
pub const AVERAGE_FIX: f64 = 1e-10;

/// Doubling the averaging grid must change results less than this.
pub const AVERAGE_GRID_CONV: f64 = 1e-8;

/// Isotropy of Liouville tori: |omega_S(X_i, X_j)|.
pub const TORUS_ISOTROPY: f64 = 1e-9;

/// dbeta restricted to a leaf.
pub const BETA_CLOSED: f64 = 1e-8;

/// Mineur admissibility: |d(alpha)|_leaf - omega_S|.
pub const MINEUR_ADMISSIBLE: f64 = 1e-8;

/// Path-integral action accuracy (oscillator closed form, Mineur match).
pub const ACTION_PATH: f64 = 1e-7;

/// Pendulum action vs the 1-D quadrature oracle.
pub const ACTION_PENDULUM: f64 = 1e-6;

/// Adaptive quadrature stops when a refinement changes the value less.
pub const QUADRATURE_CONV: f64 = 1e-10;

/// Path-independence of leaf path integrals.
pub const PATH_INDEPENDENCE: f64 = 1e-8;

/// Full / partial action-angle residuals (dominated by differencing error).
pub const AA_RESIDUAL: f64 = 1e-5;

/// Co-affine transition deviation |A' - (U A + c)|.
pub const COAFFINE: f64 = 1e-7;

/// SVD threshold (relative) for the action dependence rank.
pub const DEPENDENCE_RANK_SVD: f64 = 1e-7;

/// Constancy of action functions on a torus (std dev over sampled points).
pub const ACTION_ON_TORUS: f64 = 1e-8;

/// Expressions are "numerically zero" below this at all samples.
pub const NUMERIC_ZERO: f64 = 1e-10;

/// Sampled simplifier equality (relative).
pub const SIMPLIFY_EVAL: f64 = 1e-12;

/// Level-set membership |F(y) - F(base)|.
pub const LEVEL_MATCH: f64 = 1e-8;

/// Number of quasi-random samples for axiom checks and zero decisions.
pub const ZERO_TEST_SAMPLES: usize = 128;

/// Default number of Halton samples for field-level checks.
pub const DEFAULT_SAMPLES: usize = 128;

/// Default per-angle grid size for torus quadrature.
pub const DEFAULT_ANGLE_GRID: usize = 32;

/// Default finite-differencing step for action-angle assembly.
pub const AA_DIFF_STEP: f64 = 1e-4;

/// Default recurrence-search time budget.
pub const DEFAULT_T_MAX: f64 = 50.0;
