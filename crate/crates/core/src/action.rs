//! Action functions and normal-form verification over a family of Liouville
//! tori: the generator 1-forms `beta_k = sum_i b_i dH_i`, action values by
//! leaf path integrals and by loop integrals of a primitive 1-form, torus
//! isotropy, full and partial action-angle residuals, co-affine transitions
//! and the action dependence rank.
//!
//! Sign conventions: Hamiltonian pairs satisfy `dH = i_X omega`, angle
//! generators are the lattice-row combinations `d_theta_k = sum_i L_ki X_i`,
//! and with these orientations the leaf form decomposes as
//! `omega_S = sum_i d_theta_i ^ dA_i` (plus transverse terms in the partial
//! case).

use crate::dirac::DiracField;
use crate::error::{CoreError, Result};
use crate::expr::Expression;
use crate::fields::KForm;
use crate::flow::{FlowEngine, SystemFlow};
use crate::linalg;
use crate::quadrature;
use crate::system::IntegrableSystem;
use crate::tol;
use crate::torus::{angle_coordinates, find_period_lattice, LatticeSearch, TorusChart};
use nalgebra::{DMatrix, DVector};

/// A coordinate disk transversal to the torus fibration: the listed chart
/// coordinates vary over a tensor grid, all others stay at the seed values.
#[derive(Debug, Clone)]
pub struct TransversalDisk {
    pub coords: Vec<usize>,
    pub grids: Vec<Vec<f64>>,
}

impl TransversalDisk {
    pub fn node_count(&self) -> usize {
        self.grids.iter().map(|g| g.len()).product()
    }

    pub fn node_values(&self, flat: usize) -> Vec<f64> {
        let mut rem = flat;
        let mut out = vec![0.0; self.coords.len()];
        for a in (0..self.coords.len()).rev() {
            let len = self.grids[a].len();
            out[a] = self.grids[a][rem % len];
            rem /= len;
        }
        out
    }

    pub fn node_index(&self, flat: usize) -> Vec<usize> {
        let mut rem = flat;
        let mut out = vec![0usize; self.coords.len()];
        for a in (0..self.coords.len()).rev() {
            let len = self.grids[a].len();
            out[a] = rem % len;
            rem /= len;
        }
        out
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let mut flat = 0usize;
        for (a, &i) in idx.iter().enumerate() {
            flat = flat * self.grids[a].len() + i;
        }
        flat
    }

    pub fn point(&self, seed: &[f64], values: &[f64]) -> Vec<f64> {
        let mut p = seed.to_vec();
        for (&c, &v) in self.coords.iter().zip(values) {
            p[c] = v;
        }
        p
    }
}

/// Which hypothesis of the action-function theorem a scenario declares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    /// dim(span(X) ∩ ker omega_S) is constant near the level set.
    ConstantIntersection,
    /// The characteristic foliation is regular (constant leaf dimension).
    RegularFoliation,
}

/// Inputs for building an action family.
pub struct ActionSetup {
    pub engine: FlowEngine,
    pub sys: IntegrableSystem,
    pub dirac: DiracField,
    pub disk: TransversalDisk,
    /// Point the transversal disk passes through (disk coordinates are
    /// overridden by the grid values; the rest anchor the family's slice).
    pub seed: Vec<f64>,
    pub hypothesis: Hypothesis,
    pub search: LatticeSearch,
}

/// One torus of the family.
#[derive(Debug, Clone)]
pub struct FamilyNode {
    pub disk_values: Vec<f64>,
    pub base_point: Vec<f64>,
    pub chart: TorusChart,
    /// Action values `A_1..A_p` relative to the reference torus of the leaf.
    pub actions: Vec<f64>,
}

/// Smooth interpolant of the period lattice over the level coordinates,
/// sampled on Chebyshev-Lobatto points along every axis where it varies.
struct LatticeField {
    /// Per axis: level abscissae of the interpolation nodes (len 1 when the
    /// lattice is constant along the axis).
    axis_levels: Vec<Vec<f64>>,
    /// Lattice matrices on the tensor grid (row-major, last axis fastest).
    values: Vec<DMatrix<f64>>,
}

impl LatticeField {
    fn at(&self, axis_level_values: &[f64]) -> DMatrix<f64> {
        let p = self.values[0].nrows();
        let mut out = DMatrix::zeros(p, p);
        for r in 0..p {
            for c in 0..p {
                out[(r, c)] = self.interp_entry(axis_level_values, 0, &mut Vec::new(), r, c);
            }
        }
        out
    }

    fn flat(&self, idx: &[usize]) -> usize {
        let mut f = 0usize;
        for (a, &i) in idx.iter().enumerate() {
            f = f * self.axis_levels[a].len() + i;
        }
        f
    }

    fn interp_entry(
        &self,
        levels: &[f64],
        axis: usize,
        prefix: &mut Vec<usize>,
        r: usize,
        c: usize,
    ) -> f64 {
        if axis == self.axis_levels.len() {
            return self.values[self.flat(prefix)][(r, c)];
        }
        let xs = &self.axis_levels[axis];
        if xs.len() == 1 {
            prefix.push(0);
            let v = self.interp_entry(levels, axis + 1, prefix, r, c);
            prefix.pop();
            return v;
        }
        let mut ys = Vec::with_capacity(xs.len());
        for i in 0..xs.len() {
            prefix.push(i);
            ys.push(self.interp_entry(levels, axis + 1, prefix, r, c));
            prefix.pop();
        }
        interp_local(xs, &ys, levels[axis])
    }
}

/// A verified family of Liouville tori over the transversal disk, with the
/// machinery to evaluate action and angle fields anywhere nearby.
pub struct ActionFamily {
    setup: ActionSetup,
    flow: SystemFlow,
    nodes: Vec<FamilyNode>,
    /// Per disk axis: does its coordinate direction lie in the leaves?
    in_leaf_axis: Vec<bool>,
    /// Per disk axis: the index of the first integral that varies along it.
    level_of_axis: Vec<usize>,
    /// Level values per axis (sorted consistently with the grids).
    level_grids: Vec<Vec<f64>>,
    /// Whether the lattice is constant across the family.
    lattice_constant: bool,
    /// Interpolated lattice over the levels, for varying families.
    lattice_field: Option<LatticeField>,
    /// Intersection rank d of the partial normal form, when constant.
    intersection_rank: usize,
}

impl ActionFamily {
    /// Find all tori, verify the declared hypothesis, and compute the
    /// action table by leaf path integrals.
    pub fn build(setup: ActionSetup) -> Result<ActionFamily> {
        if setup.sys.hamiltonians().is_none() {
            return Err(CoreError::Scenario(
                "action functions need bound Hamiltonians".into(),
            ));
        }
        if setup.disk.coords.len() != setup.sys.q() {
            return Err(CoreError::Scenario(format!(
                "transversal disk must vary exactly q = {} coordinates",
                setup.sys.q()
            )));
        }
        let flow = SystemFlow::new(setup.sys.chart(), setup.sys.fields());
        let mut nodes = Vec::with_capacity(setup.disk.node_count());
        for flat in 0..setup.disk.node_count() {
            let values = setup.disk.node_values(flat);
            let base = setup.disk.point(&family_seed(&setup), &values);
            let chart = find_period_lattice(&setup.engine, &setup.sys, &base, &setup.search)?;
            nodes.push(FamilyNode {
                disk_values: values,
                base_point: base,
                chart,
                actions: vec![0.0; setup.sys.p()],
            });
        }

        // Lattice constancy across the family.
        let l0 = nodes[0].chart.lattice().clone();
        let lattice_constant = nodes
            .iter()
            .all(|nd| (nd.chart.lattice() - &l0).amax() <= 1e-9);

        // Classify disk axes as in-leaf or leaf-crossing at the base points.
        let p0 = &nodes[0].base_point;
        let frame = setup.dirac.frame_at(p0)?;
        let (leaf_basis, _) = frame.projections();
        let n = setup.sys.chart().dim();
        let in_leaf_axis: Vec<bool> = setup
            .disk
            .coords
            .iter()
            .map(|&c| {
                let mut e = DVector::zeros(n);
                e[c] = 1.0;
                linalg::distance_to_span(&leaf_basis, &e, tol::RANK_REL) <= tol::MEMBERSHIP
            })
            .collect();

        // Hypothesis verification and the partial-AA intersection rank.
        let intersection_rank = verify_hypothesis(&setup, &nodes)?;

        // Associate each disk axis with the first integral varying along it
        // and record the level values. Levels must be axis-aligned for the
        // family interpolants to make sense.
        let mut level_of_axis = vec![usize::MAX; setup.disk.coords.len()];
        let mut level_grids: Vec<Vec<f64>> = Vec::new();
        for (a, grid) in setup.disk.grids.iter().enumerate() {
            let mut best = (0usize, 0.0f64);
            for (li, f) in setup.sys.integrals().iter().enumerate() {
                // Variation of F_li along axis a across the grid, other axes
                // at the seed slot.
                let lo = setup.disk.point(&family_seed(&setup), &{
                    let mut v = nodes[0].disk_values.clone();
                    v[a] = grid[0];
                    v
                });
                let hi = setup.disk.point(&family_seed(&setup), &{
                    let mut v = nodes[0].disk_values.clone();
                    v[a] = grid[grid.len() - 1];
                    v
                });
                let delta = (f.eval(&hi)? - f.eval(&lo)?).abs();
                if delta > best.1 {
                    best = (li, delta);
                }
            }
            if best.1 <= 1e-12 {
                return Err(CoreError::Scenario(format!(
                    "no first integral varies along disk axis {a}"
                )));
            }
            level_of_axis[a] = best.0;
            let mut levels = Vec::with_capacity(grid.len());
            for &g in grid {
                let pt = setup.disk.point(&family_seed(&setup), &{
                    let mut v = nodes[0].disk_values.clone();
                    v[a] = g;
                    v
                });
                levels.push(setup.sys.integrals()[best.0].eval(&pt)?);
            }
            level_grids.push(levels);
        }

        // For families with level-dependent lattices, sample the lattice on
        // Chebyshev-Lobatto points along every varying axis and interpolate;
        // all downstream quadratures then see a smooth, cheap b(levels).
        let lattice_field = if lattice_constant {
            None
        } else {
            let q = setup.disk.coords.len();
            // Which axes does the lattice vary along?
            let varies: Vec<bool> = (0..q)
                .map(|a| {
                    let grid = &setup.disk.grids[a];
                    (1..grid.len()).any(|i| {
                        let mut idx0 = setup.disk.node_index(0);
                        idx0[a] = 0;
                        let mut idx1 = idx0.clone();
                        idx1[a] = i;
                        let l0 = nodes[setup.disk.flat_index(&idx0)].chart.lattice();
                        let l1 = nodes[setup.disk.flat_index(&idx1)].chart.lattice();
                        (l0 - l1).amax() > 1e-9
                    })
                })
                .collect();
            let cheb = 33usize;
            let axis_points: Vec<Vec<f64>> = (0..q)
                .map(|a| {
                    let grid = &setup.disk.grids[a];
                    let (lo, hi) = (grid[0], grid[grid.len() - 1]);
                    if varies[a] {
                        (0..cheb)
                            .map(|j| {
                                let t = (std::f64::consts::PI * j as f64 / (cheb - 1) as f64).cos();
                                0.5 * (lo + hi) - 0.5 * (hi - lo) * t
                            })
                            .collect()
                    } else {
                        vec![grid[grid.len() / 2]]
                    }
                })
                .collect();
            // Tensor sweep over the sample points.
            let sizes: Vec<usize> = axis_points.iter().map(|v| v.len()).collect();
            let total: usize = sizes.iter().product();
            let mut values = Vec::with_capacity(total);
            let mut axis_levels: Vec<Vec<f64>> = vec![Vec::new(); q];
            for flat in 0..total {
                let mut rem = flat;
                let mut idx = vec![0usize; q];
                for a in (0..q).rev() {
                    idx[a] = rem % sizes[a];
                    rem /= sizes[a];
                }
                let disk_values: Vec<f64> =
                    (0..q).map(|a| axis_points[a][idx[a]]).collect();
                let base = setup.disk.point(&family_seed(&setup), &disk_values);
                let tc = find_period_lattice(&setup.engine, &setup.sys, &base, &setup.search)?;
                values.push(tc.lattice().clone());
            }
            for a in 0..q {
                for &s in &axis_points[a] {
                    let mut dv = setup.disk.node_values(0);
                    dv[a] = s;
                    let pt = setup.disk.point(&family_seed(&setup), &dv);
                    axis_levels[a].push(setup.sys.integrals()[level_of_axis[a]].eval(&pt)?);
                }
            }
            Some(LatticeField { axis_levels, values })
        };

        let mut family = ActionFamily {
            setup,
            flow,
            nodes,
            in_leaf_axis,
            level_of_axis,
            level_grids,
            lattice_constant,
            lattice_field,
            intersection_rank,
        };
        family.compute_action_table()?;
        Ok(family)
    }

    pub fn nodes(&self) -> &[FamilyNode] {
        &self.nodes
    }

    pub fn sys(&self) -> &IntegrableSystem {
        &self.setup.sys
    }

    pub fn dirac(&self) -> &DiracField {
        &self.setup.dirac
    }

    pub fn disk(&self) -> &TransversalDisk {
        &self.setup.disk
    }

    pub fn engine(&self) -> &FlowEngine {
        &self.setup.engine
    }

    pub fn intersection_rank(&self) -> usize {
        self.intersection_rank
    }

    pub fn level_of_axis(&self) -> &[usize] {
        &self.level_of_axis
    }

    /// Reference node: all in-leaf axes at their first grid slot.
    fn reference_index_for(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter()
            .enumerate()
            .map(|(a, &i)| if self.in_leaf_axis[a] { 0 } else { i })
            .collect()
    }

    /// The lattice at a chart point: the base lattice for constant families,
    /// the Chebyshev interpolant of the level coordinates otherwise.
    fn lattice_rows_at_point(&self, point: &[f64]) -> Result<DMatrix<f64>> {
        if self.lattice_constant {
            return Ok(self.nodes[0].chart.lattice().clone());
        }
        let levels: Vec<f64> = self
            .setup
            .sys
            .integrals()
            .iter()
            .map(|f| f.eval(point))
            .collect::<Result<_>>()?;
        Ok(self.lattice_from_levels(&levels))
    }

    fn lattice_from_levels(&self, levels: &[f64]) -> DMatrix<f64> {
        match &self.lattice_field {
            None => self.nodes[0].chart.lattice().clone(),
            Some(field) => {
                let per_axis: Vec<f64> = self
                    .level_of_axis
                    .iter()
                    .map(|&li| levels[li])
                    .collect();
                field.at(&per_axis)
            }
        }
    }

    /// Integrand of `beta_k` against the coordinate direction `coord` at a
    /// disk point with the given values: `sum_i b_i dH_i(e_coord)`.
    fn beta_against_coordinate(
        &self,
        generator_rows: &DMatrix<f64>,
        k: usize,
        coord: usize,
        point: &[f64],
    ) -> Result<f64> {
        let hams = self.setup.sys.hamiltonians().expect("bound");
        let mut acc = 0.0;
        for (i, h) in hams.iter().enumerate() {
            let b = generator_rows[(k, i)];
            if b != 0.0 {
                acc += b * h.diff_index(coord).eval(point)?;
            }
        }
        Ok(acc)
    }

    /// Action values at every node by composite in-leaf path integrals from
    /// the leaf reference node, in fixed axis order.
    fn compute_action_table(&mut self) -> Result<()> {
        for flat in 0..self.nodes.len() {
            let idx = self.setup.disk.node_index(flat);
            let ref_idx = self.reference_index_for(&idx);
            let ref_values = self.setup.disk.node_values(self.setup.disk.flat_index(&ref_idx));
            let target_values = self.nodes[flat].disk_values.clone();
            let actions =
                self.disk_leg_integrals(&ref_values, &target_values, None)?;
            self.nodes[flat].actions = actions;
        }
        Ok(())
    }

    /// Integrals of every `beta_k` along the in-leaf coordinate legs from
    /// `from_values` to `to_values` (axis by axis, fixed order). An optional
    /// unimodular recombination premultiplies the generator rows.
    fn disk_leg_integrals(
        &self,
        from_values: &[f64],
        to_values: &[f64],
        recombination: Option<&DMatrix<f64>>,
    ) -> Result<Vec<f64>> {
        let p = self.setup.sys.p();
        let mut actions = vec![0.0; p];
        let mut current = from_values.to_vec();
        for a in 0..self.setup.disk.coords.len() {
            if !self.in_leaf_axis[a] || current[a] == to_values[a] {
                current[a] = to_values[a];
                continue;
            }
            let coord = self.setup.disk.coords[a];
            let values_snapshot = current.clone();
            for (k, action) in actions.iter_mut().enumerate() {
                *action += quadrature::integrate_adaptive(current[a], to_values[a], |ts| {
                    ts.iter()
                        .map(|&s| {
                            let mut v = values_snapshot.clone();
                            v[a] = s;
                            let pt = self.setup.disk.point(&family_seed(&self.setup), &v);
                            let rows = match recombination {
                                None => self.lattice_rows_at_point(&pt)?,
                                Some(u) => u * self.lattice_rows_at_point(&pt)?,
                            };
                            self.beta_against_coordinate(&rows, k, coord, &pt)
                        })
                        .collect()
                })?;
            }
            current[a] = to_values[a];
        }
        Ok(actions)
    }

    /// The symbolic 1-form `beta_k` of one torus (its `b_i` are constants).
    pub fn beta_form(&self, node: usize, k: usize) -> Result<KForm> {
        let chart = self.setup.sys.chart().clone();
        let hams = self.setup.sys.hamiltonians().expect("bound");
        let rows = self.nodes[node].chart.lattice();
        let mut beta = KForm::zero(&chart, 1);
        for (i, h) in hams.iter().enumerate() {
            let b = rows[(k, i)];
            if b != 0.0 {
                beta = beta.add(&KForm::differential(h).scale(b))?;
            }
        }
        Ok(beta)
    }

    /// Worst |d beta| against leaf-tangent pairs over the family: the
    /// transverse variation of the `b_i` enters through grid differencing.
    pub fn beta_leaf_closedness(&self, k: usize) -> Result<f64> {
        let chart = self.setup.sys.chart().clone();
        let n = chart.dim();
        let hams = self.setup.sys.hamiltonians().expect("bound");
        let p = self.setup.sys.p();
        let mut worst = 0.0f64;
        for flat in 0..self.nodes.len() {
            let idx = self.setup.disk.node_index(flat);
            // d(b_i) by central differences over the disk grid.
            let mut db = vec![vec![0.0; n]; p]; // db[i][coord]
            let mut interior = true;
            for a in 0..self.setup.disk.coords.len() {
                let grid = &self.setup.disk.grids[a];
                if idx[a] == 0 || idx[a] + 1 >= grid.len() {
                    interior = false;
                    break;
                }
                let mut up = idx.clone();
                up[a] += 1;
                let mut dn = idx.clone();
                dn[a] -= 1;
                let lu = self.nodes[self.setup.disk.flat_index(&up)].chart.lattice();
                let ld = self.nodes[self.setup.disk.flat_index(&dn)].chart.lattice();
                let h = grid[idx[a] + 1] - grid[idx[a] - 1];
                for i in 0..p {
                    db[i][self.setup.disk.coords[a]] = (lu[(k, i)] - ld[(k, i)]) / h;
                }
            }
            if !interior {
                continue;
            }
            let pt = &self.nodes[flat].base_point;
            let frame = self.setup.dirac.frame_at(pt)?;
            let (leaf_basis, _) = frame.projections();
            // d beta = sum_i db_i ^ dH_i on leaf pairs.
            let mut dh_vals = Vec::with_capacity(p);
            for h in hams {
                dh_vals.push(KForm::differential(h).eval_covector(pt)?);
            }
            for u_i in 0..leaf_basis.ncols() {
                for v_i in (u_i + 1)..leaf_basis.ncols() {
                    let u = leaf_basis.column(u_i);
                    let v = leaf_basis.column(v_i);
                    let mut val = 0.0;
                    for i in 0..p {
                        let dbi_u: f64 = (0..n).map(|c| db[i][c] * u[c]).sum();
                        let dbi_v: f64 = (0..n).map(|c| db[i][c] * v[c]).sum();
                        let dhi_u = dh_vals[i].dot(&u.into_owned());
                        let dhi_v = dh_vals[i].dot(&v.into_owned());
                        val += dbi_u * dhi_v - dbi_v * dhi_u;
                    }
                    worst = worst.max(val.abs());
                }
            }
        }
        Ok(worst)
    }

    /// The disk point whose torus carries the given level values: seeded by
    /// inverse interpolation on the level grids, polished by Newton on
    /// `F(D(s)) = levels`.
    pub fn disk_point_for_levels(&self, levels: &[f64]) -> Result<Vec<f64>> {
        let q = self.setup.disk.coords.len();
        let mut s = vec![0.0; q];
        for (a, slot) in s.iter_mut().enumerate() {
            let li = self.level_of_axis[a];
            *slot = interp_local(&self.level_grids[a], &self.setup.disk.grids[a], levels[li]);
        }
        // Newton polish: solve F_j(D(s)) = levels_j for the q disk values.
        let integrals = self.setup.sys.integrals();
        for _ in 0..30 {
            let pt = self.setup.disk.point(&family_seed(&self.setup), &s);
            let mut resid = DVector::zeros(q);
            for (j, f) in integrals.iter().enumerate() {
                resid[j] = f.eval(&pt)? - levels[j];
            }
            if resid.amax() <= 1e-12 {
                return Ok(pt);
            }
            let mut jac = DMatrix::zeros(q, q);
            for (j, f) in integrals.iter().enumerate() {
                for (a, &c) in self.setup.disk.coords.iter().enumerate() {
                    jac[(j, a)] = f.diff_index(c).eval(&pt)?;
                }
            }
            let delta = linalg::lstsq(&jac, &(-&resid), tol::RANK_REL);
            if !delta.iter().all(|v| v.is_finite()) {
                break;
            }
            for (a, d) in delta.iter().enumerate() {
                s[a] += d;
            }
        }
        Err(CoreError::NewtonDiverged("disk anchor solve failed".into()))
    }

    /// Tensor-product local interpolation of a per-node quantity in level
    /// space.
    fn interp_node_quantity(&self, levels: &[f64], get: &dyn Fn(&FamilyNode) -> f64) -> f64 {
        // Recursive dimension reduction: interpolate along axis 0 of values
        // interpolated over the remaining axes.
        fn rec(
            family: &ActionFamily,
            axis: usize,
            idx_prefix: &mut Vec<usize>,
            levels: &[f64],
            get: &dyn Fn(&FamilyNode) -> f64,
        ) -> f64 {
            let grids = &family.setup.disk.grids;
            if axis == grids.len() {
                let flat = family.setup.disk.flat_index(idx_prefix);
                return get(&family.nodes[flat]);
            }
            let li = family.level_of_axis[axis];
            let xs = &family.level_grids[axis];
            let mut ys = Vec::with_capacity(xs.len());
            for i in 0..xs.len() {
                idx_prefix.push(i);
                ys.push(rec(family, axis + 1, idx_prefix, levels, get));
                idx_prefix.pop();
            }
            interp_local(xs, &ys, levels[li])
        }
        let mut prefix = Vec::new();
        rec(self, 0, &mut prefix, levels, get)
    }

    /// Action field `A_k(y)`: interpolated over the level grid, plus nothing
    /// further (actions are constant on tori).
    pub fn action_at(&self, y: &[f64], k: usize) -> Result<f64> {
        let levels = self.levels_of(y)?;
        Ok(self.interp_node_quantity(&levels, &|nd| nd.actions[k]))
    }

    fn levels_of(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.setup.sys.integrals().iter().map(|f| f.eval(y)).collect()
    }

    /// Starting disk values for a leaf path: in-leaf axes at their reference
    /// slot, leaf-crossing axes pinned to the target.
    fn leaf_reference_values(&self, target: &[f64]) -> Vec<f64> {
        target
            .iter()
            .enumerate()
            .map(|(a, &v)| if self.in_leaf_axis[a] { self.setup.disk.grids[a][0] } else { v })
            .collect()
    }

    /// Full action evaluation by a fresh path integral (reference
    /// implementation; `action_at` interpolates the precomputed table).
    pub fn action_by_path_integral(&self, k: usize, y: &[f64]) -> Result<f64> {
        let levels = self.levels_of(y)?;
        let anchor = self.disk_point_for_levels(&levels)?;
        // Leg 1: in-leaf disk legs from the leaf reference to the anchor.
        let anchor_values: Vec<f64> =
            self.setup.disk.coords.iter().map(|&c| anchor[c]).collect();
        let start = self.leaf_reference_values(&anchor_values);
        let total = self.disk_leg_integrals(&start, &anchor_values, None)?[k];
        // Leg 2: torus flow from the anchor to y.
        let rows = self.lattice_from_levels(&levels);
        let tc = TorusChart_from(&anchor, rows, &levels)?;
        let theta = angle_coordinates(&self.setup.engine, &self.setup.sys, &tc, y)?;
        Ok(total + self.torus_leg(&tc, k, &anchor, &theta)?)
    }

    /// Integral of `beta_k` along the joint flow from `from` to angles
    /// `theta` on the torus `tc`.
    fn torus_leg(&self, tc: &TorusChart, k: usize, from: &[f64], theta: &[f64]) -> Result<f64> {
        let t = tc.time_for_angles(theta);
        if t.iter().all(|v| v.abs() < 1e-15) {
            return Ok(0.0);
        }
        let hams = self.setup.sys.hamiltonians().expect("bound");
        let b_row: Vec<f64> = tc.lattice().row(k).iter().copied().collect();
        // beta_k(Z_t)(x) with Z_t = sum_j t_j X_j.
        let fields = self.setup.sys.fields();
        let chart = self.setup.sys.chart().clone();
        let mut acc = Expression::zero(&chart);
        for (i, h) in hams.iter().enumerate() {
            if b_row[i] == 0.0 {
                continue;
            }
            for (j, f) in fields.iter().enumerate() {
                if t[j] == 0.0 {
                    continue;
                }
                acc = acc.add(&f.apply(h)?.scale(b_row[i] * t[j]));
            }
        }
        let integrand = acc.simplify();
        quadrature::integrate_adaptive(0.0, 1.0, |ts| {
            let mut vals = Vec::with_capacity(ts.len());
            self.flow.flow_visiting(&self.setup.engine, &t, from, ts, |_, state| {
                vals.push(integrand.eval(state));
            })?;
            vals.into_iter().collect()
        })
    }

    /// Two independent leaf paths to the same point must integrate equally:
    /// the variant path appends one full generator loop on the target torus
    /// and, when the leaf has several transverse axes, walks them in
    /// reversed order.
    pub fn verify_path_independence(&self, k: usize, y: &[f64]) -> Result<f64> {
        let base_val = self.action_by_path_integral(k, y)?;
        let levels = self.levels_of(y)?;
        let anchor = self.disk_point_for_levels(&levels)?;
        let rows = self.lattice_from_levels(&levels);
        let tc = TorusChart_from(&anchor, rows, &levels)?;
        let mut theta = angle_coordinates(&self.setup.engine, &self.setup.sys, &tc, y)?;
        // Same endpoint, one extra full loop along generator k.
        theta[k] += 1.0;
        let anchor_values: Vec<f64> =
            self.setup.disk.coords.iter().map(|&c| anchor[c]).collect();
        let start = self.leaf_reference_values(&anchor_values);
        let mut looped = self.disk_leg_integrals_reversed(&start, &anchor_values)?[k];
        looped += self.torus_leg(&tc, k, &anchor, &theta)?;
        Ok((looped - base_val).abs())
    }

    /// `disk_leg_integrals` with the axis order reversed (an honestly
    /// different leaf path to the same endpoint).
    fn disk_leg_integrals_reversed(
        &self,
        from_values: &[f64],
        to_values: &[f64],
    ) -> Result<Vec<f64>> {
        let p = self.setup.sys.p();
        let mut actions = vec![0.0; p];
        let mut current = from_values.to_vec();
        for a in (0..self.setup.disk.coords.len()).rev() {
            if !self.in_leaf_axis[a] || current[a] == to_values[a] {
                current[a] = to_values[a];
                continue;
            }
            let coord = self.setup.disk.coords[a];
            let values_snapshot = current.clone();
            for (k, action) in actions.iter_mut().enumerate() {
                *action += quadrature::integrate_adaptive(current[a], to_values[a], |ts| {
                    ts.iter()
                        .map(|&s| {
                            let mut v = values_snapshot.clone();
                            v[a] = s;
                            let pt = self.setup.disk.point(&family_seed(&self.setup), &v);
                            let rows = self.lattice_rows_at_point(&pt)?;
                            self.beta_against_coordinate(&rows, k, coord, &pt)
                        })
                        .collect()
                })?;
            }
            current[a] = to_values[a];
        }
        Ok(actions)
    }

    /// Max |omega_S(X_i, X_j)| over the family's torus points.
    pub fn verify_torus_isotropy(&self, points_per_torus: usize) -> Result<f64> {
        let mut worst = 0.0f64;
        for node in &self.nodes {
            let pts = self.torus_points(node, points_per_torus)?;
            worst = worst.max(isotropy_of_fields(&self.setup.dirac, &self.setup.sys, &pts)?);
        }
        Ok(worst)
    }

    /// Sampled points on a node's torus (angle translates of the base).
    fn torus_points(&self, node: &FamilyNode, count: usize) -> Result<Vec<Vec<f64>>> {
        let p = self.setup.sys.p();
        let mut out = vec![node.base_point.clone()];
        for i in 1..count {
            let theta: Vec<f64> =
                (0..p).map(|a| ((i * (a + 2) + 1) as f64 * 0.137).rem_euclid(1.0)).collect();
            let t = node.chart.time_for_angles(&theta);
            out.push(crate::torus::joint_flow(
                &self.setup.engine,
                &self.flow,
                &t,
                &node.base_point,
            )?);
        }
        Ok(out)
    }

    /// Angle field of the family at a point: angles on its own torus with
    /// the disk anchor as origin.
    pub fn angles_at(&self, y: &[f64]) -> Result<Vec<f64>> {
        let levels = self.levels_of(y)?;
        let anchor = self.disk_point_for_levels(&levels)?;
        let rows = self.lattice_from_levels(&levels);
        let tc = TorusChart_from(&anchor, rows, &levels)?;
        angle_coordinates(&self.setup.engine, &self.setup.sys, &tc, y)
    }

    /// Assemble `sum_i d_theta_i ^ dA_i` at a point by central differences
    /// (step `h`, Richardson-extrapolated unless `raw`), and return the
    /// worst deviation from `omega_S` over leaf-tangent pairs.
    pub fn full_aa_residual_at(&self, x: &[f64], h: f64, raw: bool) -> Result<f64> {
        let n = self.setup.sys.chart().dim();
        let p = self.setup.sys.p();
        let dthetas = self.differentials_at(x, h, raw, &|y| self.angles_at(y))?;
        let das = self.differentials_at(x, h, raw, &|y| {
            (0..p).map(|k| self.action_at(y, k)).collect::<Result<Vec<f64>>>()
        })?;
        let frame = self.setup.dirac.frame_at(x)?;
        let leaf = frame.leaf_two_form()?;
        let basis = leaf.basis.clone();
        let mut worst = 0.0f64;
        for ui in 0..basis.ncols() {
            for vi in (ui + 1)..basis.ncols() {
                let u = basis.column(ui).into_owned();
                let v = basis.column(vi).into_owned();
                let omega_uv = leaf.eval(&u, &v);
                let mut sum = 0.0;
                for i in 0..p {
                    let dth_u: f64 = (0..n).map(|c| dthetas[i][c] * u[c]).sum();
                    let dth_v: f64 = (0..n).map(|c| dthetas[i][c] * v[c]).sum();
                    let da_u: f64 = (0..n).map(|c| das[i][c] * u[c]).sum();
                    let da_v: f64 = (0..n).map(|c| das[i][c] * v[c]).sum();
                    sum += dth_u * da_v - dth_v * da_u;
                }
                worst = worst.max((omega_uv - sum).abs());
            }
        }
        Ok(worst)
    }

    /// The defect 2-form `Delta = omega_S - sum_i d_theta_i ^ dA_i` at a
    /// point, as a coordinate matrix.
    pub fn aa_defect_at(&self, x: &[f64], h: f64) -> Result<DMatrix<f64>> {
        let n = self.setup.sys.chart().dim();
        let p = self.setup.sys.p();
        let dthetas = self.differentials_at(x, h, false, &|y| self.angles_at(y))?;
        let das = self.differentials_at(x, h, false, &|y| {
            (0..p).map(|k| self.action_at(y, k)).collect::<Result<Vec<f64>>>()
        })?;
        let frame = self.setup.dirac.frame_at(x)?;
        let leaf = frame.leaf_two_form()?;
        let omega = leaf.coordinate_matrix();
        let mut delta = omega.clone();
        for i in 0..p {
            for r in 0..n {
                for c in 0..n {
                    delta[(r, c)] -= dthetas[i][r] * das[i][c] - dthetas[i][c] * das[i][r];
                }
            }
        }
        Ok(delta)
    }

    /// Differentials of a vector-valued field by central differences in all
    /// coordinate directions, componentwise (angles difference mod 1).
    fn differentials_at(
        &self,
        x: &[f64],
        h: f64,
        raw: bool,
        field: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<Vec<Vec<f64>>> {
        let n = self.setup.sys.chart().dim();
        let probe = |step: f64| -> Result<Vec<Vec<f64>>> {
            let center = field(x)?;
            let m = center.len();
            let mut out = vec![vec![0.0; n]; m];
            for c in 0..n {
                let mut xp = x.to_vec();
                xp[c] += step;
                let mut xm = x.to_vec();
                xm[c] -= step;
                let fp = field(&xp)?;
                let fm = field(&xm)?;
                for i in 0..m {
                    let mut dp = fp[i] - center[i];
                    let mut dm = fm[i] - center[i];
                    // Wrap angle-like differences into [-1/2, 1/2).
                    if dp.abs() > 0.5 {
                        dp -= dp.round();
                    }
                    if dm.abs() > 0.5 {
                        dm -= dm.round();
                    }
                    out[i][c] = (dp - dm) / (2.0 * step);
                }
            }
            Ok(out)
        };
        if raw {
            return probe(h);
        }
        // Richardson: (4 D_{h/2} - D_h) / 3.
        let dh = probe(h)?;
        let dh2 = probe(h / 2.0)?;
        Ok(dh
            .iter()
            .zip(&dh2)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(&va, &vb)| (4.0 * vb - va) / 3.0)
                    .collect()
            })
            .collect())
    }

    /// Loop integral of a 1-form along the closed orbit of generator `k` on
    /// the given torus node, after validating `d alpha = omega_S` on the
    /// leaf.
    pub fn action_by_mineur(&self, node: usize, k: usize, alpha: &KForm) -> Result<f64> {
        if alpha.degree() != 1 {
            return Err(CoreError::Degree("Mineur form must be a 1-form".into()));
        }
        let nd = &self.nodes[node];
        let dalpha = alpha.exterior_d();
        // d alpha restricted to the leaf must match omega_S at torus points.
        for pt in self.torus_points(nd, 4)? {
            let frame = self.setup.dirac.frame_at(&pt)?;
            let leaf = frame.leaf_two_form()?;
            let da = dalpha.eval_matrix(&pt)?;
            let basis = leaf.basis.clone();
            for ui in 0..basis.ncols() {
                for vi in (ui + 1)..basis.ncols() {
                    let u = basis.column(ui).into_owned();
                    let v = basis.column(vi).into_owned();
                    let reference = leaf.eval(&u, &v);
                    let got = (u.transpose() * &da * &v)[(0, 0)];
                    if (got - reference).abs() > tol::MINEUR_ADMISSIBLE {
                        return Err(CoreError::FormMismatch(format!(
                            "d(alpha) differs from the leaf form by {:.3e} at {pt:?}",
                            (got - reference).abs()
                        )));
                    }
                }
            }
        }
        // Integrate alpha(Z_k) over one closed orbit.
        let weights = nd.chart.generator_weights(k);
        let z = crate::fields::VectorField::linear_combination(
            self.setup.sys.chart(),
            &weights,
            self.setup.sys.fields(),
        )?;
        let integrand = alpha.interior(&z)?.coefficient(&[]);
        quadrature::integrate_adaptive(0.0, 1.0, |ts| {
            let mut vals = Vec::with_capacity(ts.len());
            self.flow
                .flow_visiting(&self.setup.engine, &weights, &nd.base_point, ts, |_, state| {
                    vals.push(integrand.eval(state));
                })?;
            vals.into_iter().collect()
        })
    }

    /// Recompute the action table with the generator basis `U L` and check
    /// the affine transition `A' = U A + c` across the family.
    pub fn coaffine_transition(&self, u: &DMatrix<f64>) -> Result<f64> {
        let det = u.determinant();
        if (det.abs() - 1.0).abs() > 1e-9 || u.iter().any(|v| (v - v.round()).abs() > 1e-9) {
            return Err(CoreError::NotUnimodular { det });
        }
        // Recomputed actions with generator rows U L per node.
        let mut recomputed: Vec<Vec<f64>> = Vec::with_capacity(self.nodes.len());
        for flat in 0..self.nodes.len() {
            let idx = self.setup.disk.node_index(flat);
            let ref_idx = self.reference_index_for(&idx);
            let ref_values = self.setup.disk.node_values(self.setup.disk.flat_index(&ref_idx));
            let target = self.nodes[flat].disk_values.clone();
            recomputed.push(self.disk_leg_integrals(&ref_values, &target, Some(u))?);
        }
        // c from the first node; deviation of A' - (U A + c) over the rest.
        let a0 = DVector::from_vec(self.nodes[0].actions.clone());
        let c = DVector::from_vec(recomputed[0].clone()) - u * a0;
        let mut worst = 0.0f64;
        for (nd, rec) in self.nodes.iter().zip(&recomputed) {
            let a = DVector::from_vec(nd.actions.clone());
            let expect = u * a + &c;
            for (got, want) in rec.iter().zip(expect.iter()) {
                worst = worst.max((got - want).abs());
            }
        }
        Ok(worst)
    }

    /// Numerical rank of the Jacobian of the actions with respect to the
    /// level coordinates, by central differences on the level grid.
    pub fn action_dependence_rank(&self) -> Result<usize> {
        let p = self.setup.sys.p();
        let qa = self.setup.disk.coords.len();
        let mut best = 0usize;
        for flat in 0..self.nodes.len() {
            let idx = self.setup.disk.node_index(flat);
            let mut jac = DMatrix::zeros(p, qa);
            let mut interior = true;
            for a in 0..qa {
                if idx[a] == 0 || idx[a] + 1 >= self.setup.disk.grids[a].len() {
                    interior = false;
                    break;
                }
                let mut up = idx.clone();
                up[a] += 1;
                let mut dn = idx.clone();
                dn[a] -= 1;
                let nu = &self.nodes[self.setup.disk.flat_index(&up)];
                let nd = &self.nodes[self.setup.disk.flat_index(&dn)];
                let dl = self.level_grids[a][idx[a] + 1] - self.level_grids[a][idx[a] - 1];
                for k in 0..p {
                    jac[(k, a)] = (nu.actions[k] - nd.actions[k]) / dl;
                }
            }
            if !interior {
                continue;
            }
            best = best.max(linalg::rank(&jac, tol::DEPENDENCE_RANK_SVD));
        }
        Ok(best)
    }

    /// Standard deviation of a fresh-path action over random torus points
    /// (constancy of A on tori).
    pub fn action_constancy_on_torus(&self, node: usize, k: usize, count: usize) -> Result<f64> {
        let nd = &self.nodes[node];
        let pts = self.torus_points(nd, count)?;
        let vals: Vec<f64> = pts
            .iter()
            .map(|ptv| self.action_by_path_integral(k, ptv))
            .collect::<Result<_>>()?;
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        Ok(var.sqrt())
    }
}

/// Seed point of the family grid: the declared seed with periodic
/// coordinates reduced (disk coordinates get overridden per node).
fn family_seed(setup: &ActionSetup) -> Vec<f64> {
    let mut seed = setup.seed.clone();
    setup.sys.chart().reduce(&mut seed);
    seed
}

#[allow(non_snake_case)]
fn TorusChart_from(base: &[f64], lattice: DMatrix<f64>, levels: &[f64]) -> Result<TorusChart> {
    TorusChart::from_parts(base.to_vec(), lattice, levels.to_vec())
}

/// Max |omega_S(X_i, X_j)| of a system's fields at the given points.
pub fn isotropy_of_fields(
    dirac: &DiracField,
    sys: &IntegrableSystem,
    points: &[Vec<f64>],
) -> Result<f64> {
    let mut worst = 0.0f64;
    for pt in points {
        let frame = dirac.frame_at(pt)?;
        let leaf = frame.leaf_two_form()?;
        let vals: Vec<DVector<f64>> = sys
            .fields()
            .iter()
            .map(|f| f.eval(pt))
            .collect::<Result<_>>()?;
        for i in 0..vals.len() {
            for j in (i + 1)..vals.len() {
                worst = worst.max(leaf.eval(&vals[i], &vals[j]).abs());
            }
        }
    }
    Ok(worst)
}

/// Verify the declared hypothesis over the family's base points; returns
/// the constant intersection rank d = dim(span(X) ∩ ker omega_S).
fn verify_hypothesis(setup: &ActionSetup, nodes: &[FamilyNode]) -> Result<usize> {
    let mut ranks = Vec::new();
    let mut leaf_dims = Vec::new();
    for nd in nodes {
        let frame = setup.dirac.frame_at(&nd.base_point)?;
        let kernel = frame.kernel_basis();
        let fields = setup.sys.field_matrix(&nd.base_point)?;
        let span = fields.transpose();
        let d = if kernel.ncols() == 0 {
            0
        } else {
            linalg::intersection_basis(&span, &kernel, tol::RANK_REL).ncols()
        };
        ranks.push(d);
        leaf_dims.push(frame.projections().0.ncols());
    }
    match setup.hypothesis {
        Hypothesis::ConstantIntersection => {
            if ranks.windows(2).any(|w| w[0] != w[1]) {
                return Err(CoreError::HypothesisFailed(format!(
                    "intersection dimension varies across the family: {ranks:?}"
                )));
            }
        }
        Hypothesis::RegularFoliation => {
            if leaf_dims.windows(2).any(|w| w[0] != w[1]) {
                return Err(CoreError::HypothesisFailed(format!(
                    "leaf dimension varies across the family: {leaf_dims:?}"
                )));
            }
        }
    }
    Ok(ranks[0])
}

/// Local polynomial interpolation (Neville). Grids here stay small, so a
/// wide window keeps the interpolant one smooth polynomial almost always;
/// smoothness matters because action and angle fields get differenced.
fn interp_local(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    debug_assert_eq!(n, ys.len());
    if n == 1 {
        return ys[0];
    }
    // Window of nodes nearest to x (assumes sorted xs, either order).
    let ascending = xs[0] <= xs[n - 1];
    let pos = if ascending {
        xs.partition_point(|&v| v < x)
    } else {
        xs.partition_point(|&v| v > x)
    };
    let w = 33.min(n);
    let start = pos.saturating_sub(w / 2).min(n - w);
    let xs_w = &xs[start..start + w];
    let ys_w = &ys[start..start + w];
    // Neville's scheme.
    let mut p: Vec<f64> = ys_w.to_vec();
    for level in 1..w {
        for i in 0..(w - level) {
            let denom = xs_w[i] - xs_w[i + level];
            p[i] = ((x - xs_w[i + level]) * p[i] - (x - xs_w[i]) * p[i + 1]) / denom;
        }
    }
    p[0]
}
