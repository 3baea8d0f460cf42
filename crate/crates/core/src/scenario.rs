//! Scenario files: a sectioned TOML format (versioned, `format = 1`)
//! declaring the chart, one structure block, an optional system block with
//! Hamiltonians, an optional torus block with the transversal disk and level
//! grid, optional tensors to average, and an optional loop-integral 1-form.

use crate::action::{Hypothesis, TransversalDisk};
use crate::chart::Chart;
use crate::dirac::{DiracField, DiracKind, Section};
use crate::error::{CoreError, Result};
use crate::expr::Expression;
use crate::fields::{BivectorField, KForm, TensorField, VectorField};
use crate::system::IntegrableSystem;
use crate::torus::LatticeSearch;
use serde::Deserialize;
use std::path::Path;
use std::sync::Arc;

pub const SCENARIO_FORMAT: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub format: u32,
    pub name: String,
    pub chart: ChartBlock,
    pub structure: StructureBlock,
    #[serde(default)]
    pub system: Option<SystemBlock>,
    #[serde(default)]
    pub torus: Option<TorusBlock>,
    #[serde(default)]
    pub mineur: Option<MineurBlock>,
    #[serde(default)]
    pub average: Option<AverageBlock>,
    #[serde(default)]
    pub expect: Option<ExpectBlock>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartBlock {
    pub coords: Vec<String>,
    #[serde(default)]
    pub periodic: Option<Vec<bool>>,
    pub domain: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureBlock {
    pub kind: String,
    /// Presymplectic 2-form terms: [coord_i, coord_j, coefficient-expr].
    #[serde(default)]
    pub omega: Option<Vec<[String; 3]>>,
    /// Poisson bivector terms, same layout.
    #[serde(default)]
    pub pi: Option<Vec<[String; 3]>>,
    /// Explicit frame sections.
    #[serde(default)]
    pub sections: Option<Vec<SectionBlock>>,
    /// Canonical parameters.
    #[serde(default)]
    pub params: Option<CanonicalParams>,
    /// Induced: coordinate constraints [coord, value] on the parent chart.
    #[serde(default)]
    pub constraints: Option<Vec<ConstraintEntry>>,
    /// Induced: the parent structure (same schema, one level only).
    #[serde(default)]
    pub parent: Option<Box<StructureBlock>>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ConstraintEntry(pub String, pub f64);

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionBlock {
    /// Vector-field components, one expression per coordinate.
    pub x: Vec<String>,
    /// 1-form terms [coord, coefficient-expr].
    #[serde(default)]
    pub alpha: Vec<[String; 2]>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalParams {
    pub p: usize,
    pub r: usize,
    pub s: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub fields: Vec<Vec<String>>,
    #[serde(default)]
    pub integrals: Vec<String>,
    #[serde(default)]
    pub hamiltonians: Option<Vec<String>>,
    #[serde(default)]
    pub regular_domain: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusBlock {
    pub seed: Vec<f64>,
    #[serde(default)]
    pub t_max: Option<f64>,
    #[serde(default)]
    pub scan_step: Option<f64>,
    /// "i" (constant intersection) or "ii" (regular foliation).
    #[serde(default)]
    pub hypothesis: Option<String>,
    #[serde(default)]
    pub angle_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub disk: Option<DiskBlock>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiskBlock {
    pub coords: Vec<String>,
    pub ranges: Vec<[f64; 2]>,
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MineurBlock {
    /// 1-form terms [coord, coefficient-expr].
    pub alpha: Vec<[String; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AverageBlock {
    #[serde(default)]
    pub tensors: Vec<TensorBlock>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorBlock {
    /// "scalar" | "vector" | "form2" | "bivector"
    pub kind: String,
    #[serde(default)]
    pub expr: Option<String>,
    #[serde(default)]
    pub comps: Option<Vec<String>>,
    #[serde(default)]
    pub terms: Option<Vec<[String; 3]>>,
}

/// Optional expectations asserted by the report (e.g. bi-corank).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectBlock {
    #[serde(default)]
    pub bi_corank: Option<[usize; 2]>,
    #[serde(default)]
    pub dependence_rank: Option<usize>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::Scenario(format!("cannot read {}: {e}", path.display())))?;
        Scenario::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Scenario> {
        let sc: Scenario =
            toml::from_str(text).map_err(|e| CoreError::Scenario(format!("parse error: {e}")))?;
        if sc.format != SCENARIO_FORMAT {
            return Err(CoreError::Scenario(format!(
                "unsupported scenario format {} (expected {SCENARIO_FORMAT})",
                sc.format
            )));
        }
        sc.validate()?;
        Ok(sc)
    }

    fn validate(&self) -> Result<()> {
        let n = self.chart.coords.len();
        if self.chart.domain.len() != n {
            return Err(CoreError::Scenario("chart domain size mismatch".into()));
        }
        if let Some(p) = &self.chart.periodic {
            if p.len() != n {
                return Err(CoreError::Scenario("chart periodic flags size mismatch".into()));
            }
        }
        match self.structure.kind.as_str() {
            "presymplectic" | "poisson" | "dirac_frame" | "canonical" | "induced" => {}
            other => {
                return Err(CoreError::Scenario(format!("unknown structure kind '{other}'")));
            }
        }
        if let Some(d) = self.torus.as_ref().and_then(|t| t.disk.as_ref()) {
            if d.ranges.len() != d.coords.len() || d.sizes.len() != d.coords.len() {
                return Err(CoreError::Scenario("disk block size mismatch".into()));
            }
            if d.sizes.iter().any(|&s| s < 2) {
                return Err(CoreError::Scenario("disk grid sizes must be >= 2".into()));
            }
        }
        Ok(())
    }

    /// Build the chart declared by the scenario. For induced structures this
    /// is the parent chart; the structure builder returns the slice chart.
    pub fn build_chart(&self) -> Result<Arc<Chart>> {
        let coords: Vec<&str> = self.chart.coords.iter().map(|s| s.as_str()).collect();
        let periodic = self
            .chart
            .periodic
            .clone()
            .unwrap_or_else(|| vec![false; coords.len()]);
        let domain: Vec<(f64, f64)> = self.chart.domain.iter().map(|d| (d[0], d[1])).collect();
        Chart::new(self.name.clone(), &coords, &periodic, &domain)
    }
}

/// A built structure: the Dirac field plus the defining tensor when the
/// structure came from one.
pub struct BuiltStructure {
    pub dirac: DiracField,
    pub omega: Option<KForm>,
    pub pi: Option<BivectorField>,
}

pub fn build_two_form(chart: &Arc<Chart>, terms: &[[String; 3]]) -> Result<KForm> {
    let parsed = terms
        .iter()
        .map(|[a, b, coeff]| {
            Ok((
                vec![chart.index_of(a)?, chart.index_of(b)?],
                Expression::parse(coeff, chart)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    KForm::from_terms(chart, 2, parsed)
}

pub fn build_bivector(chart: &Arc<Chart>, terms: &[[String; 3]]) -> Result<BivectorField> {
    let parsed = terms
        .iter()
        .map(|[a, b, coeff]| {
            Ok((
                (chart.index_of(a)?, chart.index_of(b)?),
                Expression::parse(coeff, chart)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    BivectorField::from_terms(chart, parsed)
}

pub fn build_one_form(chart: &Arc<Chart>, terms: &[[String; 2]]) -> Result<KForm> {
    let parsed = terms
        .iter()
        .map(|[a, coeff]| Ok((vec![chart.index_of(a)?], Expression::parse(coeff, chart)?)))
        .collect::<Result<Vec<_>>>()?;
    KForm::from_terms(chart, 1, parsed)
}

fn build_structure_on(
    chart: &Arc<Chart>,
    block: &StructureBlock,
    samples: &[Vec<f64>],
    slice_samples: usize,
    seed: u64,
) -> Result<BuiltStructure> {
    match block.kind.as_str() {
        "presymplectic" => {
            let omega = build_two_form(
                chart,
                block
                    .omega
                    .as_ref()
                    .ok_or_else(|| CoreError::Scenario("presymplectic needs 'omega'".into()))?,
            )?;
            let dirac = DiracField::from_presymplectic(&omega, samples)?;
            Ok(BuiltStructure { dirac, omega: Some(omega), pi: None })
        }
        "poisson" => {
            let pi = build_bivector(
                chart,
                block
                    .pi
                    .as_ref()
                    .ok_or_else(|| CoreError::Scenario("poisson needs 'pi'".into()))?,
            )?;
            let dirac = DiracField::from_poisson(&pi)?;
            Ok(BuiltStructure { dirac, omega: None, pi: Some(pi) })
        }
        "dirac_frame" => {
            let blocks = block
                .sections
                .as_ref()
                .ok_or_else(|| CoreError::Scenario("dirac_frame needs 'sections'".into()))?;
            let sections = blocks
                .iter()
                .map(|sb| {
                    let refs: Vec<&str> = sb.x.iter().map(|s| s.as_str()).collect();
                    let x = VectorField::parse(chart, &refs)?;
                    let alpha = build_one_form(chart, &sb.alpha)?;
                    Section::new(x, alpha)
                })
                .collect::<Result<Vec<_>>>()?;
            let dirac = DiracField::new(chart, sections, DiracKind::General)?;
            Ok(BuiltStructure { dirac, omega: None, pi: None })
        }
        "canonical" => {
            let params = block
                .params
                .ok_or_else(|| CoreError::Scenario("canonical needs 'params'".into()))?;
            let dirac = DiracField::canonical(chart, params.p, params.r, params.s)?;
            Ok(BuiltStructure { dirac, omega: None, pi: None })
        }
        "induced" => {
            let parent_block = block
                .parent
                .as_ref()
                .ok_or_else(|| CoreError::Scenario("induced needs 'parent'".into()))?;
            let constraints = block
                .constraints
                .as_ref()
                .ok_or_else(|| CoreError::Scenario("induced needs 'constraints'".into()))?;
            let parent = build_structure_on(chart, parent_block, samples, slice_samples, seed)?;
            let pairs: Vec<(String, f64)> =
                constraints.iter().map(|c| (c.0.clone(), c.1)).collect();
            let dirac = parent.dirac.induced_on_level(&pairs, slice_samples, seed)?;
            Ok(BuiltStructure { dirac, omega: None, pi: None })
        }
        other => Err(CoreError::Scenario(format!("unknown structure kind '{other}'"))),
    }
}

impl Scenario {
    /// Build the declared structure. `chart_samples` are samples of the
    /// scenario chart (the parent chart for induced structures).
    pub fn build_structure(
        &self,
        chart: &Arc<Chart>,
        chart_samples: &[Vec<f64>],
        slice_samples: usize,
        seed: u64,
    ) -> Result<BuiltStructure> {
        build_structure_on(chart, &self.structure, chart_samples, slice_samples, seed)
    }

    /// Build the system block against the given (possibly induced) chart.
    pub fn build_system(&self, chart: &Arc<Chart>) -> Result<Option<IntegrableSystem>> {
        let Some(block) = &self.system else {
            return Ok(None);
        };
        let fields = block
            .fields
            .iter()
            .map(|comps| {
                let refs: Vec<&str> = comps.iter().map(|s| s.as_str()).collect();
                VectorField::parse(chart, &refs)
            })
            .collect::<Result<Vec<_>>>()?;
        let integrals = block
            .integrals
            .iter()
            .map(|s| Expression::parse(s, chart))
            .collect::<Result<Vec<_>>>()?;
        let mut sys = IntegrableSystem::new(chart, fields, integrals)?;
        if let Some(rb) = &block.regular_domain {
            sys = sys.with_regular_box(rb.iter().map(|d| (d[0], d[1])).collect())?;
        }
        Ok(Some(sys))
    }

    pub fn hamiltonian_exprs(&self, chart: &Arc<Chart>) -> Result<Option<Vec<Expression>>> {
        let Some(block) = &self.system else {
            return Ok(None);
        };
        let Some(hs) = &block.hamiltonians else {
            return Ok(None);
        };
        Ok(Some(
            hs.iter()
                .map(|s| Expression::parse(s, chart))
                .collect::<Result<Vec<_>>>()?,
        ))
    }

    pub fn lattice_search(&self) -> LatticeSearch {
        let mut search = LatticeSearch::default();
        if let Some(t) = &self.torus {
            if let Some(tm) = t.t_max {
                search.t_max = tm;
            }
            if let Some(st) = t.scan_step {
                search.step = st;
            }
        }
        search
    }

    pub fn hypothesis(&self) -> Result<Hypothesis> {
        let declared = self
            .torus
            .as_ref()
            .and_then(|t| t.hypothesis.as_deref())
            .unwrap_or("ii");
        match declared {
            "i" => Ok(Hypothesis::ConstantIntersection),
            "ii" => Ok(Hypothesis::RegularFoliation),
            other => Err(CoreError::Scenario(format!("unknown hypothesis '{other}'"))),
        }
    }

    pub fn build_disk(&self, chart: &Arc<Chart>) -> Result<Option<TransversalDisk>> {
        let Some(t) = &self.torus else {
            return Ok(None);
        };
        let Some(d) = &t.disk else {
            return Ok(None);
        };
        let coords = d
            .coords
            .iter()
            .map(|c| chart.index_of(c))
            .collect::<Result<Vec<_>>>()?;
        let grids = d
            .ranges
            .iter()
            .zip(&d.sizes)
            .map(|(r, &size)| {
                let (lo, hi) = (r[0], r[1]);
                (0..size)
                    .map(|i| lo + (hi - lo) * i as f64 / (size - 1) as f64)
                    .collect::<Vec<f64>>()
            })
            .collect();
        Ok(Some(TransversalDisk { coords, grids }))
    }

    pub fn build_tensors(&self, chart: &Arc<Chart>) -> Result<Vec<(String, TensorField)>> {
        let Some(block) = &self.average else {
            return Ok(Vec::new());
        };
        block
            .tensors
            .iter()
            .enumerate()
            .map(|(i, tb)| {
                let name = format!("tensor-{}", i + 1);
                let t = match tb.kind.as_str() {
                    "scalar" => {
                        let e = Expression::parse(
                            tb.expr.as_ref().ok_or_else(|| {
                                CoreError::Scenario("scalar tensor needs 'expr'".into())
                            })?,
                            chart,
                        )?;
                        TensorField::scalar(&e)
                    }
                    "vector" => {
                        let comps = tb.comps.as_ref().ok_or_else(|| {
                            CoreError::Scenario("vector tensor needs 'comps'".into())
                        })?;
                        let refs: Vec<&str> = comps.iter().map(|s| s.as_str()).collect();
                        VectorField::parse(chart, &refs)?.as_tensor()
                    }
                    "form2" => build_two_form(
                        chart,
                        tb.terms.as_ref().ok_or_else(|| {
                            CoreError::Scenario("form2 tensor needs 'terms'".into())
                        })?,
                    )?
                    .as_tensor(),
                    "bivector" => build_bivector(
                        chart,
                        tb.terms.as_ref().ok_or_else(|| {
                            CoreError::Scenario("bivector tensor needs 'terms'".into())
                        })?,
                    )?
                    .as_tensor(),
                    other => {
                        return Err(CoreError::Scenario(format!("unknown tensor kind '{other}'")))
                    }
                };
                Ok((name, t))
            })
            .collect()
    }
}
