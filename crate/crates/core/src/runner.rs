//! The scenario pipeline behind the CLI subcommands: build the declared
//! objects, run the verification stages, and collect a report plus the
//! action-table artifacts.

use crate::action::{ActionFamily, ActionSetup, TransversalDisk};
use crate::chart::Chart;
use crate::dirac::DiracKind;
use crate::error::{CoreError, Result};
use crate::fields::TensorField;
use crate::flow::{FlowEngine, SystemFlow};
use crate::halton::sample_points;
use crate::lattice::unimodular_transform;
use crate::report::{ActionRow, ActionTable, CheckStatus, Report};
use crate::scenario::{BuiltStructure, Scenario};
use crate::system::IntegrableSystem;
use crate::tol;
use crate::torus::{
    find_period_lattice, joint_flow, verify_structure_preservation, TorusChart, TorusGrid,
    TorusQuadrature,
};
use nalgebra::DMatrix;
use std::sync::Arc;
use std::time::Instant;

/// CLI subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    CheckDirac,
    CheckSystem,
    FindTorus,
    Average,
    Actions,
    VerifyAa,
    All,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::CheckDirac => "check-dirac",
            Command::CheckSystem => "check-system",
            Command::FindTorus => "find-torus",
            Command::Average => "average",
            Command::Actions => "actions",
            Command::VerifyAa => "verify-aa",
            Command::All => "all",
        }
    }

    fn wants_dirac_checks(&self) -> bool {
        matches!(self, Command::CheckDirac | Command::All)
    }

    fn wants_system_checks(&self) -> bool {
        matches!(self, Command::CheckSystem | Command::All)
    }

    fn wants_torus(&self) -> bool {
        matches!(
            self,
            Command::FindTorus | Command::Average | Command::Actions | Command::VerifyAa | Command::All
        )
    }

    fn wants_average(&self) -> bool {
        matches!(self, Command::Average | Command::All)
    }

    fn wants_actions(&self) -> bool {
        matches!(self, Command::Actions | Command::VerifyAa | Command::All)
    }

    fn wants_aa(&self) -> bool {
        matches!(self, Command::VerifyAa | Command::All)
    }
}

/// Run-wide configuration (CLI flags).
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub samples: usize,
    pub seed: u64,
    pub grid: Option<usize>,
    pub tol_scale: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { samples: tol::DEFAULT_SAMPLES, seed: 0, grid: None, tol_scale: 1.0 }
    }
}

/// Everything a run produces.
pub struct RunResult {
    pub report: Report,
    pub action_table: Option<ActionTable>,
}

impl RunResult {
    /// Process exit code contract: 0 all pass, 1 check failures, 3 numeric
    /// failures (2 is reserved for scenario parse errors upstream).
    pub fn exit_code(&self) -> i32 {
        if self.report.numeric_failure.is_some() {
            3
        } else if self.report.all_passed() {
            0
        } else {
            1
        }
    }
}

fn is_numeric_failure(err: &CoreError) -> bool {
    matches!(
        err,
        CoreError::Integrator(_)
            | CoreError::NewtonDiverged(_)
            | CoreError::NoRecurrence { .. }
            | CoreError::QuadratureDiverged { .. }
            | CoreError::LeftDomain { .. }
    )
}

struct Ctx {
    chart: Arc<Chart>,
    samples: Vec<Vec<f64>>,
    built: BuiltStructure,
    sys: Option<IntegrableSystem>,
    engine: FlowEngine,
}

/// Execute one subcommand over a parsed scenario.
pub fn run(scenario: &Scenario, command: Command, config: &RunConfig) -> RunResult {
    let mut report = Report::new(&scenario.name, command.name(), config.seed, config.tol_scale);
    let mut result = RunResult { report: Report::new("", "", 0, 1.0), action_table: None };
    let scale = config.tol_scale;

    macro_rules! bail {
        ($err:expr, $name:expr) => {{
            let err = $err;
            if is_numeric_failure(&err) {
                report.numeric_failure = Some(format!("{}: {err}", $name));
            } else {
                report.push(
                    $name,
                    CheckStatus::Fail,
                    residual_of(&err),
                    None,
                    Some(err.to_string()),
                    0,
                );
            }
            result.report = report;
            return result;
        }};
    }

    // --- Structure -------------------------------------------------------
    let parent_chart = match scenario.build_chart() {
        Ok(c) => c,
        Err(e) => bail!(e, "chart-build"),
    };
    let parent_samples = sample_points(&parent_chart, config.samples, config.seed);
    let built = match scenario.build_structure(
        &parent_chart,
        &parent_samples,
        config.samples.min(32),
        config.seed,
    ) {
        Ok(b) => b,
        Err(e) => bail!(e, "structure-build"),
    };
    let chart = built.dirac.chart().clone();
    let samples = if chart == parent_chart {
        parent_samples
    } else {
        sample_points(&chart, config.samples, config.seed)
    };
    let mut ctx = Ctx { chart, samples, built, sys: None, engine: FlowEngine::default() };

    // --- Dirac axioms ------------------------------------------------------
    if command.wants_dirac_checks() {
        if let Err(e) = stage_check_dirac(scenario, &ctx, config, scale, &mut report) {
            bail!(e, "check-dirac");
        }
    }

    // --- System ------------------------------------------------------------
    let needs_system = command.wants_system_checks() || command.wants_torus();
    if needs_system {
        match scenario.build_system(&ctx.chart) {
            Ok(Some(sys)) => ctx.sys = Some(sys),
            Ok(None) => {
                if command.wants_system_checks() {
                    report.skip("system", "no system block");
                }
            }
            Err(e) => bail!(e, "system-build"),
        }
    }
    if command.wants_system_checks() && ctx.sys.is_some() {
        if let Err(e) = stage_check_system(scenario, &mut ctx, config, scale, &mut report) {
            bail!(e, "check-system");
        }
    } else if command.wants_torus() && ctx.sys.is_some() {
        // Torus stages still need bound Hamiltonians.
        if let Err(e) = bind_declared_hamiltonians(scenario, &mut ctx) {
            bail!(e, "bind-hamiltonians");
        }
    }

    // --- Torus -------------------------------------------------------------
    let mut torus: Option<TorusChart> = None;
    if command.wants_torus() {
        match (&ctx.sys, scenario.torus.as_ref()) {
            (Some(_), Some(_)) => {
                match stage_find_torus(scenario, &ctx, scale, &mut report,
                    matches!(command, Command::FindTorus | Command::All)) {
                    Ok(tc) => torus = Some(tc),
                    Err(e) => bail!(e, "find-torus"),
                }
            }
            _ => report.skip("find-torus", "no system or torus block"),
        }
    }

    // --- Averaging -----------------------------------------------------------
    if command.wants_average() {
        match (&ctx.sys, &torus) {
            (Some(_), Some(tc)) => {
                if let Err(e) = stage_average(scenario, &ctx, tc, config, scale, &mut report) {
                    bail!(e, "average");
                }
            }
            _ => report.skip("average", "needs a torus"),
        }
    }

    // --- Actions and action-angle verification ------------------------------
    if command.wants_actions() {
        let disk = match scenario.build_disk(&ctx.chart) {
            Ok(d) => d,
            Err(e) => bail!(e, "disk-build"),
        };
        let ready = ctx.sys.as_ref().map(|s| s.hamiltonians().is_some()).unwrap_or(false);
        match (disk, ready) {
            (Some(disk), true) => {
                let family = match build_family(scenario, &ctx, disk) {
                    Ok(f) => f,
                    Err(e) => {
                        if is_numeric_failure(&e) {
                            report.numeric_failure = Some(format!("action-family: {e}"));
                            result.report = report;
                            return result;
                        }
                        report.push(
                            "action-family",
                            CheckStatus::Fail,
                            None,
                            None,
                            Some(e.to_string()),
                            0,
                        );
                        result.report = report;
                        return result;
                    }
                };
                if let Err(e) =
                    stage_actions(scenario, &family, scale, &mut report, &mut result.action_table)
                {
                    bail!(e, "actions");
                }
                if command.wants_aa() {
                    if let Err(e) = stage_verify_aa(scenario, &family, config, scale, &mut report)
                    {
                        bail!(e, "verify-aa");
                    }
                }
            }
            _ => {
                report.skip("actions", "needs a transversal disk and bound Hamiltonians");
                if command.wants_aa() {
                    report.skip("verify-aa", "needs a transversal disk and bound Hamiltonians");
                }
            }
        }
    }

    result.report = report;
    result
}

fn residual_of(err: &CoreError) -> Option<f64> {
    match err {
        CoreError::NotClosed { residual, .. } => Some(*residual),
        CoreError::NotHamiltonian { residual, .. } => Some(*residual),
        CoreError::NotIsotropic { max_pairing } => Some(*max_pairing),
        _ => None,
    }
}

fn bind_declared_hamiltonians(scenario: &Scenario, ctx: &mut Ctx) -> Result<()> {
    if let (Some(sys), Some(hams)) =
        (ctx.sys.as_mut(), scenario.hamiltonian_exprs(ctx.built.dirac.chart())?)
    {
        sys.bind_hamiltonians(&ctx.built.dirac, hams, &ctx.samples)?;
    }
    Ok(())
}

fn stage_check_dirac(
    scenario: &Scenario,
    ctx: &Ctx,
    _config: &RunConfig,
    scale: f64,
    report: &mut Report,
) -> Result<()> {
    let t0 = Instant::now();
    let frame_report = ctx.built.dirac.verify_frame(&ctx.samples)?;
    report.pass_check(
        "frame-isotropy",
        frame_report.max_gram,
        tol::ISOTROPY * scale,
        t0.elapsed().as_millis(),
    );

    let t0 = Instant::now();
    let closed = ctx.built.dirac.courant_closedness(&ctx.samples)?;
    report.pass_check(
        "courant-closedness",
        closed.max_residual,
        tol::CLOSEDNESS * scale,
        t0.elapsed().as_millis(),
    );

    // Bi-corank: constant across samples, optionally matching expectations.
    let t0 = Instant::now();
    let mut coranks = Vec::new();
    for p in ctx.samples.iter().take(32) {
        coranks.push(ctx.built.dirac.frame_at(p)?.bi_corank()?);
    }
    let constant = coranks.windows(2).all(|w| w[0] == w[1]);
    let bc = coranks[0];
    let expected = scenario.expect.as_ref().and_then(|e| e.bi_corank);
    let matches_expected = expected.map(|[r, s]| bc.r == r && bc.s == s).unwrap_or(true);
    report.push(
        "bi-corank",
        if constant && matches_expected { CheckStatus::Pass } else { CheckStatus::Fail },
        None,
        None,
        Some(format!("r={} s={} m={} constant={}", bc.r, bc.s, bc.m, constant)),
        t0.elapsed().as_millis(),
    );

    // Graph structures must reproduce their defining tensor.
    if let Some(omega) = &ctx.built.omega {
        let t0 = Instant::now();
        let mut worst = 0.0f64;
        for p in ctx.samples.iter().take(32) {
            let leaf = ctx.built.dirac.frame_at(p)?.leaf_two_form()?;
            let diff = (leaf.coordinate_matrix() - omega.eval_matrix(p)?).amax();
            worst = worst.max(diff);
        }
        report.pass_check("leaf-form-reproduces-omega", worst, 1e-9 * scale, t0.elapsed().as_millis());
    }
    if ctx.built.dirac.kind() == DiracKind::PoissonGraph {
        if let Some(pi) = &ctx.built.pi {
            let t0 = Instant::now();
            let back = ctx.built.dirac.extract_poisson()?;
            let mut worst = 0.0f64;
            for p in ctx.samples.iter().take(32) {
                worst = worst.max((back.eval_matrix(p)? - pi.eval_matrix(p)?).amax());
            }
            report.pass_check("poisson-round-trip", worst, 1e-12, t0.elapsed().as_millis());
        }
    }
    Ok(())
}

fn stage_check_system(
    scenario: &Scenario,
    ctx: &mut Ctx,
    config: &RunConfig,
    scale: f64,
    report: &mut Report,
) -> Result<()> {
    let sys = ctx.sys.as_ref().expect("system present");
    let t0 = Instant::now();
    let regular = sys.regular_samples(config.samples, config.seed)?;
    let reg_report = sys.check_integrability(&ctx.samples, &regular)?;
    report.pass_check(
        "commutators",
        reg_report.commutator_residual,
        tol::SYSTEM_RESIDUAL * scale,
        t0.elapsed().as_millis(),
    );
    report.pass_check("integral-invariance", reg_report.invariance_residual, tol::SYSTEM_RESIDUAL * scale, 0);
    let wedge = reg_report.wedge_x_min.min(reg_report.wedge_df_min);
    report.push(
        "wedge-nondegeneracy",
        if wedge > tol::WEDGE_MIN { CheckStatus::Pass } else { CheckStatus::Fail },
        Some(wedge),
        Some(tol::WEDGE_MIN),
        None,
        0,
    );

    if let Some(tb) = &scenario.torus {
        let t0 = Instant::now();
        let ok = sys.is_regular_at(&tb.seed)?;
        report.push(
            "regular-at-seed",
            if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            None,
            None,
            None,
            t0.elapsed().as_millis(),
        );
    }

    // Hamiltonian binding.
    let hams = scenario.hamiltonian_exprs(ctx.built.dirac.chart())?;
    match hams {
        Some(hs) => {
            let t0 = Instant::now();
            let sys = ctx.sys.as_mut().expect("system present");
            match sys.bind_hamiltonians(&ctx.built.dirac, hs, &ctx.samples) {
                Ok(()) => report.push(
                    "hamiltonian-binding",
                    CheckStatus::Pass,
                    None,
                    None,
                    None,
                    t0.elapsed().as_millis(),
                ),
                Err(CoreError::NotHamiltonian { residual, point }) => report.push(
                    "hamiltonian-binding",
                    CheckStatus::Fail,
                    Some(residual),
                    Some(tol::MEMBERSHIP * scale),
                    Some(format!("worst point {point:?}")),
                    t0.elapsed().as_millis(),
                ),
                Err(e) => return Err(e),
            }
        }
        None => report.skip("hamiltonian-binding", "no Hamiltonians declared"),
    }

    // Pointwise isotropy of the spanned tori directions (flags designed
    // non-Hamiltonian controls).
    let sys = ctx.sys.as_ref().expect("system present");
    if sys.p() >= 2 {
        let t0 = Instant::now();
        let iso = crate::action::isotropy_of_fields(&ctx.built.dirac, sys, &ctx.samples)?;
        report.pass_check("fields-isotropy", iso, tol::TORUS_ISOTROPY * scale, t0.elapsed().as_millis());
    }
    Ok(())
}

fn stage_find_torus(
    scenario: &Scenario,
    ctx: &Ctx,
    scale: f64,
    report: &mut Report,
    full_checks: bool,
) -> Result<TorusChart> {
    let sys = ctx.sys.as_ref().expect("system present");
    let tb = scenario.torus.as_ref().expect("torus block present");
    let search = scenario.lattice_search();
    let t0 = Instant::now();
    let tc = find_period_lattice(&ctx.engine, sys, &tb.seed, &search)?;
    let lattice_desc = {
        let l = tc.lattice();
        let rows: Vec<String> = (0..l.nrows())
            .map(|i| {
                let vals: Vec<String> =
                    l.row(i).iter().map(|v| format!("{v:.9e}")).collect();
                format!("[{}]", vals.join(","))
            })
            .collect();
        rows.join(" ")
    };
    report.push(
        "period-lattice",
        if tc.return_error() <= tol::RETURN_MAP * scale { CheckStatus::Pass } else { CheckStatus::Fail },
        Some(tc.return_error()),
        Some(tol::RETURN_MAP * scale),
        Some(lattice_desc),
        t0.elapsed().as_millis(),
    );

    if full_checks {
        let flow = SystemFlow::new(sys.chart(), sys.fields());
        // Lattice from a second base point on the same torus.
        let t0 = Instant::now();
        let t_shift: Vec<f64> = (0..sys.p()).map(|i| 0.31 + 0.17 * i as f64).collect();
        let other = joint_flow(&ctx.engine, &flow, &t_shift, &tb.seed)?;
        let tc2 = find_period_lattice(&ctx.engine, sys, &other, &search)?;
        let equivalent = unimodular_transform(tc.lattice(), tc2.lattice()).is_some();
        report.push(
            "lattice-two-point-equivalence",
            if equivalent { CheckStatus::Pass } else { CheckStatus::Fail },
            None,
            None,
            None,
            t0.elapsed().as_millis(),
        );

        // Flow group law at the seed.
        let t0 = Instant::now();
        let a: Vec<f64> = (0..sys.p()).map(|i| 0.23 + 0.11 * i as f64).collect();
        let b: Vec<f64> = (0..sys.p()).map(|i| 0.41 - 0.07 * i as f64).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let via = joint_flow(&ctx.engine, &flow, &b, &joint_flow(&ctx.engine, &flow, &a, &tb.seed)?)?;
        let direct = joint_flow(&ctx.engine, &flow, &ab, &tb.seed)?;
        let dev = sys.chart().distance(&via, &direct);
        report.pass_check("flow-group-law", dev, tol::RETURN_MAP * scale, t0.elapsed().as_millis());

        // First integrals conserved along a long flow.
        let t0 = Instant::now();
        let t_long: Vec<f64> = (0..sys.p()).map(|i| 2.7 + 0.9 * i as f64).collect();
        let image = joint_flow(&ctx.engine, &flow, &t_long, &tb.seed)?;
        let mut drift = 0.0f64;
        for f in sys.integrals() {
            drift = drift.max((f.eval(&image)? - f.eval(&tb.seed)?).abs());
        }
        report.pass_check("integral-drift", drift, tol::INTEGRAL_DRIFT * scale, t0.elapsed().as_millis());
    }
    Ok(tc)
}

fn stage_average(
    scenario: &Scenario,
    ctx: &Ctx,
    tc: &TorusChart,
    config: &RunConfig,
    scale: f64,
    report: &mut Report,
) -> Result<()> {
    let sys = ctx.sys.as_ref().expect("system present");
    let p = sys.p();
    let sizes: Vec<usize> = match (&config.grid, scenario.torus.as_ref().and_then(|t| t.angle_grid.clone())) {
        (Some(g), _) => vec![*g; p],
        (None, Some(g)) => g,
        (None, None) => vec![tol::DEFAULT_ANGLE_GRID; p],
    };
    let quad = TorusQuadrature::new(sizes.clone())?;
    let grid = TorusGrid::build(&ctx.engine, sys, tc, &quad)?;

    // Tensors to average: the structure's own tensor plus declared extras.
    let mut tensors: Vec<(String, TensorField, bool)> = Vec::new();
    if let Some(omega) = &ctx.built.omega {
        tensors.push(("structure-form".into(), omega.as_tensor(), true));
    }
    if let Some(pi) = &ctx.built.pi {
        tensors.push(("structure-bivector".into(), pi.as_tensor(), true));
    }
    for (name, t) in scenario.build_tensors(sys.chart())? {
        // Declared tensors with explicit time dependence on the angles are
        // averaged but not required to be fixed.
        let invariant = {
            let mut worst = 0.0f64;
            for k in 0..p {
                let z = tc.generator_field(sys, k)?;
                let lie = t.lie_derivative(&z)?;
                worst = worst.max(lie.max_abs_on(&ctx.samples)?);
            }
            worst <= tol::SYSTEM_RESIDUAL * scale
        };
        tensors.push((name, t, invariant));
    }
    if tensors.is_empty() {
        report.skip("torus-average", "no tensors to average");
    }

    // Doubled grid for the convergence flag.
    let doubled = TorusQuadrature::new(sizes.iter().map(|s| 2 * s).collect())?;
    let grid2 = TorusGrid::build(&ctx.engine, sys, tc, &doubled)?;

    for (name, tensor, invariant) in &tensors {
        let t0 = Instant::now();
        let avg = grid.average(tensor)?;
        if *invariant {
            report.pass_check(
                &format!("average-fixes-{name}"),
                avg.max_deviation,
                tol::AVERAGE_FIX * scale,
                t0.elapsed().as_millis(),
            );
        } else {
            report.push(
                &format!("average-{name}"),
                CheckStatus::Pass,
                Some(avg.max_deviation),
                None,
                Some("deviation reported only (tensor not invariant)".into()),
                t0.elapsed().as_millis(),
            );
        }
        let t0 = Instant::now();
        let idem = grid.reaverage_change(&avg);
        report.pass_check(
            &format!("average-idempotent-{name}"),
            idem,
            tol::AVERAGE_FIX * scale,
            t0.elapsed().as_millis(),
        );

        // Convergence: doubling the grid must not move the averages.
        let t0 = Instant::now();
        let avg2 = grid2.average(tensor)?;
        let mut conv = 0.0f64;
        for (flat, coarse) in avg.values.iter().enumerate() {
            // Base index in the doubled grid: componentwise doubled.
            let idx = {
                let mut rem = flat;
                let mut out = vec![0usize; sizes.len()];
                for a in (0..sizes.len()).rev() {
                    out[a] = rem % sizes[a];
                    rem /= sizes[a];
                }
                out
            };
            let fine_flat = {
                let mut f = 0usize;
                for (a, &i) in idx.iter().enumerate() {
                    f = f * (2 * sizes[a]) + 2 * i;
                }
                f
            };
            conv = conv.max(coarse.max_abs_diff(&avg2.values[fine_flat]));
        }
        report.pass_check(
            &format!("average-grid-convergence-{name}"),
            conv,
            tol::AVERAGE_GRID_CONV * scale,
            t0.elapsed().as_millis(),
        );
    }

    // Structure preservation (system fields and torus generators).
    let t0 = Instant::now();
    let pres = verify_structure_preservation(sys, tc, &ctx.built.dirac, &ctx.samples)?;
    report.pass_check(
        "system-preserves-structure",
        pres.system_residual,
        tol::STRUCTURE_PRESERVATION * scale,
        t0.elapsed().as_millis(),
    );
    report.pass_check(
        "torus-action-preserves-structure",
        pres.generator_residual,
        tol::STRUCTURE_PRESERVATION * scale,
        0,
    );
    Ok(())
}

fn build_family(scenario: &Scenario, ctx: &Ctx, disk: TransversalDisk) -> Result<ActionFamily> {
    let sys = ctx.sys.as_ref().expect("system present").clone();
    let seed = scenario
        .torus
        .as_ref()
        .map(|t| t.seed.clone())
        .ok_or_else(|| CoreError::Scenario("action family needs a torus block".into()))?;
    ActionFamily::build(ActionSetup {
        engine: ctx.engine.clone(),
        sys,
        dirac: ctx.built.dirac.clone(),
        disk,
        seed,
        hypothesis: scenario.hypothesis()?,
        search: scenario.lattice_search(),
    })
}

fn stage_actions(
    scenario: &Scenario,
    family: &ActionFamily,
    scale: f64,
    report: &mut Report,
    table_out: &mut Option<ActionTable>,
) -> Result<()> {
    let p = family.sys().p();

    // beta restricted to leaves is closed.
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for k in 0..p {
        worst = worst.max(family.beta_leaf_closedness(k)?);
    }
    report.pass_check("beta-leaf-closedness", worst, tol::BETA_CLOSED * scale, t0.elapsed().as_millis());

    // Isotropy of the Liouville tori.
    let t0 = Instant::now();
    let iso = family.verify_torus_isotropy(4)?;
    report.pass_check("torus-isotropy", iso, tol::TORUS_ISOTROPY * scale, t0.elapsed().as_millis());

    // dA = beta across the level grid (central differences at an interior
    // node against the beta coefficients).
    let t0 = Instant::now();
    let grad_dev = action_gradient_deviation(family)?;
    report.pass_check("action-gradient-matches-beta", grad_dev, 1e-6 * scale, t0.elapsed().as_millis());

    // Path independence at a probe point.
    let t0 = Instant::now();
    let probe = probe_point(family)?;
    let mut dev = 0.0f64;
    for k in 0..p {
        dev = dev.max(family.verify_path_independence(k, &probe)?);
    }
    report.pass_check("path-independence", dev, tol::PATH_INDEPENDENCE * scale, t0.elapsed().as_millis());

    // Action constancy on a torus.
    let t0 = Instant::now();
    let node = family.nodes().len() / 2;
    let mut sd = 0.0f64;
    for k in 0..p {
        sd = sd.max(family.action_constancy_on_torus(node, k, 8)?);
    }
    report.pass_check("action-constant-on-torus", sd, tol::ACTION_ON_TORUS * scale, t0.elapsed().as_millis());

    // Loop integrals of a declared primitive 1-form.
    if let Some(mb) = &scenario.mineur {
        let t0 = Instant::now();
        let alpha = crate::scenario::build_one_form(family.sys().chart(), &mb.alpha)?;
        let reference = family.action_by_mineur(0, 0, &alpha)?;
        let mut worst = 0.0f64;
        for (i, nd) in family.nodes().iter().enumerate() {
            let v = family.action_by_mineur(i, 0, &alpha)?;
            let dev = ((v.abs() - reference.abs()) - nd.actions[0]).abs();
            worst = worst.max(dev);
        }
        report.pass_check("mineur-matches-path-integral", worst, tol::ACTION_PATH * scale, t0.elapsed().as_millis());
    }

    // Action table artifact.
    let level_names: Vec<String> = family
        .disk()
        .coords
        .iter()
        .map(|&c| family.sys().chart().coord_name(c).to_string())
        .collect();
    let rows = family
        .nodes()
        .iter()
        .map(|nd| ActionRow {
            levels: nd.disk_values.clone(),
            actions: nd.actions.clone(),
            frequencies: nd.chart.frequencies().iter().copied().collect(),
        })
        .collect();
    *table_out = Some(ActionTable { level_names, p, rows });
    Ok(())
}

/// Richardson central differences of the fresh path-integral action across
/// nearby leaves, against the transverse beta components at a mid-grid node.
fn action_gradient_deviation(family: &ActionFamily) -> Result<f64> {
    let disk = family.disk();
    let p = family.sys().p();
    let flat = family.nodes().len() / 2;
    let node = &family.nodes()[flat];
    let mut worst = 0.0f64;
    for (a, &coord) in disk.coords.iter().enumerate() {
        let grid = &disk.grids[a];
        let h = 0.05 * (grid[grid.len() - 1] - grid[0]).abs();
        for k in 0..p {
            let diff_at = |step: f64| -> Result<f64> {
                let mut up = node.base_point.clone();
                up[coord] += step;
                let mut dn = node.base_point.clone();
                dn[coord] -= step;
                Ok((family.action_by_path_integral(k, &up)?
                    - family.action_by_path_integral(k, &dn)?)
                    / (2.0 * step))
            };
            let d1 = diff_at(h)?;
            let d2 = diff_at(h / 2.0)?;
            let fd = (4.0 * d2 - d1) / 3.0;
            let beta = family.beta_form(flat, k)?;
            let beta_c = beta.coefficient(&[coord]).eval(&node.base_point)?;
            worst = worst.max((fd - beta_c).abs());
        }
    }
    Ok(worst)
}

/// A probe point away from the grid nodes: an angle translate of an interior
/// node's base point.
fn probe_point(family: &ActionFamily) -> Result<Vec<f64>> {
    let node = &family.nodes()[family.nodes().len() / 2];
    let p = family.sys().p();
    let theta: Vec<f64> = (0..p).map(|i| 0.23 + 0.31 * i as f64).collect();
    let t = node.chart.time_for_angles(&theta);
    let flow = SystemFlow::new(family.sys().chart(), family.sys().fields());
    joint_flow(family.engine(), &flow, &t, &node.base_point)
}

fn stage_verify_aa(
    scenario: &Scenario,
    family: &ActionFamily,
    config: &RunConfig,
    scale: f64,
    report: &mut Report,
) -> Result<()> {
    let sys = family.sys();
    let p = sys.p();

    // Lagrangian or merely isotropic tori?
    let node = &family.nodes()[family.nodes().len() / 2];
    let frame = family.dirac().frame_at(&node.base_point)?;
    let span = sys.field_matrix(&node.base_point)?.transpose();
    let verdict = frame.lagrangian_check(&span)?;

    let probe = probe_point(family)?;
    if verdict.lagrangian {
        let t0 = Instant::now();
        let res = family.full_aa_residual_at(&probe, tol::AA_DIFF_STEP, false)?;
        report.pass_check("full-aa-residual", res, tol::AA_RESIDUAL * scale, t0.elapsed().as_millis());

        // O(h^2) convergence of the raw differencing residual.
        let t0 = Instant::now();
        let r1 = family.full_aa_residual_at(&probe, 2e-2, true)?;
        let r2 = family.full_aa_residual_at(&probe, 1e-2, true)?;
        let ok = r1 < 1e-9 || {
            let ratio = r1 / r2;
            (2.8..6.0).contains(&ratio)
        };
        report.push(
            "full-aa-h2-convergence",
            if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            Some(if r2 > 0.0 { r1 / r2 } else { 0.0 }),
            None,
            Some(format!("r(2e-2)={r1:.3e} r(1e-2)={r2:.3e}")),
            t0.elapsed().as_millis(),
        );
    } else {
        report.skip("full-aa-residual", "tori are isotropic but not Lagrangian");
    }

    // Partial normal form: the defect annihilates the angle directions.
    let t0 = Instant::now();
    let delta = family.aa_defect_at(&probe, tol::AA_DIFF_STEP)?;
    let mut angle_defect = 0.0f64;
    for k in 0..p {
        let z = family.nodes()[0].chart.generator_field(sys, k)?;
        let zv = z.eval(&probe)?;
        for c in 0..sys.chart().dim() {
            let mut e = nalgebra::DVector::zeros(sys.chart().dim());
            e[c] = 1.0;
            angle_defect = angle_defect.max((zv.transpose() * &delta * e)[(0, 0)].abs());
        }
    }
    // Transverse defect coefficients (the recovered f values).
    let mut f_desc = Vec::new();
    let disk = family.disk();
    for (ai, &ca) in disk.coords.iter().enumerate() {
        for &cb in disk.coords.iter().skip(ai + 1) {
            f_desc.push(format!(
                "f[{},{}]={:.6e}",
                sys.chart().coord_name(ca),
                sys.chart().coord_name(cb),
                delta[(ca, cb)]
            ));
        }
    }
    report.push(
        "partial-aa-angle-defect",
        if angle_defect <= tol::AA_RESIDUAL * scale { CheckStatus::Pass } else { CheckStatus::Fail },
        Some(angle_defect),
        Some(tol::AA_RESIDUAL * scale),
        if f_desc.is_empty() { None } else { Some(f_desc.join(" ")) },
        t0.elapsed().as_millis(),
    );

    // Co-affine transitions for seeded unimodular matrices.
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for u in unimodular_samples(p, 5, config.seed) {
        worst = worst.max(family.coaffine_transition(&u)?);
    }
    report.pass_check("coaffine-transitions", worst, tol::COAFFINE * scale, t0.elapsed().as_millis());

    // Dependence rank of the actions on the levels.
    let t0 = Instant::now();
    let rank = family.action_dependence_rank()?;
    let expected = scenario.expect.as_ref().and_then(|e| e.dependence_rank);
    let ok = expected.map(|r| r == rank).unwrap_or(true);
    report.push(
        "action-dependence-rank",
        if ok { CheckStatus::Pass } else { CheckStatus::Fail },
        Some(rank as f64),
        expected.map(|r| r as f64),
        Some(format!("rank={rank}")),
        t0.elapsed().as_millis(),
    );
    Ok(())
}

/// Deterministic pseudo-random unimodular matrices built from shears and
/// swaps.
pub fn unimodular_samples(p: usize, count: usize, seed: u64) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(count);
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 33) as usize
    };
    for _ in 0..count {
        let mut u = DMatrix::identity(p, p);
        if p == 1 {
            if next() % 2 == 0 {
                u[(0, 0)] = -1.0;
            }
        } else {
            for _ in 0..4 {
                let i = next() % p;
                let mut j = next() % p;
                if i == j {
                    j = (j + 1) % p;
                }
                let shear: f64 = match next() % 3 {
                    0 => 1.0,
                    1 => -1.0,
                    _ => 2.0,
                };
                // Row operation: row_i += shear * row_j (det unchanged).
                for c in 0..p {
                    let v = u[(j, c)];
                    u[(i, c)] += shear * v;
                }
            }
        }
        out.push(u);
    }
    out
}
