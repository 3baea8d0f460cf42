//! `dirac-aa`: run verification pipelines over scenario files.
//!
//! Exit codes: 0 all checks pass, 1 check failures, 2 scenario parse or
//! validation errors, 3 numeric failures (integration, Newton, quadrature).

use clap::{Parser, Subcommand};
use dirac_aa_core::runner::{self, Command as RunCommand, RunConfig};
use dirac_aa_core::scenario::Scenario;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dirac-aa",
    about = "Dirac structures, Liouville tori and action-angle verification on coordinate charts",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Multiply every pass/fail threshold by this factor.
    #[arg(long, default_value_t = 1.0)]
    tol_scale: f64,
    /// Number of quasi-random sample points for field-level checks.
    #[arg(long, default_value_t = 128)]
    samples: usize,
    /// Override the per-angle torus quadrature grid size.
    #[arg(long)]
    grid: Option<usize>,
    /// Output directory for the report and data files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Halton scramble seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report as JSON instead of structured text.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Isotropy, rank, Courant closedness and the bi-corank map.
    CheckDirac(CommonArgs),
    /// Integrability, regularity and Hamiltonian binding.
    CheckSystem(CommonArgs),
    /// Period lattice and torus chart at the seed point.
    FindTorus(CommonArgs),
    /// Tensor averaging and structure-preservation residuals.
    Average(CommonArgs),
    /// Action 1-forms, path-integral and loop-integral action tables.
    Actions(CommonArgs),
    /// Full/partial action-angle residuals, co-affine transitions, ranks.
    VerifyAa(CommonArgs),
    /// Everything applicable to the scenario.
    All(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        Cmd::CheckDirac(a) => (RunCommand::CheckDirac, a),
        Cmd::CheckSystem(a) => (RunCommand::CheckSystem, a),
        Cmd::FindTorus(a) => (RunCommand::FindTorus, a),
        Cmd::Average(a) => (RunCommand::Average, a),
        Cmd::Actions(a) => (RunCommand::Actions, a),
        Cmd::VerifyAa(a) => (RunCommand::VerifyAa, a),
        Cmd::All(a) => (RunCommand::All, a),
    };

    let scenario = match Scenario::load(&args.scenario) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    let config = RunConfig {
        samples: args.samples,
        seed: args.seed,
        grid: args.grid,
        tol_scale: args.tol_scale,
    };
    let result = runner::run(&scenario, command, &config);

    // Write artifacts.
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        eprintln!("cannot create output directory: {e}");
        return ExitCode::from(2);
    }
    let report_text = result.report.render_text();
    print!("{report_text}");
    let write = |path: PathBuf, content: &str| -> std::io::Result<()> {
        std::fs::write(path, content)
    };
    let io_result = if args.json {
        write(args.out.join("report.json"), &result.report.render_json())
    } else {
        write(args.out.join("report.txt"), &report_text)
    };
    if let Err(e) = io_result {
        eprintln!("cannot write report: {e}");
        return ExitCode::from(2);
    }
    if let Some(table) = &result.action_table {
        let csv = table.render_csv();
        if let Err(e) = write(args.out.join("actions.csv"), &csv) {
            eprintln!("cannot write actions.csv: {e}");
            return ExitCode::from(2);
        }
        let plotdir = args.out.join("plotdata");
        if let Err(e) =
            std::fs::create_dir_all(&plotdir).and_then(|_| write(plotdir.join("actions.dat"), &table.render_plotdata()))
        {
            eprintln!("cannot write plot data: {e}");
            return ExitCode::from(2);
        }
    }
    if let Some(nf) = &result.report.numeric_failure {
        eprintln!("numeric failure: {nf}");
    }
    ExitCode::from(result.exit_code() as u8)
}
