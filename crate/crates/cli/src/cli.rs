//! Argument parsing and dispatch for the `riccati-lab` binary.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use crate::golden::{Golden, DEFAULT_TOLERANCE};
use crate::scenario::{Command, Overrides, Scenario};
use crate::{configure_threads, execute, CliError};

/// Riccati equations for linear-quadratic control: solvers, verifiers and
/// reproducible experiment runs driven by JSON scenarios.
#[derive(Parser)]
#[command(name = "riccati-lab", version)]
pub struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
pub enum Cmd {
    /// Deterministic LQ Riccati equation
    Riccati(RunArgs),
    /// Stochastic LQ with deterministic coefficients
    Slq(RunArgs),
    /// Binomial-tree backward recursion
    Tree(RunArgs),
    /// Forward-backward construction of the Riccati solution
    Fbsde(RunArgs),
    /// Block-diagonal systems through the Φ-transform
    Blocks(RunArgs),
    /// Spectral Galerkin truncation of heat, wave and Schrödinger problems
    Galerkin(RunArgs),
    /// Unbounded-solution example
    Counterexample(RunArgs),
    /// Run a scenario and compare its summary with a golden file
    Verify {
        scenario: PathBuf,
        golden: PathBuf,
        #[arg(long)]
        out: Option<String>,
        /// Overwrite the golden file with this run's summary
        #[arg(long)]
        bless: bool,
    },
}

#[derive(Args)]
pub struct RunArgs {
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    out: Option<String>,
}

fn load(path: &PathBuf, overrides: &Overrides) -> Result<Scenario, CliError> {
    let mut s = Scenario::load(path)?;
    s.apply(overrides)?;
    Ok(s)
}

fn run(command: Command, args: RunArgs) -> Result<(), CliError> {
    let overrides = Overrides {
        seed: args.seed,
        paths: args.paths,
        dt: args.dt,
        out: args.out,
    };
    let s = load(&args.scenario, &overrides)?;
    if s.command() != command {
        return Err(CliError::Usage(format!(
            "{} describes a `{}` run, not `{}`",
            args.scenario.display(),
            s.command().as_str(),
            command.as_str()
        )));
    }
    let (dir, report) = execute(&s)?;
    let passed = report.checks.iter().filter(|(_, c)| c.pass).count();
    println!(
        "{}: wrote {} ({passed}/{} checks pass)",
        s.name,
        dir.display(),
        report.checks.len()
    );
    for (name, c) in report.checks.iter().filter(|(_, c)| !c.pass) {
        println!("  failed {name}: {:e} > {:e}", c.measured, c.threshold);
    }
    Ok(())
}

fn verify(scenario: PathBuf, golden: PathBuf, out: Option<String>, bless: bool) -> Result<(), CliError> {
    let overrides = Overrides {
        out,
        ..Overrides::default()
    };
    let s = load(&scenario, &overrides)?;
    let (dir, report) = execute(&s)?;
    let summary = report.summary(&s.name, s.command().as_str());
    if bless {
        let tolerance = Golden::load(&golden).map_or(DEFAULT_TOLERANCE, |g| g.tolerance);
        Golden { tolerance, summary }.save(&golden)?;
        println!("{}: blessed {}", s.name, golden.display());
        return Ok(());
    }
    let diff = Golden::load(&golden)?.diff(&summary);
    if diff.is_empty() {
        println!("{}: matches {} (outputs in {})", s.name, golden.display(), dir.display());
        Ok(())
    } else {
        for d in &diff {
            eprintln!("  {d}");
        }
        Err(CliError::Mismatch(format!("{} differences against {}", diff.len(), golden.display())))
    }
}

/// Runs one parsed command line.
pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Cmd::Riccati(a) => run(Command::Riccati, a),
        Cmd::Slq(a) => run(Command::Slq, a),
        Cmd::Tree(a) => run(Command::Tree, a),
        Cmd::Fbsde(a) => run(Command::Fbsde, a),
        Cmd::Blocks(a) => run(Command::Blocks, a),
        Cmd::Galerkin(a) => run(Command::Galerkin, a),
        Cmd::Counterexample(a) => run(Command::Counterexample, a),
        Cmd::Verify {
            scenario,
            golden,
            out,
            bless,
        } => verify(scenario, golden, out, bless),
    }
}

/// Parses `args` (program name first), runs, reports errors on stderr and
/// returns the process exit code.
pub fn main_with<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return u8::try_from(code).unwrap_or(2);
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("riccati-lab: {e}");
            e.exit_code()
        }
    }
}
