//! Scenario runner behind the `riccati-lab` binary.
//!
//! A scenario is loaded, resolved against defaults, run through the solver
//! library and written out as CSV tables plus a `summary.json`.

pub mod cli;
pub mod commands;
pub mod golden;
pub mod report;
pub mod scenario;

use std::fmt;
use std::path::{Path, PathBuf};

use riccati_lab_core::blocks::BlocksError;
use riccati_lab_core::counterexample::CounterexampleError;
use riccati_lab_core::kernels::KernelError;
use riccati_lab_core::riccati::RiccatiError;
use riccati_lab_core::spectral::SpectralError;
use riccati_lab_core::tree::TreeError;

use report::Report;
use scenario::Scenario;

/// Environment variable selecting the worker count (`0` or unset: automatic).
pub const THREADS_ENV: &str = "RICCATI_LAB_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad arguments, scenario content or model data.
    Usage(String),
    /// A solver failed on valid input.
    Numerical(String),
    Io(String),
    /// A run finished but did not match its golden summary.
    Mismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Numerical(_) | Self::Mismatch(_) => 1,
            Self::Usage(_) | Self::Io(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Numerical(m) => write!(f, "numerical failure: {m}"),
            Self::Io(m) => write!(f, "i/o error: {m}"),
            Self::Mismatch(m) => write!(f, "golden mismatch: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

fn kernel_kind(e: &KernelError) -> fn(String) -> CliError {
    match e {
        KernelError::NonFinite { .. }
        | KernelError::PathNonFinite { .. }
        | KernelError::NotSymmetric { .. } => CliError::Numerical,
        KernelError::BadGrid(_) | KernelError::InvalidArgument(_) | KernelError::Dimension(_) => {
            CliError::Usage
        }
    }
}

fn riccati_kind(e: &RiccatiError) -> fn(String) -> CliError {
    match e {
        RiccatiError::SingularR { .. } | RiccatiError::InvalidInput(_) => CliError::Usage,
        RiccatiError::SingularK { .. }
        | RiccatiError::NonFinite { .. }
        | RiccatiError::PathNonFinite { .. } => CliError::Numerical,
        RiccatiError::Kernel(k) => kernel_kind(k),
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        kernel_kind(&e)(e.to_string())
    }
}

impl From<RiccatiError> for CliError {
    fn from(e: RiccatiError) -> Self {
        riccati_kind(&e)(e.to_string())
    }
}

impl From<TreeError> for CliError {
    fn from(e: TreeError) -> Self {
        let kind = match &e {
            TreeError::RangeConditionViolated { .. } | TreeError::Infeasible { .. } => {
                CliError::Numerical
            }
            TreeError::InvalidModel(_) | TreeError::TooLarge(_) => CliError::Usage,
            TreeError::Kernel(k) => kernel_kind(k),
        };
        kind(e.to_string())
    }
}

impl From<BlocksError> for CliError {
    fn from(e: BlocksError) -> Self {
        let kind = match &e {
            BlocksError::NotConverged { .. } | BlocksError::SingularPhi { .. } => CliError::Numerical,
            BlocksError::As8Violated { .. } | BlocksError::InvalidInput(_) => CliError::Usage,
            BlocksError::Riccati(r) => riccati_kind(r),
        };
        kind(e.to_string())
    }
}

impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        let kind = match &e {
            SpectralError::BadKind(_) | SpectralError::BadN(_) | SpectralError::InvalidInput(_) => {
                CliError::Usage
            }
            SpectralError::Mode { source, .. } => riccati_kind(source),
        };
        kind(e.to_string())
    }
}

impl From<CounterexampleError> for CliError {
    fn from(e: CounterexampleError) -> Self {
        CliError::Usage(e.to_string())
    }
}

/// Sizes the global worker pool from [`THREADS_ENV`]. Results do not depend
/// on the worker count.
pub fn configure_threads() -> Result<(), CliError> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
        Err(_) => 0,
    };
    // A second initialization (tests, repeated calls) keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

/// Runs a resolved scenario without touching the filesystem.
pub fn run(scenario: &Scenario) -> Result<Report, CliError> {
    commands::run(scenario)
}

/// Runs a scenario and writes its outputs; returns the output directory.
pub fn execute(scenario: &Scenario) -> Result<(PathBuf, Report), CliError> {
    let report = run(scenario)?;
    let dir = PathBuf::from(&scenario.out_dir);
    report.write(
        Path::new(&dir),
        &scenario.name,
        scenario.command().as_str(),
        &scenario.to_json(),
    )?;
    Ok((dir, report))
}
