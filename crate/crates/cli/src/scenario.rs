//! Scenario files: JSON documents naming a command, its problem data, the
//! numerical settings and an output directory. Every default is filled in on
//! load so the echoed scenario reproduces a run exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Riccati,
    Slq,
    Tree,
    Fbsde,
    Blocks,
    Galerkin,
    Counterexample,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Riccati => "riccati",
            Self::Slq => "slq",
            Self::Tree => "tree",
            Self::Fbsde => "fbsde",
            Self::Blocks => "blocks",
            Self::Galerkin => "galerkin",
            Self::Counterexample => "counterexample",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            t0: 0.0,
            t_end: 1.0,
            dt: 1e-3,
            n_paths: 2000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Output {
    pub dir: Option<String>,
}

/// A coefficient given as one matrix or as one matrix per grid interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefSpec {
    Constant(Matrix),
    Piecewise { piecewise: Vec<Matrix> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// Seeded random instance; `lq` drops the noise coefficients.
    Random {
        n: usize,
        m: usize,
        seed: u64,
        #[serde(default)]
        lq: bool,
    },
    Explicit {
        n: usize,
        m: usize,
        a: Option<CoefSpec>,
        a1: Option<CoefSpec>,
        b: Option<CoefSpec>,
        c: Option<CoefSpec>,
        d: Option<CoefSpec>,
        q: Option<CoefSpec>,
        r: Option<CoefSpec>,
        g: Option<Matrix>,
    },
}

impl SystemSpec {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Self::Random { n, m, .. } | Self::Explicit { n, m, .. } => (*n, *m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemProblem {
    pub system: SystemSpec,
    /// Initial state; all ones when omitted.
    pub eta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeNodeSpec {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    pub q: Matrix,
    pub r: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TreeSpec {
    Random {
        n: usize,
        m: usize,
        depth: usize,
        seed: u64,
        adapted: Option<bool>,
        r_floor: Option<f64>,
    },
    /// The same node coefficients everywhere.
    Stationary {
        depth: usize,
        node: TreeNodeSpec,
        terminal: Matrix,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeProblem {
    pub tree: TreeSpec,
    pub eta: Option<Vec<f64>>,
    /// Random null-space shifts used for the feedback-family spread.
    pub family_draws: Option<usize>,
    /// Run the brute-force oracle; defaults to on when the tree is small enough.
    pub oracle: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatBlockSpec {
    pub lambda_hat: f64,
    pub a1: f64,
    pub b1: f64,
    pub b2: f64,
    pub q: f64,
    pub r_init: f64,
    pub r0: f64,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardSpec {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for PicardSpec {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlocksProblem {
    pub blocks: Vec<HeatBlockSpec>,
    /// Scalar initial state per block; all ones when omitted.
    pub eta: Option<Vec<f64>>,
    pub picard: Option<PicardSpec>,
    /// Cross-check the assembled value by Monte Carlo on the full system.
    pub mc_check: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralCoefSpec {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub q: f64,
    pub r_init: f64,
    pub r0: f64,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EtaSpec {
    /// Every coordinate of mode `j` equals `scale * j^(-power)`.
    Decay { power: f64, scale: Option<f64> },
    /// Explicit coefficients; modes beyond the list are zero.
    Modes { values: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GalerkinProblem {
    pub kind: String,
    pub n: usize,
    pub coefficients: Option<SpectralCoefSpec>,
    pub eta: EtaSpec,
    /// Truncation levels of the convergence table; `[n]` when omitted.
    pub levels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleProblem {
    pub eps: f64,
    /// Decreasing cutoffs for the tail statistics; `[0.1, eps]` when omitted.
    pub horizons: Option<Vec<f64>>,
    /// Paths whose full trajectories are written.
    pub trace_paths: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    Riccati(SystemProblem),
    Slq(SystemProblem),
    Tree(TreeProblem),
    Fbsde(SystemProblem),
    Blocks(BlocksProblem),
    Galerkin(GalerkinProblem),
    Counterexample(CounterexampleProblem),
}

impl Problem {
    pub fn command(&self) -> Command {
        match self {
            Self::Riccati(_) => Command::Riccati,
            Self::Slq(_) => Command::Slq,
            Self::Tree(_) => Command::Tree,
            Self::Fbsde(_) => Command::Fbsde,
            Self::Blocks(_) => Command::Blocks,
            Self::Galerkin(_) => Command::Galerkin,
            Self::Counterexample(_) => Command::Counterexample,
        }
    }

    fn to_value(&self) -> Value {
        let v = match self {
            Self::Riccati(p) | Self::Slq(p) | Self::Fbsde(p) => serde_json::to_value(p),
            Self::Tree(p) => serde_json::to_value(p),
            Self::Blocks(p) => serde_json::to_value(p),
            Self::Galerkin(p) => serde_json::to_value(p),
            Self::Counterexample(p) => serde_json::to_value(p),
        };
        v.expect("problem data serializes")
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    command: Command,
    #[serde(default)]
    problem: Value,
    #[serde(default)]
    numerics: Numerics,
    #[serde(default)]
    output: Output,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub problem: Problem,
    pub numerics: Numerics,
    pub out_dir: String,
}

/// Command-line replacements for scenario settings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub dt: Option<f64>,
    pub out: Option<String>,
}

impl Scenario {
    pub fn command(&self) -> Command {
        self.problem.command()
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("scenario")
            .to_string();
        Self::parse(&text, &stem)
    }

    pub fn parse(text: &str, default_name: &str) -> Result<Self, CliError> {
        let raw: RawScenario = serde_json::from_str(text)
            .map_err(|e| CliError::Usage(format!("scenario: {e}")))?;
        let problem_err = |e: serde_json::Error| CliError::Usage(format!("problem: {e}"));
        let p = raw.problem;
        let problem = match raw.command {
            Command::Riccati => Problem::Riccati(serde_json::from_value(p).map_err(problem_err)?),
            Command::Slq => Problem::Slq(serde_json::from_value(p).map_err(problem_err)?),
            Command::Tree => Problem::Tree(serde_json::from_value(p).map_err(problem_err)?),
            Command::Fbsde => Problem::Fbsde(serde_json::from_value(p).map_err(problem_err)?),
            Command::Blocks => Problem::Blocks(serde_json::from_value(p).map_err(problem_err)?),
            Command::Galerkin => Problem::Galerkin(serde_json::from_value(p).map_err(problem_err)?),
            Command::Counterexample => {
                Problem::Counterexample(serde_json::from_value(p).map_err(problem_err)?)
            }
        };
        let name = raw.name.unwrap_or_else(|| default_name.to_string());
        let out_dir = raw.output.dir.unwrap_or_else(|| format!("out/{name}"));
        let mut scenario = Self {
            name,
            problem,
            numerics: raw.numerics,
            out_dir,
        };
        scenario.resolve();
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(seed) = o.seed {
            self.numerics.seed = seed;
        }
        if let Some(paths) = o.paths {
            self.numerics.n_paths = paths;
        }
        if let Some(dt) = o.dt {
            self.numerics.dt = dt;
        }
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
        self.validate()
    }

    /// Fills every optional field with its default.
    fn resolve(&mut self) {
        let ones = |n: usize| vec![1.0; n];
        match &mut self.problem {
            Problem::Riccati(p) | Problem::Slq(p) | Problem::Fbsde(p) => {
                let (n, m) = p.system.dims();
                p.eta.get_or_insert_with(|| ones(n));
                if let SystemSpec::Explicit {
                    a, a1, b, c, d, q, r, g, ..
                } = &mut p.system
                {
                    let zeros = |rows: usize, cols: usize| vec![vec![0.0; cols]; rows];
                    let eye = (0..m)
                        .map(|i| (0..m).map(|j| f64::from(u8::from(i == j))).collect())
                        .collect();
                    for (slot, rows, cols) in [(a, n, n), (a1, n, n), (b, n, m), (c, n, n), (d, n, m), (q, n, n)] {
                        slot.get_or_insert_with(|| CoefSpec::Constant(zeros(rows, cols)));
                    }
                    r.get_or_insert(CoefSpec::Constant(eye));
                    g.get_or_insert_with(|| zeros(n, n));
                }
            }
            Problem::Tree(p) => {
                if let TreeSpec::Random { adapted, r_floor, .. } = &mut p.tree {
                    adapted.get_or_insert(true);
                    r_floor.get_or_insert(0.5);
                }
                let n = match &p.tree {
                    TreeSpec::Random { n, .. } => *n,
                    TreeSpec::Stationary { terminal, .. } => terminal.len(),
                };
                p.eta.get_or_insert_with(|| ones(n));
                p.family_draws.get_or_insert(8);
                let depth = match &p.tree {
                    TreeSpec::Random { depth, .. } | TreeSpec::Stationary { depth, .. } => *depth,
                };
                p.oracle
                    .get_or_insert(depth <= riccati_lab_core::tree::MAX_ORACLE_DEPTH.min(10));
            }
            Problem::Blocks(p) => {
                p.eta.get_or_insert_with(|| ones(p.blocks.len()));
                p.picard.get_or_insert_with(PicardSpec::default);
                p.mc_check.get_or_insert(false);
            }
            Problem::Galerkin(p) => {
                let d = riccati_lab_core::spectral::SpectralCoefficients::default();
                p.coefficients.get_or_insert(SpectralCoefSpec {
                    a1: d.a1,
                    a2: d.a2,
                    b1: d.b1,
                    b2: d.b2,
                    q: d.q,
                    r_init: d.r_init,
                    r0: d.r0,
                    g: d.g,
                });
                if let EtaSpec::Decay { scale, .. } = &mut p.eta {
                    scale.get_or_insert(1.0);
                }
                p.levels.get_or_insert_with(|| vec![p.n]);
            }
            Problem::Counterexample(p) => {
                let eps = p.eps;
                p.horizons
                    .get_or_insert_with(|| if eps < 0.1 { vec![0.1, eps] } else { vec![eps] });
                p.trace_paths.get_or_insert_with(Vec::new);
            }
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let n = &self.numerics;
        let bad = |field: &str, why: &str| Err(CliError::Usage(format!("numerics.{field}: {why}")));
        if !(n.t0.is_finite() && n.t_end.is_finite() && n.t_end > n.t0) {
            return bad("t_end", "must be finite and greater than t0");
        }
        if !(n.dt > 0.0 && n.dt <= n.t_end - n.t0) {
            return bad("dt", "must be positive and at most t_end - t0");
        }
        if n.n_paths == 0 {
            return bad("n_paths", "must be at least 1");
        }
        if self.command() == Command::Counterexample && n.t0 != 0.0 {
            return bad("t0", "the counterexample starts at 0");
        }
        if self.out_dir.is_empty() {
            return Err(CliError::Usage("output.dir: must not be empty".into()));
        }
        Ok(())
    }

    /// The resolved scenario with all defaults spelled out.
    pub fn to_json(&self) -> Value {
        serde_json::json!({
            "name": self.name,
            "command": self.command(),
            "problem": self.problem.to_value(),
            "numerics": self.numerics,
            "output": { "dir": self.out_dir },
        })
    }
}
