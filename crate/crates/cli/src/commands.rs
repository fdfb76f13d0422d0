//! One runner per command: builds the model from the resolved scenario,
//! calls the solvers and verifiers, and collects tables, values and checks.

use riccati_lab_core::blocks::{
    assemble_blocks, phi_picard_solve, validate_as8, BlockSet, HeatModeData, PhiBlock, PhiOptions,
};
use riccati_lab_core::counterexample::{
    bsre_residual_check, simulate_with, trace_path, unboundedness_statistic, CounterexampleConfig,
};
use riccati_lab_core::fbsde::simulate_construction;
use riccati_lab_core::kernels::{max_abs, path_rng, Mat, TimeGrid, Vector};
use riccati_lab_core::riccati::{
    adjoint_identity_check, completion_of_squares_check, feedback_value, lyapunov_cost, mc_cost,
    random_instance, random_lq_instance, solve_bsre_det, solve_riccati_det, transposition_identity_check,
    Coefficient, CoefficientSet, InitialState, NodeFeedback, RiccatiSolution, TranspositionInputs,
};
use riccati_lab_core::spectral::{
    build_model, galerkin_convergence, hs_embedding_check, SpectralCoefficients, SpectralKind,
};
use riccati_lab_core::tree::{
    feedback_family_check, qp_oracle, random_tree_model, solve_bsre_tree, tree_completion_check,
    RandomTreeOptions, TreeCoefficients, TreeModel, MAX_ORACLE_CONTROLS,
};
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use crate::report::{matrix, num, Cell, Report, Table};
use crate::scenario::{
    BlocksProblem, CoefSpec, CounterexampleProblem, EtaSpec, GalerkinProblem, Matrix, Numerics,
    Problem, Scenario, SystemProblem, SystemSpec, TreeNodeSpec, TreeProblem, TreeSpec,
};
use crate::CliError;

pub fn run(s: &Scenario) -> Result<Report, CliError> {
    let n = &s.numerics;
    match &s.problem {
        Problem::Riccati(p) => riccati(p, n),
        Problem::Slq(p) => slq(p, n),
        Problem::Fbsde(p) => fbsde(p, n),
        Problem::Tree(p) => tree(p, n),
        Problem::Blocks(p) => blocks(p, n),
        Problem::Galerkin(p) => galerkin(p, n),
        Problem::Counterexample(p) => counterexample(p, n),
    }
}

fn grid(n: &Numerics) -> Result<TimeGrid, CliError> {
    TimeGrid::with_step(n.t0, n.t_end, n.dt).map_err(|e| CliError::Usage(format!("numerics: {e}")))
}

fn to_mat(m: &Matrix, rows: usize, cols: usize, field: &str) -> Result<Mat, CliError> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(CliError::Usage(format!("{field}: expected a {rows}x{cols} matrix")));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::Usage(format!("{field}: entries must be finite")));
    }
    Ok(Mat::from_fn(rows, cols, |i, j| m[i][j]))
}

fn coefficient(
    spec: &Option<CoefSpec>,
    rows: usize,
    cols: usize,
    grid: &TimeGrid,
    field: &str,
) -> Result<Coefficient, CliError> {
    match spec {
        None => Ok(Coefficient::zeros(rows, cols)),
        Some(CoefSpec::Constant(m)) => Ok(Coefficient::Constant(to_mat(m, rows, cols, field)?)),
        Some(CoefSpec::Piecewise { piecewise }) => {
            if piecewise.len() != grid.steps() {
                return Err(CliError::Usage(format!(
                    "{field}: {} pieces for a grid of {} steps",
                    piecewise.len(),
                    grid.steps()
                )));
            }
            let values = piecewise
                .iter()
                .enumerate()
                .map(|(k, m)| to_mat(m, rows, cols, &format!("{field}[{k}]")))
                .collect::<Result<_, _>>()?;
            Ok(Coefficient::Piecewise {
                grid: *grid,
                values,
            })
        }
    }
}

pub fn system(spec: &SystemSpec, grid: &TimeGrid) -> Result<CoefficientSet, CliError> {
    match spec {
        SystemSpec::Random { n, m, seed, lq } => {
            if *n == 0 || *m == 0 {
                return Err(CliError::Usage("problem.system: n and m must be positive".into()));
            }
            Ok(if *lq {
                random_lq_instance(*n, *m, *seed)
            } else {
                random_instance(*n, *m, *seed)
            })
        }
        SystemSpec::Explicit {
            n,
            m,
            a,
            a1,
            b,
            c,
            d,
            q,
            r,
            g,
        } => {
            let (n, m) = (*n, *m);
            let f = |name: &str| format!("problem.system.{name}");
            let mut set = CoefficientSet::new(n, m)
                .with_a(coefficient(a, n, n, grid, &f("a"))?)
                .with_a1(coefficient(a1, n, n, grid, &f("a1"))?)
                .with_b(coefficient(b, n, m, grid, &f("b"))?)
                .with_c(coefficient(c, n, n, grid, &f("c"))?)
                .with_d(coefficient(d, n, m, grid, &f("d"))?)
                .with_q(coefficient(q, n, n, grid, &f("q"))?);
            if r.is_some() {
                set = set.with_r(coefficient(r, m, m, grid, &f("r"))?);
            }
            if let Some(g) = g {
                set = set.with_g(to_mat(g, n, n, &f("g"))?);
            }
            Ok(set)
        }
    }
}

fn vector(v: &Option<Vec<f64>>, dim: usize, field: &str) -> Result<Vector, CliError> {
    let v = v.as_ref().ok_or_else(|| CliError::Usage(format!("{field}: missing")))?;
    if v.len() != dim || v.iter().any(|x| !x.is_finite()) {
        return Err(CliError::Usage(format!("{field}: expected {dim} finite entries")));
    }
    Ok(Vector::from_column_slice(v))
}

fn entry_names(prefix: &str, rows: usize, cols: usize) -> Vec<String> {
    (0..rows)
        .flat_map(|i| (0..cols).map(move |j| format!("{prefix}_{i}_{j}")))
        .collect()
}

fn entries(m: &Mat) -> impl Iterator<Item = Cell> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| Cell::Float(m[(i, j)])))
}

fn trajectory_table(sol: &RiccatiSolution, n: usize, m: usize) -> Table {
    let mut header = vec!["t".to_string()];
    header.extend(entry_names("p", n, n));
    header.extend(entry_names("theta", m, n));
    let mut t = Table::with_header("trajectory.csv", header);
    for (k, time) in sol.grid.times().enumerate() {
        let mut row = vec![Cell::Float(time)];
        row.extend(entries(&sol.p[k]));
        row.extend(entries(&sol.theta[k]));
        t.push(row);
    }
    t
}

fn riccati(p: &SystemProblem, num_: &Numerics) -> Result<Report, CliError> {
    let grid = grid(num_)?;
    let coeffs = system(&p.system, &grid)?;
    let eta = vector(&p.eta, coeffs.n, "problem.eta")?;
    let sol = solve_riccati_det(&coeffs, &grid)?;
    let init = InitialState::Point(eta.clone());
    let value = feedback_value(&sol, &init)?;
    let lyap = lyapunov_cost(&coeffs, |t| sol.theta_at(&coeffs, t), &init, &grid)?;
    let adjoint = adjoint_identity_check(&sol, &coeffs, &eta)?;

    let mut r = Report::default();
    r.tables.push(trajectory_table(&sol, coeffs.n, coeffs.m));
    r.scalar("value", value);
    r.scalar("lyapunov_cost", lyap.value);
    r.value("p0", matrix(sol.p0()));
    r.scalar("adjoint_dynamics_residual", adjoint.dynamics);
    r.scalar("adjoint_terminal_residual", adjoint.terminal);
    r.check_le("adjoint_residual", adjoint.max(), 1e-6);
    r.check_le("value_vs_lyapunov", (value - lyap.value).abs(), 1e-6 * (1.0 + value.abs()));
    Ok(r)
}

fn slq(p: &SystemProblem, num_: &Numerics) -> Result<Report, CliError> {
    let grid = grid(num_)?;
    let coeffs = system(&p.system, &grid)?;
    let (n, m) = (coeffs.n, coeffs.m);
    let eta = vector(&p.eta, n, "problem.eta")?;
    let sol = solve_bsre_det(&coeffs, &grid)?;
    let init = InitialState::Point(eta.clone());
    let value = feedback_value(&sol, &init)?;
    let lyap = lyapunov_cost(&coeffs, |t| sol.theta_at(&coeffs, t), &init, &grid)?;
    let (paths, seed) = (num_.n_paths, num_.seed);
    let mc = mc_cost(&coeffs, &NodeFeedback(&sol.theta), &eta, &grid, paths, seed)?;
    let detour = |k: usize, t: f64, x: &Vector| &sol.theta[k] * x + Vector::from_element(m, 0.3 * t.cos());
    let completion = completion_of_squares_check(&coeffs, &sol, &detour, &eta, paths, seed)?;
    let inputs = TranspositionInputs {
        xi1: eta.clone(),
        xi2: Vector::from_element(n, 0.5),
        u1: Box::new(move |t| Vector::from_element(n, 0.2 * t.sin())),
        u2: Box::new(move |_| Vector::zeros(n)),
        v1: Box::new(move |_| Vector::from_element(m, 0.3)),
        v2: Box::new(move |t| Vector::from_element(m, 0.1 * t.cos())),
    };
    let transposition = transposition_identity_check(&coeffs, &sol, &inputs, paths, seed)?;

    let dt = grid.dt();
    let slack = 5.0 * dt * (1.0 + value.abs());
    let mut r = Report::default();
    r.tables.push(trajectory_table(&sol, n, m));
    r.scalar("value", value);
    r.value("p0", matrix(sol.p0()));
    r.scalar("lyapunov_cost", lyap.value);
    r.value("mc_cost", json!({ "value": num(mc.value), "stderr": num(mc.stderr), "n_paths": paths }));
    r.value(
        "completion_residual",
        json!({ "residual": num(completion.residual), "stderr": num(completion.stderr) }),
    );
    r.value(
        "transposition_residual",
        json!({ "residual": num(transposition.residual), "stderr": num(transposition.stderr) }),
    );
    r.check_le("value_vs_lyapunov", (value - lyap.value).abs(), 1e-6 * (1.0 + value.abs()));
    r.check_le("value_vs_mc", (value - mc.value).abs(), 3.0 * mc.stderr + slack);
    r.check_le(
        "completion_of_squares",
        completion.residual.abs(),
        3.0 * completion.stderr + slack,
    );
    r.check_le(
        "transposition",
        transposition.residual.abs(),
        3.0 * transposition.stderr + 5.0 * dt,
    );
    Ok(r)
}

fn fbsde(p: &SystemProblem, num_: &Numerics) -> Result<Report, CliError> {
    let grid = grid(num_)?;
    let coeffs = system(&p.system, &grid)?;
    let sol = solve_bsre_det(&coeffs, &grid)?;
    let state = simulate_construction(&coeffs, &sol, num_.n_paths, num_.seed)?;
    let d = &state.diagnostics;
    let mut t = Table::new(
        "diagnostics.csv",
        &["t", "err_inverse", "err_p", "err_lambda", "bsde_residual"],
    );
    for k in 0..d.times.len() {
        t.push(vec![
            d.times[k].into(),
            d.err_inverse[k].into(),
            d.err_p[k].into(),
            d.err_lambda[k].into(),
            d.bsde_residual[k].into(),
        ]);
    }
    let mut r = Report::default();
    r.tables.push(t);
    r.scalar("mean_path_max_inverse", d.mean_path_max_inverse);
    r.scalar("max_err_inverse", state.max_err_inverse());
    r.scalar("max_err_p", state.max_err_p());
    r.scalar("max_err_lambda", state.max_err_lambda());
    r.scalar("max_bsde_residual", riccati_lab_core::fbsde::bsde_residual(&state));
    r.check_le("terminal_mismatch", d.terminal_mismatch, 0.0);
    Ok(r)
}

fn tree_node(spec: &TreeNodeSpec, n: usize, m: usize) -> Result<TreeCoefficients, CliError> {
    let f = |name: &str| format!("problem.tree.node.{name}");
    Ok(TreeCoefficients {
        a: to_mat(&spec.a, n, n, &f("a"))?,
        b: to_mat(&spec.b, n, m, &f("b"))?,
        c: to_mat(&spec.c, n, n, &f("c"))?,
        d: to_mat(&spec.d, n, m, &f("d"))?,
        q: to_mat(&spec.q, n, n, &f("q"))?,
        r: to_mat(&spec.r, m, m, &f("r"))?,
    })
}

pub fn tree_model(spec: &TreeSpec) -> Result<TreeModel, CliError> {
    Ok(match spec {
        TreeSpec::Random {
            n,
            m,
            depth,
            seed,
            adapted,
            r_floor,
        } => random_tree_model(
            *n,
            *m,
            *depth,
            *seed,
            RandomTreeOptions {
                adapted: adapted.unwrap_or(true),
                r_floor: r_floor.unwrap_or(0.5),
            },
        )?,
        TreeSpec::Stationary {
            depth,
            node,
            terminal,
        } => {
            let n = terminal.len();
            let m = node.b.first().map_or(0, Vec::len);
            let g = to_mat(terminal, n, n, "problem.tree.terminal")?;
            TreeModel::deterministic(*depth, tree_node(node, n, m)?, g)?
        }
    })
}

fn tree(p: &TreeProblem, num_: &Numerics) -> Result<Report, CliError> {
    let model = tree_model(&p.tree)?;
    let (n, m, depth) = (model.n, model.m, model.depth);
    let eta = vector(&p.eta, n, "problem.eta")?;
    let sol = solve_bsre_tree(&model)?;
    let value = 0.5 * eta.dot(&(sol.p0() * &eta));
    let controls: Vec<Vec<Vector>> = (0..depth)
        .map(|k| {
            let mut rng = path_rng(num_.seed, k);
            (0..1usize << k)
                .map(|_| Vector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal)))
                .collect()
        })
        .collect();
    let completion = tree_completion_check(&model, &sol, &controls, &eta)?;
    let spread = feedback_family_check(&model, &sol, p.family_draws.unwrap_or(8), num_.seed)?;

    let mut header = vec!["k".to_string(), "h".to_string(), "feasible".to_string()];
    header.extend(entry_names("p", n, n));
    header.extend(entry_names("lambda", n, n));
    header.extend(entry_names("theta", m, n));
    let mut t = Table::with_header("nodes.csv", header);
    for k in 0..=depth {
        for h in 0..1usize << k {
            let mut row: Vec<Cell> = vec![k.into(), h.into()];
            row.push(if k < depth { sol.feasible[k][h] } else { true }.into());
            row.extend(entries(&sol.p[k][h]));
            row.extend(entries(&sol.lambda[k][h]));
            if k < depth {
                row.extend(entries(&sol.theta[k][h]));
            } else {
                row.extend((0..m * n).map(|_| Cell::Float(f64::NAN)));
            }
            t.push(row);
        }
    }

    let mut r = Report::default();
    r.tables.push(t);
    r.scalar("value", value);
    r.value("p0", matrix(sol.p0()));
    r.scalar("completion_residual", completion);
    r.scalar("feedback_family_spread", spread);
    let scale = 1.0 + value.abs();
    r.check_le("completion_of_squares", completion.abs(), 1e-10 * scale);
    r.check_le("feedback_family_spread", spread, 1e-10 * scale);
    if p.oracle.unwrap_or(false) && model.control_dim() <= MAX_ORACLE_CONTROLS {
        let qp = qp_oracle(&model, &eta)?;
        r.value("oracle", json!({ "value": num(qp.value), "singular": qp.singular }));
        r.check_le("oracle_vs_recursion", (qp.value - value).abs(), 1e-9 * scale);
    }
    Ok(r)
}

pub fn heat_block(spec: &crate::scenario::HeatBlockSpec) -> HeatModeData {
    HeatModeData {
        lambda_hat: spec.lambda_hat,
        a1: spec.a1,
        b1: spec.b1,
        b2: spec.b2,
        q: spec.q,
        r_init: spec.r_init,
        r0: spec.r0,
        g: spec.g,
    }
}

fn blocks(p: &BlocksProblem, num_: &Numerics) -> Result<Report, CliError> {
    if p.blocks.is_empty() {
        return Err(CliError::Usage("problem.blocks: at least one block".into()));
    }
    let grid = grid(num_)?;
    let etas: Vec<Vector> = vector(&p.eta, p.blocks.len(), "problem.eta")?
        .iter()
        .map(|v| Vector::from_element(1, *v))
        .collect();
    let picard = p.picard.clone().unwrap_or_default();
    let opts = PhiOptions {
        max_iter: picard.max_iter,
        tol: picard.tol,
    };
    let blocks: Vec<PhiBlock> = p.blocks.iter().map(|b| heat_block(b).block()).collect();
    let set = BlockSet::new(blocks, 1)?;
    let asm = assemble_blocks(&set, &grid, &etas)?;

    let mut table = Table::new(
        "blocks.csv",
        &[
            "block",
            "lambda_hat",
            "as8_identity_residual",
            "as8_margin",
            "picard_iterations",
            "picard_gap",
            "p_error",
            "value_contribution",
        ],
    );
    let mut gaps = Table::new("picard.csv", &["block", "iteration", "gap"]);
    let (mut worst_identity, mut worst_margin, mut worst_p) = (0.0f64, f64::INFINITY, 0.0f64);
    for (i, block) in set.blocks.iter().enumerate() {
        let as8 = validate_as8(block, &grid);
        let phi = phi_picard_solve(block, &grid, &opts)?;
        let p_err = phi
            .p
            .iter()
            .zip(&asm.solutions[i].p)
            .map(|(a, b)| max_abs(&(a - b)))
            .fold(0.0, f64::max);
        for it in &phi.iterates {
            gaps.push(vec![i.into(), it.index.into(), it.gap.into()]);
        }
        table.push(vec![
            i.into(),
            p.blocks[i].lambda_hat.into(),
            as8.identity_residual.into(),
            as8.margin.into(),
            phi.iterations().into(),
            phi.iterates.last().map_or(f64::NAN, |it| it.gap).into(),
            p_err.into(),
            asm.contributions[i].into(),
        ]);
        worst_identity = worst_identity.max(as8.identity_residual);
        worst_margin = worst_margin.min(as8.margin);
        worst_p = worst_p.max(p_err);
    }

    let mut r = Report::default();
    r.tables.push(table);
    r.tables.push(gaps);
    r.scalar("total_value", asm.total);
    r.check_le("as8_identity", worst_identity, 1e-10);
    r.check_le("as8_margin", -worst_margin, 1e-10);
    r.check_le("picard_vs_direct", worst_p, 1e-6);
    if p.mc_check.unwrap_or(false) {
        let full = set.to_coefficient_set();
        let eta = Vector::from_iterator(etas.len(), etas.iter().map(|e| e[0]));
        let theta = asm.theta();
        let mc = mc_cost(&full, &NodeFeedback(&theta), &eta, &grid, num_.n_paths, num_.seed)?;
        r.value("mc_cost", json!({ "value": num(mc.value), "stderr": num(mc.stderr) }));
        r.check_le(
            "assembled_vs_mc",
            (mc.value - asm.total).abs(),
            3.0 * mc.stderr + 5.0 * grid.dt() * (1.0 + asm.total.abs()),
        );
    }
    Ok(r)
}

pub fn spectral_coefficients(spec: &crate::scenario::SpectralCoefSpec) -> SpectralCoefficients {
    SpectralCoefficients {
        a1: spec.a1,
        a2: spec.a2,
        b1: spec.b1,
        b2: spec.b2,
        q: spec.q,
        r_init: spec.r_init,
        r0: spec.r0,
        g: spec.g,
    }
}

fn galerkin(p: &GalerkinProblem, num_: &Numerics) -> Result<Report, CliError> {
    let grid = grid(num_)?;
    let kind: SpectralKind = p.kind.parse()?;
    let coeffs = p
        .coefficients
        .as_ref()
        .map_or_else(SpectralCoefficients::default, spectral_coefficients);
    let model = build_model(kind, p.n, coeffs)?;
    let dim = kind.mode_dim();
    if let EtaSpec::Modes { values } = &p.eta {
        if let Some(bad) = values.iter().position(|v| v.len() != dim) {
            return Err(CliError::Usage(format!(
                "problem.eta.values[{bad}]: expected {dim} entries"
            )));
        }
    }
    let eta = |j: usize| match &p.eta {
        EtaSpec::Decay { power, scale } => {
            Vector::from_element(dim, scale.unwrap_or(1.0) * (j as f64).powf(-power))
        }
        EtaSpec::Modes { values } => values
            .get(j - 1)
            .map_or_else(|| Vector::zeros(dim), |v| Vector::from_column_slice(v)),
    };
    let levels = p.levels.clone().unwrap_or_else(|| vec![p.n]);
    let study = galerkin_convergence(&model, eta, &levels, &grid)?;
    let hs = hs_embedding_check(&model, p.n)?;
    let top = *levels.last().expect("validated levels");
    let margins: Vec<f64> = (1..=top)
        .map(|j| model.as8_margin(j, &grid).unwrap_or(f64::NAN))
        .collect();

    let mut table = Table::new(
        "galerkin.csv",
        &["N", "mode", "value_contribution", "as8_margin", "hs_partial_sum"],
    );
    for &n in &levels {
        for j in 1..=n {
            table.push(vec![
                n.into(),
                j.into(),
                study.solution.contributions[j - 1].into(),
                margins[j - 1].into(),
                hs.weight_partial[j - 1].into(),
            ]);
        }
    }
    let mut conv = Table::new("convergence.csv", &["N", "value", "gap"]);
    for row in &study.rows {
        conv.push(vec![row.n.into(), row.value.into(), row.gap.unwrap_or(f64::NAN).into()]);
    }
    let gaps: Vec<f64> = study.rows.iter().filter_map(|r| r.gap).collect();
    let min_p = study
        .solution
        .min_p_eigenvalue
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);

    let mut r = Report::default();
    r.tables.push(table);
    r.tables.push(conv);
    r.value("kind", json!(kind.as_str()));
    r.scalar("value", study.rows.last().map_or(f64::NAN, |row| row.value));
    r.scalar("hs_partial_sum", hs.weight_partial[p.n - 1]);
    r.value("hs_tail", hs.weight_tail.map_or(serde_json::Value::Null, num));
    r.check_le("mode_values_psd", (-min_p).max(0.0), 1e-10);
    r.check_flag("gaps_nonincreasing", gaps.windows(2).all(|w| w[1] <= w[0]));
    Ok(r)
}

fn counterexample(p: &CounterexampleProblem, num_: &Numerics) -> Result<Report, CliError> {
    let horizons = p.horizons.clone().unwrap_or_else(|| vec![p.eps]);
    let mut config = CounterexampleConfig::new(num_.t_end, num_.dt, p.eps, num_.n_paths, num_.seed);
    config.checkpoints.extend(horizons.iter().copied());
    config.checkpoints.sort_by(|a, b| b.total_cmp(a));
    config.checkpoints.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    let batch = simulate_with(&config)?;
    let residual = bsre_residual_check(&batch);
    let rows = unboundedness_statistic(&batch, &horizons)?;

    let mut stats = Table::new(
        "horizons.csv",
        &["eps", "exp_mean", "exp_stderr", "theta_q50", "theta_q90", "theta_q99"],
    );
    for row in &rows {
        let q = row.theta_quantiles.unwrap_or([f64::NAN; 3]);
        stats.push(vec![
            row.eps.into(),
            row.exp_mean.into(),
            row.exp_stderr.into(),
            q[0].into(),
            q[1].into(),
            q[2].into(),
        ]);
    }
    let b = batch.bounds;
    let mut bounds = Table::new(
        "bounds.csv",
        &[
            "n_paths",
            "crossed",
            "i_violations",
            "y_violations",
            "p_violations",
            "worst_overshoot_ratio",
        ],
    );
    bounds.push(vec![
        b.n_paths.into(),
        b.crossed.into(),
        b.i_violations.into(),
        b.y_violations.into(),
        b.p_violations.into(),
        b.worst_overshoot_ratio.into(),
    ]);

    let mut r = Report::default();
    r.tables.push(stats);
    r.tables.push(bounds);
    for &path in p.trace_paths.as_deref().unwrap_or(&[]) {
        let tr = trace_path(&config, path)?;
        let mut t = Table::new(
            &format!("trace_{path}.csv"),
            &["t", "m", "zeta", "i", "y", "z", "p", "lambda", "theta"],
        );
        for k in 0..tr.times.len() {
            t.push(
                [tr.times[k], tr.m[k], tr.zeta[k], tr.i[k], tr.y[k], tr.z[k], tr.p[k], tr.lambda[k], tr.theta[k]]
                    .into_iter()
                    .map(Cell::Float)
                    .collect(),
            );
        }
        r.tables.push(t);
    }
    r.value(
        "residual",
        json!({ "mean": num(residual.mean), "stderr": num(residual.stderr) }),
    );
    r.value(
        "exp_moment",
        serde_json::Value::Array(rows.iter().map(|row| json!([num(row.eps), num(row.exp_mean)])).collect()),
    );
    r.check_le("i_bound_violations", b.i_violations as f64, 0.0);
    r.check_le("y_bound_violations", b.y_violations as f64, 0.0);
    r.check_le("residual_within_3se", residual.mean.abs(), 3.0 * residual.stderr);
    r.check_flag(
        "exp_moment_increasing",
        rows.windows(2).all(|w| w[1].exp_mean > w[0].exp_mean),
    );
    Ok(r)
}
