//! Command-line front end. Each subcommand reads the merged configuration
//! (flags > `VKPLATE_OUT` > file > defaults), runs the corresponding
//! pipeline stage, and writes its artifacts into the output directory.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 numerical
//! failure, 4 failed validation check.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::assembly::Operators;
use crate::config::{parse_seed, parse_seeds, RunConfig};
use crate::continuation::{sweep_2d, sweep_diagram, trace_branch, BifurcationDiagram, Branch, BranchPoint};
use crate::eigen::{buckling_eigs_salted, convergence_order, exact_eigenvalue, spectrum_vs_lambda};
use crate::error::{Result, VkError};
use crate::fespace::build_space;
use crate::mesh::build_mesh;
use crate::output;
use crate::rom::{
    collect_snapshots, lift, load_rom, pod, project, project_operators, rb_error_ladder,
    reduced_newton, save_rom, ReducedState,
};
use crate::validate::{results_csv_rows, Suite, CHECK_IDS};

#[derive(Parser)]
#[command(
    name = "vkplate",
    version,
    about = "Buckling analysis of simply supported plates: eigenvalues, bifurcation \
             diagrams, and reduced-order models",
    after_help = "Exit codes: 0 success, 2 configuration error, 3 numerical failure, \
                  4 failed validation check."
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Cmd,
}

/// Flags that override configuration-file values.
#[derive(Args)]
struct Overrides {
    /// Configuration file (key = value lines under [section] headers)
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output directory (also VKPLATE_OUT)
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Plate length (width is fixed at 1)
    #[arg(long, global = true)]
    l: Option<f64>,

    /// Elements along the length
    #[arg(long, global = true)]
    nx: Option<usize>,

    /// Elements across the width
    #[arg(long, global = true)]
    ny: Option<usize>,

    /// Polynomial degree of the elements (1 or 2)
    #[arg(long, global = true)]
    degree: Option<usize>,

    #[arg(long, global = true)]
    lambda_start: Option<f64>,

    #[arg(long, global = true)]
    lambda_end: Option<f64>,

    #[arg(long, global = true)]
    d_lambda: Option<f64>,

    /// Load-shape parameter
    #[arg(long, global = true)]
    psi: Option<f64>,

    /// Load-shape grid for sweep2d, e.g. "0 0.5 1"
    #[arg(long, global = true, value_name = "LIST")]
    psi_grid: Option<String>,

    /// Branch seeds, e.g. "1:1:+ 1:1:- 2:1:+"
    #[arg(long, global = true, value_name = "LIST", allow_hyphen_values = true)]
    seeds: Option<String>,

    /// Buckling threshold on the deflection ordinate
    #[arg(long, global = true)]
    delta: Option<f64>,

    #[arg(long, global = true)]
    newton_tol: Option<f64>,

    /// Number of buckling loads to compute
    #[arg(long, global = true)]
    k: Option<usize>,

    /// Largest reduced-basis width
    #[arg(long, global = true)]
    n_max: Option<usize>,

    #[arg(long, global = true)]
    energy_tol: Option<f64>,

    #[arg(long, global = true)]
    rng_seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Buckling loads and the stability spectrum (eigs.csv, spectrum.csv)
    Eigs {
        /// Print the closed-form load for mode M,N on the L-by-1 plate and exit
        #[arg(long, num_args = 3, value_names = ["M", "N", "L"])]
        exact: Option<Vec<f64>>,

        /// Estimate the convergence order of the first load over a
        /// three-mesh ladder and exit
        #[arg(long)]
        order: bool,
    },

    /// Follow one branch over the load range (diagram.csv)
    Trace {
        /// Seed for the branch, e.g. 1:1:+  (default: first configured seed)
        #[arg(long, allow_hyphen_values = true)]
        seed: Option<String>,
    },

    /// Full bifurcation diagram from all configured seeds (diagram.csv)
    Diagram {
        /// Also render diagram.svg
        #[arg(long)]
        svg: bool,
    },

    /// Train the reduced model on the first configured branch (basis.rom)
    Pod,

    /// Evaluate the reduced model against the full solver
    /// (rb_error.csv, diagram_reduced.csv)
    Online {
        /// Basis container produced by `pod` (default: OUT/basis.rom)
        #[arg(long, value_name = "FILE")]
        basis: Option<PathBuf>,

        /// Also render diagram_reduced.svg
        #[arg(long)]
        svg: bool,
    },

    /// Branch sweep over the load-shape grid (sweep2d.csv)
    Sweep2d,

    /// Run the acceptance checks and write validate.csv
    Validate {
        /// Comma-separated check ids, e.g. c01,c11 (default: all)
        #[arg(long, value_name = "IDS")]
        only: Option<String>,
    },
}

/// Parses arguments, runs the selected command, and maps errors to exit
/// codes. The binary's `main` is a one-liner around this.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap exits 0 for --help/--version and 2 for usage errors
            e.exit();
        }
    };
    let cfg = match merged_config(&cli.overrides) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match dispatch(&cli.command, &cfg) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(err: &VkError) -> i32 {
    match err {
        VkError::InvalidArgument(_)
        | VkError::UnsupportedOperation(_)
        | VkError::Config(_)
        | VkError::Io(_) => 2,
        VkError::OutOfDomain { .. }
        | VkError::SingularSystem(_)
        | VkError::EigenFailure { .. }
        | VkError::DegenerateInput(_) => 3,
    }
}

fn merged_config(ov: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(ov.config.as_deref())?;
    if let Some(v) = ov.l {
        cfg.l = v;
    }
    if let Some(v) = ov.nx {
        cfg.nx = v;
    }
    if let Some(v) = ov.ny {
        cfg.ny = v;
    }
    if let Some(v) = ov.degree {
        cfg.degree = v;
    }
    if let Some(v) = ov.lambda_start {
        cfg.lambda_start = v;
    }
    if let Some(v) = ov.lambda_end {
        cfg.lambda_end = v;
    }
    if let Some(v) = ov.d_lambda {
        cfg.d_lambda = v;
    }
    if let Some(v) = ov.psi {
        cfg.psi = v;
    }
    if let Some(s) = &ov.psi_grid {
        cfg.set("sweep", "psi_grid", s)?;
    }
    if let Some(s) = &ov.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(v) = ov.delta {
        cfg.delta = v;
    }
    if let Some(v) = ov.newton_tol {
        cfg.newton_tol = v;
    }
    if let Some(v) = ov.k {
        cfg.k = v;
    }
    if let Some(v) = ov.n_max {
        cfg.n_max = v;
    }
    if let Some(v) = ov.energy_tol {
        cfg.energy_tol = v;
    }
    if let Some(v) = ov.rng_seed {
        cfg.rng_seed = v;
    }
    if let Some(dir) = &ov.out {
        cfg.out_dir = dir.clone();
    }
    Ok(cfg)
}

fn dispatch(cmd: &Cmd, cfg: &RunConfig) -> Result<i32> {
    match cmd {
        Cmd::Eigs { exact: Some(args), .. } => cmd_exact(args),
        Cmd::Eigs { order: true, .. } => cmd_order(cfg),
        Cmd::Eigs { .. } => cmd_eigs(cfg),
        Cmd::Trace { seed } => cmd_trace(cfg, seed.as_deref()),
        Cmd::Diagram { svg } => cmd_diagram(cfg, *svg),
        Cmd::Pod => cmd_pod(cfg),
        Cmd::Online { basis, svg } => cmd_online(cfg, basis.as_deref(), *svg),
        Cmd::Sweep2d => cmd_sweep2d(cfg),
        Cmd::Validate { only } => cmd_validate(cfg, only.as_deref()),
    }
}

fn build_operators(cfg: &RunConfig) -> Result<Operators> {
    let space = build_space(build_mesh(cfg.l, cfg.nx, cfg.ny)?, cfg.degree)?;
    Ok(Operators::build(&space))
}

fn ensure_out(cfg: &RunConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    Ok(cfg.out_dir.clone())
}

fn lambda_grid_of(cfg: &RunConfig) -> Vec<f64> {
    let count = ((cfg.lambda_end - cfg.lambda_start) / cfg.d_lambda + 1e-9).floor() as usize + 1;
    (0..count)
        .map(|i| cfg.lambda_start + i as f64 * cfg.d_lambda)
        .collect()
}

fn cmd_exact(args: &[f64]) -> Result<i32> {
    let (m, n, l) = (args[0] as usize, args[1] as usize, args[2]);
    if m < 1 || n < 1 || !(l > 0.0) {
        return Err(VkError::InvalidArgument(
            "--exact needs mode indices >= 1 and a positive plate length".into(),
        ));
    }
    println!("{:.8}", exact_eigenvalue(m, n, l));
    Ok(0)
}

fn cmd_order(cfg: &RunConfig) -> Result<i32> {
    let exact = crate::validate::exact_first_load(cfg.l);
    let mut pairs = Vec::new();
    for scale in [1usize, 2, 4] {
        let (nx, ny) = (cfg.nx * scale, cfg.ny * scale);
        let space = build_space(build_mesh(cfg.l, nx, ny)?, cfg.degree)?;
        let h = space.mesh.mesh_size();
        let ops = Operators::build(&space);
        let value = buckling_eigs_salted(&ops, cfg.psi, 1, cfg.rng_seed)?[0].value;
        println!("mesh {nx}x{ny} (h = {h:.4}): first load {value:.6}");
        pairs.push((h, value));
    }
    let order = convergence_order(&pairs, exact)?;
    println!("estimated order {order:.3} (closed form {exact:.6})");
    Ok(0)
}

fn cmd_eigs(cfg: &RunConfig) -> Result<i32> {
    let out = ensure_out(cfg)?;
    let ops = build_operators(cfg)?;
    let pairs = buckling_eigs_salted(&ops, cfg.psi, cfg.k, cfg.rng_seed)?;
    output::write_eigs_csv(&out.join("eigs.csv"), &pairs, 1e-3)?;
    for (i, p) in pairs.iter().enumerate() {
        println!("load {}: {:.6}", i + 1, p.value);
    }

    let grid = lambda_grid_of(cfg);
    let trace = spectrum_vs_lambda(&ops, &grid, cfg.psi, cfg.k)?;
    output::write_spectrum_csv(&out.join("spectrum.csv"), &trace)?;
    for c in &trace.crossings {
        println!(
            "spectrum curve {} crosses zero in ({:.4}, {:.4})",
            c.curve + 1,
            c.lower,
            c.upper
        );
    }
    println!("wrote {}", out.join("eigs.csv").display());
    println!("wrote {}", out.join("spectrum.csv").display());
    Ok(0)
}

fn cmd_trace(cfg: &RunConfig, seed_flag: Option<&str>) -> Result<i32> {
    let out = ensure_out(cfg)?;
    let seed = match seed_flag {
        Some(tok) => parse_seed(tok)?,
        None => *cfg.seeds.first().ok_or_else(|| {
            VkError::Config("trace needs a seed (configure seeds or pass --seed)".into())
        })?,
    };
    let ops = build_operators(cfg)?;
    let branch = trace_branch(
        &ops,
        cfg.lambda_start,
        cfg.lambda_end,
        cfg.d_lambda,
        cfg.psi,
        seed,
        cfg.delta,
    )?;
    summarize_branch(&branch, cfg.delta);
    output::write_lines(
        &out.join("diagram.csv"),
        output::DIAGRAM_HEADER,
        &output::branch_rows(std::slice::from_ref(&branch)),
    )?;
    println!("wrote {}", out.join("diagram.csv").display());
    Ok(0)
}

fn summarize_branch(branch: &Branch, delta: f64) {
    let (m, n) = branch.seed.mode;
    let buckled = branch.first_buckled(delta).map(|i| branch.points[i].lambda);
    let end = branch.points.last();
    println!(
        "branch {m}:{n}:{}: departs at {}, final ordinate {}",
        if branch.seed.sign > 0 { '+' } else { '-' },
        buckled.map_or("never".to_string(), |l| format!("{l:.3}")),
        end.map_or("n/a".to_string(), |p| format!("{:.5}", p.ordinate)),
    );
}

fn cmd_diagram(cfg: &RunConfig, svg: bool) -> Result<i32> {
    let out = ensure_out(cfg)?;
    let ops = build_operators(cfg)?;
    let diagram = if cfg.seeds.is_empty() {
        // no seeds: only the trivial branch exists
        BifurcationDiagram {
            branches: Vec::new(),
            trivial_branch: lambda_grid_of(cfg).into_iter().map(|l| (l, 0.0)).collect(),
            detected_bifurcations: Vec::new(),
        }
    } else {
        sweep_diagram(
            &ops,
            cfg.lambda_range(),
            cfg.d_lambda,
            cfg.psi,
            &cfg.seeds,
            cfg.delta,
        )?
    };
    for branch in &diagram.branches {
        summarize_branch(branch, cfg.delta);
    }
    for lam in &diagram.detected_bifurcations {
        println!("bifurcation detected near {lam:.4}");
    }
    output::write_diagram_csv(&out.join("diagram.csv"), &diagram, cfg.psi)?;
    println!("wrote {}", out.join("diagram.csv").display());
    if svg {
        let art = output::diagram_svg(
            &diagram.branches,
            &diagram.trivial_branch,
            &diagram.detected_bifurcations,
            &format!("deflection vs load (psi = {})", cfg.psi),
        );
        std::fs::write(out.join("diagram.svg"), art)?;
        println!("wrote {}", out.join("diagram.svg").display());
    }
    Ok(0)
}

/// Trains on the first configured seed's branch and saves the basis and
/// projected operators.
fn cmd_pod(cfg: &RunConfig) -> Result<i32> {
    let out = ensure_out(cfg)?;
    let seed = *cfg.seeds.first().ok_or_else(|| {
        VkError::Config("pod needs at least one configured seed to trace".into())
    })?;
    let ops = build_operators(cfg)?;
    let branch = trace_branch(
        &ops,
        cfg.lambda_start,
        cfg.lambda_end,
        cfg.d_lambda,
        cfg.psi,
        seed,
        cfg.delta,
    )?;
    let snaps = collect_snapshots(std::slice::from_ref(&branch), cfg.snapshot_stride)?;
    println!("collected {} snapshots", snaps.len());
    let basis = pod(&ops, &snaps, cfg.n_max, cfg.energy_tol)?;
    let red = project_operators(&ops, &basis)?;
    println!(
        "basis width {}: captured energies {:?}",
        basis.n,
        basis.pod_energies[0]
            .iter()
            .map(|e| format!("{e:.2e}"))
            .collect::<Vec<_>>()
    );
    let path = out.join("basis.rom");
    save_rom(&path, &basis, &red)?;
    println!("wrote {}", path.display());
    Ok(0)
}

/// Loads the trained model, measures the accuracy/speed ladder against
/// the full solver, and traces the reduced diagram over the load grid.
fn cmd_online(cfg: &RunConfig, basis_path: Option<&std::path::Path>, svg: bool) -> Result<i32> {
    let out = ensure_out(cfg)?;
    let path = basis_path
        .map(PathBuf::from)
        .unwrap_or_else(|| out.join("basis.rom"));
    let (basis, red) = load_rom(&path)?;
    println!("loaded basis of width {} from {}", basis.n, path.display());

    let seed = *cfg.seeds.first().ok_or_else(|| {
        VkError::Config("online needs the training seed configured".into())
    })?;
    let ops = Operators::build(&basis.space);
    let branch = trace_branch(
        &ops,
        cfg.lambda_start,
        cfg.lambda_end,
        cfg.d_lambda,
        cfg.psi,
        seed,
        cfg.delta,
    )?;

    let test_points = cfg.test_points.max(2);
    let sample: Vec<f64> = (0..test_points)
        .map(|i| {
            cfg.lambda_start
                + (cfg.lambda_end - cfg.lambda_start) * i as f64 / (test_points - 1) as f64
        })
        .collect();
    let widths: Vec<usize> = (1..=basis.n).collect();
    let ladder = rb_error_ladder(&ops, &basis, &red, &branch, &sample, cfg.psi, &widths)?;
    for row in &ladder {
        println!(
            "N = {}: error {:.4e}, online {:.4} ms, full {:.2} ms",
            row.n, row.value, row.t_online_ms, row.t_full_ms
        );
    }
    output::write_rb_error_csv(&out.join("rb_error.csv"), &ladder)?;
    println!("wrote {}", out.join("rb_error.csv").display());

    // reduced diagram: march the load grid online, lift only to report
    let grid = lambda_grid_of(cfg);
    let stored: Vec<(f64, &crate::solver::State)> = branch
        .points
        .iter()
        .filter_map(|p| p.state.as_ref().map(|s| (p.lambda, s)))
        .collect();
    let mut points = Vec::with_capacity(grid.len());
    let mut prev: Option<ReducedState> = None;
    for &lambda in &grid {
        let guess = match &prev {
            Some(q) => q.clone(),
            None => {
                let (_, nearest) = stored
                    .iter()
                    .min_by(|(la, _), (lb, _)| {
                        (la - lambda).abs().total_cmp(&(lb - lambda).abs())
                    })
                    .ok_or_else(|| {
                        VkError::Config("training branch stored no states".into())
                    })?;
                project(&ops, &basis, nearest)?
            }
        };
        let (q, report) = reduced_newton(&red, &guess, lambda, cfg.psi, cfg.newton_tol, cfg.max_iter)?;
        let lifted = lift(&basis, &q);
        let ordinate = lifted.u.max_abs().0;
        if report.converged && ordinate.abs() >= cfg.delta {
            prev = Some(q);
        } else {
            prev = None;
        }
        points.push(BranchPoint {
            lambda,
            psi: cfg.psi,
            ordinate,
            converged: report.converged,
            iterations: report.iterations,
            state: None,
        });
    }
    let reduced_branch = Branch { seed, points };
    output::write_lines(
        &out.join("diagram_reduced.csv"),
        output::DIAGRAM_HEADER,
        &output::branch_rows(std::slice::from_ref(&reduced_branch)),
    )?;
    println!("wrote {}", out.join("diagram_reduced.csv").display());
    if svg {
        let art = output::diagram_svg(
            std::slice::from_ref(&reduced_branch),
            &[],
            &[],
            "reduced-model deflection vs load",
        );
        std::fs::write(out.join("diagram_reduced.svg"), art)?;
        println!("wrote {}", out.join("diagram_reduced.svg").display());
    }
    Ok(0)
}

fn cmd_sweep2d(cfg: &RunConfig) -> Result<i32> {
    let out = ensure_out(cfg)?;
    let seed = *cfg.seeds.first().ok_or_else(|| {
        VkError::Config("sweep2d needs at least one configured seed".into())
    })?;
    let ops = build_operators(cfg)?;
    let rows = sweep_2d(
        &ops,
        cfg.lambda_range(),
        cfg.d_lambda,
        &cfg.psi_grid,
        seed,
        cfg.delta,
    )?;
    for (psi, _, star) in &rows {
        println!("psi {psi}: onset at {star:.4}");
    }
    output::write_sweep2d_csv(&out.join("sweep2d.csv"), &rows)?;
    println!("wrote {}", out.join("sweep2d.csv").display());
    Ok(0)
}

fn cmd_validate(cfg: &RunConfig, only: Option<&str>) -> Result<i32> {
    let out = ensure_out(cfg)?;
    let ids: Vec<String> = match only {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => CHECK_IDS.iter().map(|s| s.to_string()).collect(),
    };
    let suite = Suite::new();
    let mut results = Vec::new();
    for id in &ids {
        let result = suite
            .run(id)
            .ok_or_else(|| VkError::Config(format!("unknown check id {id:?}")))?;
        println!("{}", result.line());
        results.push(result);
    }
    output::write_lines(
        &out.join("validate.csv"),
        "check,name,measured,bound,pass,seconds",
        &results_csv_rows(&results),
    )?;
    println!("wrote {}", out.join("validate.csv").display());
    Ok(if results.iter().all(|r| r.pass) { 0 } else { 4 })
}
