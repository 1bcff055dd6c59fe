//! `rotland`: generate problems, solve them, map their minima, certify
//! local convexity and run parameter sweeps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use rotland::atlas::{atlas_from_results, sweep_with_atlases, write_sweep_csv, AtlasOptions, SweepSpec};
use rotland::certify::certify;
use rotland::graphmodel::{
    generate_instance, read_problem, read_solution, write_problem, write_solution, GraphSpec, ProblemMeta,
};
use rotland::solver::{random_restart_campaign, solve_local, write_campaign, CurvatureModel, SolveOptions};
use rotland::{rng_from_seed, Error, NoiseSpec, Solution};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "rotland", version, about = "Local minima and local convexity of l_p rotation averaging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic problem and its ground truth.
    Generate(GenerateArgs),
    /// Minimize the l_p cost from one initial guess.
    Solve(SolveArgs),
    /// Random-restart campaign and atlas of the minima found.
    Map(MapArgs),
    /// Local-convexity tests at a solution.
    Certify(CertifyArgs),
    /// One atlas per (graph, noise level) cell of a sweep spec.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphKind {
    Ws,
    Gnm,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    graph: GraphKind,
    #[arg(long)]
    n: usize,
    /// Ring-lattice degree (ws).
    #[arg(long)]
    k: Option<usize>,
    /// Rewiring probability (ws).
    #[arg(long, default_value_t = 0.0)]
    p_rewire: f64,
    /// Edge count (gnm).
    #[arg(long)]
    m: Option<usize>,
    /// Inlier noise standard deviation, degrees.
    #[arg(long, default_value_t = 0.0)]
    sigma_n_deg: f64,
    #[arg(long, default_value_t = 0.0)]
    outlier_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "problem.json")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitKind {
    Random,
    GroundTruth,
    File,
}

#[derive(Clone, Copy, ValueEnum)]
enum Curvature {
    Exact,
    GaussNewton,
}

impl From<Curvature> for CurvatureModel {
    fn from(c: Curvature) -> Self {
        match c {
            Curvature::Exact => CurvatureModel::Exact,
            Curvature::GaussNewton => CurvatureModel::GaussNewton,
        }
    }
}

#[derive(Args)]
struct SolverFlags {
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    grad_tol: f64,
    #[arg(long, default_value_t = 1e-10)]
    step_tol: f64,
    #[arg(long, default_value_t = 1e-4)]
    lambda_init: f64,
    #[arg(long, value_enum, default_value = "exact")]
    curvature: Curvature,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SolverFlags {
    fn options(&self) -> SolveOptions {
        SolveOptions {
            p: self.p,
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            step_tol: self.step_tol,
            lm_lambda_init: self.lambda_init,
            seed: self.seed,
            model: self.curvature.into(),
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long, value_enum, default_value = "random")]
    init: InitKind,
    /// Initial solution for `--init file`.
    #[arg(long)]
    init_path: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(long, default_value = "solution.json")]
    out: PathBuf,
}

#[derive(Args)]
struct MapArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long, default_value_t = 200)]
    restarts: usize,
    /// Quotient distance (radians) below which minima are merged.
    #[arg(long, default_value_t = rotland::atlas::DEFAULT_MERGE_TOL)]
    merge_tol: f64,
    /// Diffusion kernel width, radians.
    #[arg(long, default_value_t = rotland::atlas::DEFAULT_SIGMA_D)]
    sigma_d: f64,
    /// Use exp(-d²/σ_d²) instead of exp(-d²/σ_d).
    #[arg(long)]
    kernel_squared: bool,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(long, default_value = "atlas")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long)]
    solution: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value = "sweep")]
    out_dir: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

fn input(msg: impl Into<String>) -> Failure {
    Failure::Input(msg.into())
}

fn metadata(command: &str, seed: Option<u64>) -> Value {
    json!({
        "tool": "rotland",
        "version": VERSION,
        "command": command,
        "argv": std::env::args().collect::<Vec<_>>(),
        "seed": seed,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| input(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| input(format!("{}: {e}", path.display())))
}

/// `dir/name.json` → `dir/name.<suffix>.json`.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}.json"))
}

fn load_problem(path: &Path) -> Result<(rotland::ViewGraph, ProblemMeta), Failure> {
    read_problem(path).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn cmd_generate(a: GenerateArgs) -> Result<(), Failure> {
    let spec = match a.graph {
        GraphKind::Ws => GraphSpec::Ws {
            n: a.n,
            k: a.k.ok_or_else(|| input("--graph ws requires --k"))?,
            p_rewire: a.p_rewire,
        },
        GraphKind::Gnm => GraphSpec::Gnm {
            n: a.n,
            m: a.m.ok_or_else(|| input("--graph gnm requires --m"))?,
        },
    };
    let noise = NoiseSpec::new(a.sigma_n_deg.to_radians(), a.outlier_frac, a.seed)?;
    let (vg, truth) = generate_instance(&spec, &noise)?;
    let meta = ProblemMeta {
        generator: Some(spec),
        seed: Some(a.seed),
        sigma_n: Some(noise.sigma_n),
        outlier_fraction: Some(a.outlier_frac),
        version: Some(VERSION.to_string()),
    };
    write_problem(&a.out, &vg, meta)?;
    write_json(
        &sidecar(&a.out, "truth"),
        &json!({ "metadata": metadata("generate", Some(a.seed)), "rotations": truth.rotations }),
    )?;
    println!(
        "wrote {} (n = {}, {} edges, lambda2 = {:.6})",
        a.out.display(),
        vg.n(),
        vg.num_edges(),
        vg.topology().algebraic_connectivity()?
    );
    Ok(())
}

fn read_rotations(path: &Path) -> Result<Solution, Failure> {
    // accepts plain solution files and the truth sidecar (which carries metadata)
    read_solution(path).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn cmd_solve(a: SolveArgs) -> Result<(), Failure> {
    let (vg, _) = load_problem(&a.problem)?;
    let opts = a.solver.options();
    let init = match a.init {
        InitKind::Random => Solution::random(vg.n(), &mut rng_from_seed(a.solver.seed)),
        InitKind::GroundTruth => read_rotations(&sidecar(&a.problem, "truth"))?,
        InitKind::File => {
            let path = a.init_path.as_ref().ok_or_else(|| input("--init file requires --init-path"))?;
            read_rotations(path)?
        }
    };
    init.check_len(vg.n())?;
    let r = solve_local(&vg, &init, &opts)?;
    write_solution(&a.out, &r.solution)?;
    write_json(
        &sidecar(&a.out, "result"),
        &json!({
            "metadata": metadata("solve", Some(a.solver.seed)),
            "options": opts,
            "final_cost": r.final_cost,
            "converged": r.converged,
            "iters": r.iters,
            "final_grad_norm": r.final_grad_norm,
            "stop_reason": r.stop_reason,
        }),
    )?;
    println!("final cost {:.12e}", r.final_cost);
    println!(
        "{} after {} iterations (gradient {:.3e}, {:?})",
        if r.converged { "converged" } else { "did not converge" },
        r.iters,
        r.final_grad_norm,
        r.stop_reason
    );
    Ok(())
}

fn cmd_map(a: MapArgs) -> Result<(), Failure> {
    let atlas_opts = AtlasOptions {
        merge_tol: a.merge_tol,
        sigma_d: a.sigma_d,
        kernel_squared: a.kernel_squared,
    };
    atlas_opts.validate()?;
    let (vg, _) = load_problem(&a.problem)?;
    let opts = a.solver.options();
    let results = random_restart_campaign(&vg, &opts, a.restarts)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| input(format!("{}: {e}", a.out_dir.display())))?;
    write_campaign(&a.out_dir.join("runs.jsonl"), &a.out_dir.join("runs.solutions.jsonl"), &results)?;
    let atlas = atlas_from_results(&results, &atlas_opts)?;
    atlas.write_all(&a.out_dir)?;
    write_json(
        &a.out_dir.join("metadata.json"),
        &json!({ "metadata": metadata("map", Some(a.solver.seed)), "solver": opts, "atlas": atlas_opts }),
    )?;
    println!(
        "{} distinct minima from {} converged of {} runs",
        atlas.n_minima(),
        atlas.n_converged,
        atlas.n_runs
    );
    println!("pct_max {:.2}", atlas.pct_max);
    Ok(())
}

fn cmd_certify(a: CertifyArgs) -> Result<(), Failure> {
    let (vg, _) = load_problem(&a.problem)?;
    let sol = read_rotations(&a.solution)?;
    sol.check_len(vg.n())?;
    let report = certify(&vg, &sol, a.p)?;
    if let Some(out) = &a.out {
        write_json(out, &json!({ "metadata": metadata("certify", None), "report": report }))?;
    }
    for line in report.verdict_lines() {
        println!("{line}");
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.spec).map_err(|e| input(format!("{}: {e}", a.spec.display())))?;
    let spec: SweepSpec = serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", a.spec.display())))?;
    let cells = sweep_with_atlases(&spec)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| input(format!("{}: {e}", a.out_dir.display())))?;
    let rows: Vec<_> = cells.iter().map(|(r, _)| r.clone()).collect();
    let csv = std::fs::File::create(a.out_dir.join("sweep.csv")).map_err(|e| input(e.to_string()))?;
    write_sweep_csv(&rows, std::io::BufWriter::new(csv))?;
    for (k, (row, atlas)) in cells.iter().enumerate() {
        if let Some(atlas) = atlas {
            let dir = a.out_dir.join(format!("cell{k:03}_{}_sigma{}", row.graph, row.sigma_n_deg));
            atlas.write_all(&dir)?;
        }
    }
    write_json(
        &a.out_dir.join("sweep.json"),
        &json!({ "metadata": metadata("sweep", Some(spec.seed)), "spec": spec, "rows": rows }),
    )?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    println!("{} cells, {} failed; wrote {}", rows.len(), failed, a.out_dir.join("sweep.csv").display());
    for r in rows.iter().filter(|r| r.error.is_some()) {
        println!("cell {} sigma {}: {}", r.graph, r.sigma_n_deg, r.error.as_deref().unwrap_or(""));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Map(a) => cmd_map(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
    }
}
