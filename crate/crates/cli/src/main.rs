//! `dropf` — dispatch solves, Monte-Carlo evaluation, and experiment sweeps
//! for radial feeders under forecast uncertainty.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 problem infeasible,
//! 3 solver failure.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use dropf_core::eval::{
    evaluate_dispatch, in_sample_experiment, out_of_sample_experiment, ExperimentError,
    ExperimentGrid,
};
use dropf_core::formulation::{
    build_cc, build_deterministic, build_drcc, DispatchMode, DispatchProblem, DispatchSolution,
    DispatchStatus, FormulationError, RiskConfig,
};
use dropf_core::io::{
    bundled, load_case, load_case_str, read_samples, synth_samples, write_report, write_results,
};
use dropf_core::net::ValidatedNetwork;
use dropf_core::solver::SolverConfig;
use dropf_core::stats::{AmbiguityModel, ErrorTreatment, ForecastErrorModel, SampleSet};

#[derive(Parser)]
#[command(
    name = "dropf",
    version,
    about = "Deterministic, chance-constrained, and distributionally robust dispatch for radial feeders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one dispatch problem and write the solution as JSON.
    Solve(SolveArgs),
    /// Replay a saved solution against samples and write a violation report.
    Evaluate(EvaluateArgs),
    /// In-sample experiment: solve every mode over an (eta_v, xi) grid and
    /// evaluate against fresh draws from the true distribution.
    Sweep(SweepArgs),
    /// Out-of-sample experiment: evaluate fitted dispatches against
    /// distributions shifted toward the widest confidence interval.
    Oos(OosArgs),
    /// Time dispatch solves on one or more cases.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Det,
    Cc,
    Drcc,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TreatmentArg {
    /// Independent active and reactive forecast errors.
    Ind,
    /// Reactive errors follow active errors through the bus power factor.
    Cpf,
}

impl From<TreatmentArg> for ErrorTreatment {
    fn from(t: TreatmentArg) -> Self {
        match t {
            TreatmentArg::Ind => ErrorTreatment::IndependentPQ,
            TreatmentArg::Cpf => ErrorTreatment::ConstantPowerFactor,
        }
    }
}

#[derive(Args)]
struct CaseArg {
    /// Case file path, or a bundled case name (15bus, ieee37, ieee123).
    #[arg(long)]
    case: String,
}

#[derive(Args)]
struct SamplesArg {
    /// Forecast-error samples: either a CSV path or `N=<count>,seed=<seed>`
    /// for synthetic draws (sigma = k * forecast load, constant power
    /// factor).
    #[arg(long)]
    samples: String,
    /// Sigma fraction k for synthetic samples.
    #[arg(long, default_value_t = 0.2)]
    sigma_k: f64,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    case: CaseArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Drcc)]
    mode: ModeArg,
    /// Voltage-limit violation level, in (0, 1/2].
    #[arg(long, default_value_t = 0.05)]
    eta_v: f64,
    /// Generation-limit violation level (defaults to --eta-v).
    #[arg(long)]
    eta_g: Option<f64>,
    /// Variance-interval confidence parameter (drcc mode).
    #[arg(long, default_value_t = 0.05)]
    xi: f64,
    /// Forecast-error samples (CSV path or `N=<count>,seed=<seed>`).
    /// Required by the stochastic modes; det ignores them.
    #[arg(long)]
    samples: Option<String>,
    /// Sigma fraction k for synthetic samples.
    #[arg(long, default_value_t = 0.2)]
    sigma_k: f64,
    /// Enforce deterministic apparent-power line ratings (det mode only).
    #[arg(long)]
    flow_limits: bool,
    /// Output path for the solution JSON (default: solution.json in the
    /// output directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    case: CaseArg,
    /// Solution JSON written by `solve`.
    #[arg(long)]
    solution: PathBuf,
    #[command(flatten)]
    samples: SamplesArg,
    /// Output path for the violation-report CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    /// Comma-separated voltage violation levels.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.03, 0.05, 0.10])]
    eta_v: Vec<f64>,
    /// Comma-separated confidence parameters.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.25, 0.05, 0.005])]
    xi: Vec<f64>,
    /// Generation violation level override (defaults to each eta_v).
    #[arg(long)]
    eta_g: Option<f64>,
    /// Monte-Carlo evaluation draws per grid point.
    #[arg(long, default_value_t = 750)]
    eval_samples: usize,
    /// Seed for the evaluation draws (required: randomized subcommand).
    #[arg(long)]
    seed: u64,
    /// Worker threads for the evaluation loop (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    case: CaseArg,
    #[command(flatten)]
    samples: SamplesArg,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, value_enum, default_value_t = TreatmentArg::Cpf)]
    treatment: TreatmentArg,
    /// Output CSV path (default: sweep.csv in the output directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OosArgs {
    #[command(flatten)]
    case: CaseArg,
    #[command(flatten)]
    samples: SamplesArg,
    #[command(flatten)]
    grid: GridArgs,
    /// Comma-separated variance shift fractions toward the widest interval.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.33, 0.66, 1.0])]
    delta: Vec<f64>,
    #[arg(long, value_enum, default_value_t = TreatmentArg::Cpf)]
    treatment: TreatmentArg,
    /// Output CSV path (default: oos.csv in the output directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated case paths or bundled names.
    #[arg(long, value_delimiter = ',', default_values_t = vec![String::from("15bus")])]
    cases: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    eta_v: f64,
    #[arg(long, default_value_t = 0.005)]
    xi: f64,
    /// Historical sample count for the variance fit.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Seed for the synthetic history (required: randomized subcommand).
    #[arg(long)]
    seed: u64,
    /// Repetitions per case; the minimum time is reported.
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = 0.2)]
    sigma_k: f64,
}

enum CliError {
    Input(String),
    Infeasible(String),
    Solver(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Infeasible(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Infeasible(m) | CliError::Solver(m) => m,
        }
    }
}

fn input_err(e: impl Display) -> CliError {
    CliError::Input(e.to_string())
}

impl From<FormulationError> for CliError {
    fn from(e: FormulationError) -> Self {
        match e {
            FormulationError::StatusNotOptimal {
                mapped: DispatchStatus::Infeasible,
                ..
            } => CliError::Infeasible(e.to_string()),
            other => CliError::Solver(other.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Dispatch(d) => d.into(),
            ExperimentError::Eval(e) => CliError::Input(e.to_string()),
            ExperimentError::Stats(s) => CliError::Input(s.to_string()),
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; everything else is a
            // usage error.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Oos(args) => cmd_oos(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e.message());
            std::process::exit(e.exit_code());
        }
    }
}

/// Resolves `--case`: a bundled name first, then a filesystem path.
fn resolve_case(spec: &str) -> Result<ValidatedNetwork, CliError> {
    if let Some(text) = bundled::by_name(spec) {
        return load_case_str(text).map_err(input_err);
    }
    load_case(Path::new(spec)).map_err(input_err)
}

/// Resolves `--samples`: `N=<count>,seed=<seed>` draws synthetically from
/// sigma = k * load; anything else is a CSV path.
fn resolve_samples(
    spec: &str,
    sigma_k: f64,
    net: &ValidatedNetwork,
) -> Result<SampleSet, CliError> {
    let s = spec.trim();
    if s.starts_with("N=") || s.starts_with("n=") {
        let mut n: Option<usize> = None;
        let mut seed: Option<u64> = None;
        for part in s.split(',') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| input_err(format!("bad samples spec element '{part}'")))?;
            match key.trim() {
                "N" | "n" => {
                    n = Some(value.trim().parse().map_err(|_| {
                        input_err(format!("bad sample count '{value}'"))
                    })?)
                }
                "seed" => {
                    seed = Some(value.trim().parse().map_err(|_| {
                        input_err(format!("bad seed '{value}'"))
                    })?)
                }
                other => return Err(input_err(format!("unknown samples key '{other}'"))),
            }
        }
        let n = n.ok_or_else(|| input_err("samples spec is missing N="))?;
        let seed = seed.ok_or_else(|| {
            input_err("synthetic samples require an explicit seed (N=<count>,seed=<seed>)")
        })?;
        return Ok(synth_samples(net, sigma_k, n, seed));
    }
    let text = std::fs::read_to_string(s)
        .map_err(|e| input_err(format!("cannot read samples '{s}': {e}")))?;
    read_samples(&text, net).map_err(input_err)
}

/// Output path resolution: explicit flag wins, otherwise `DROPF_OUT_DIR`
/// (when set) prefixes the default file name.
fn out_path(flag: Option<PathBuf>, default_name: &str) -> PathBuf {
    match flag {
        Some(p) => p,
        None => match std::env::var_os("DROPF_OUT_DIR") {
            Some(dir) => PathBuf::from(dir).join(default_name),
            None => PathBuf::from(default_name),
        },
    }
}

fn write_out(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| input_err(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, contents)
        .map_err(|e| input_err(format!("cannot write {}: {e}", path.display())))
}

fn configure_jobs(jobs: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| input_err(format!("cannot configure {n} worker threads: {e}")))?;
    }
    Ok(())
}

fn mode_name(mode: DispatchMode) -> &'static str {
    match mode {
        DispatchMode::Deterministic => "det",
        DispatchMode::ChanceConstrained => "cc",
        DispatchMode::DistRobust => "drcc",
    }
}

/// Saved output of `solve`, consumed by `evaluate`.
#[derive(Serialize, Deserialize)]
struct SolutionFile {
    case: String,
    mode: String,
    eta_v: f64,
    eta_g: f64,
    xi: Option<f64>,
    solution: DispatchSolution,
}

fn check_eta(eta: f64, what: &str) -> Result<(), CliError> {
    if !(eta > 0.0 && eta <= 0.5) {
        return Err(input_err(format!("{what} must lie in (0, 1/2], got {eta}")));
    }
    Ok(())
}

fn cmd_solve(args: SolveArgs) -> Result<(), CliError> {
    let net = resolve_case(&args.case.case)?;
    check_eta(args.eta_v, "--eta-v")?;
    let eta_g = args.eta_g.unwrap_or(args.eta_v);
    check_eta(eta_g, "--eta-g")?;

    let (mode, problem): (DispatchMode, DispatchProblem) = match args.mode {
        ModeArg::Det => (
            DispatchMode::Deterministic,
            build_deterministic(&net, args.flow_limits),
        ),
        ModeArg::Cc | ModeArg::Drcc => {
            if args.flow_limits {
                return Err(input_err(
                    "--flow-limits applies to the deterministic mode only",
                ));
            }
            let samples_spec = args.samples.as_deref().ok_or_else(|| {
                input_err("stochastic modes need --samples (CSV path or N=<count>,seed=<seed>)")
            })?;
            let samples = resolve_samples(samples_spec, args.sigma_k, &net)?;
            let fit = AmbiguityModel::fit(&samples, args.xi).map_err(input_err)?;
            if args.mode == ModeArg::Cc {
                let config = RiskConfig::chance_constrained(args.eta_v).with_eta_g(eta_g);
                (
                    DispatchMode::ChanceConstrained,
                    build_cc(&net, &fit.sigma_hat2_p, &fit.sigma_hat2_q, &config),
                )
            } else {
                let config = RiskConfig::dist_robust(args.eta_v, args.xi).with_eta_g(eta_g);
                (DispatchMode::DistRobust, build_drcc(&net, &fit, &config))
            }
        }
    };

    let cfg = SolverConfig {
        verbose: args.verbose,
        ..SolverConfig::default()
    };
    let started = Instant::now();
    let solution = problem.solve(&net, &cfg)?;
    let elapsed = started.elapsed();

    println!(
        "{} dispatch on {}: objective {:.6} ({} buses, {} iterations, {:.1} ms)",
        mode_name(mode),
        args.case.case,
        solution.objective,
        net.n_buses(),
        solution.iters,
        elapsed.as_secs_f64() * 1e3,
    );
    for (k, g) in net.generators().iter().enumerate() {
        println!(
            "  gen {k} @ bus {}: g_p {:.6}  g_q {:+.6}  alpha {:.6}",
            net.external_id(g.bus),
            solution.g_p[k],
            solution.g_q[k],
            solution.alpha[k],
        );
    }

    let file = SolutionFile {
        case: args.case.case.clone(),
        mode: mode_name(mode).to_string(),
        eta_v: args.eta_v,
        eta_g,
        xi: (mode == DispatchMode::DistRobust).then_some(args.xi),
        solution,
    };
    let path = out_path(args.out, "solution.json");
    let json = serde_json::to_string_pretty(&file).expect("solution serializes");
    write_out(&path, &json)?;
    println!("solution written to {}", path.display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let net = resolve_case(&args.case.case)?;
    let text = std::fs::read_to_string(&args.solution)
        .map_err(|e| input_err(format!("cannot read {}: {e}", args.solution.display())))?;
    let file: SolutionFile = serde_json::from_str(&text)
        .map_err(|e| input_err(format!("bad solution file: {e}")))?;
    let samples = resolve_samples(&args.samples.samples, args.samples.sigma_k, &net)?;
    let report = evaluate_dispatch(&file.solution, &net, &samples).map_err(input_err)?;
    println!(
        "{} samples: violation probability {:.4} [{:.4}, {:.4}], mean realized cost {:.6}",
        report.samples, report.violation_prob, report.ci_low, report.ci_high,
        report.mean_realized_cost,
    );
    let path = out_path(args.out, "report.csv");
    write_out(&path, &write_report(&report, &net))?;
    println!("report written to {}", path.display());
    Ok(())
}

fn experiment_grid(grid: &GridArgs, delta: Vec<f64>) -> Result<ExperimentGrid, CliError> {
    for &e in &grid.eta_v {
        check_eta(e, "--eta-v")?;
    }
    if let Some(e) = grid.eta_g {
        check_eta(e, "--eta-g")?;
    }
    for &x in &grid.xi {
        if !(x > 0.0 && x < 1.0) {
            return Err(input_err(format!("--xi values must lie in (0, 1), got {x}")));
        }
    }
    Ok(ExperimentGrid {
        eta_v: grid.eta_v.clone(),
        xi: grid.xi.clone(),
        delta,
        samples: grid.eval_samples,
        seed: grid.seed,
        eta_g: grid.eta_g,
    })
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    configure_jobs(args.grid.jobs)?;
    let net = resolve_case(&args.case.case)?;
    let history = resolve_samples(&args.samples.samples, args.samples.sigma_k, &net)?;
    let truth = ForecastErrorModel::from_load_fraction(&net, args.samples.sigma_k);
    let grid = experiment_grid(&args.grid, vec![])?;
    let started = Instant::now();
    let rows = in_sample_experiment(&net, &history, &truth, args.treatment.into(), &grid)?;
    if args.grid.verbose {
        eprintln!(
            "sweep: {} rows in {:.1} ms",
            rows.len(),
            started.elapsed().as_secs_f64() * 1e3
        );
    }
    let path = out_path(args.out, "sweep.csv");
    write_out(&path, &write_results(&rows))?;
    println!("{} rows written to {}", rows.len(), path.display());
    Ok(())
}

fn cmd_oos(args: OosArgs) -> Result<(), CliError> {
    configure_jobs(args.grid.jobs)?;
    let net = resolve_case(&args.case.case)?;
    let history = resolve_samples(&args.samples.samples, args.samples.sigma_k, &net)?;
    for &d in &args.delta {
        if !(0.0..=1.0).contains(&d) {
            return Err(input_err(format!("--delta values must lie in [0, 1], got {d}")));
        }
    }
    let grid = experiment_grid(&args.grid, args.delta.clone())?;
    let started = Instant::now();
    let rows = out_of_sample_experiment(&net, &history, args.treatment.into(), &grid)?;
    if args.grid.verbose {
        eprintln!(
            "oos: {} rows in {:.1} ms",
            rows.len(),
            started.elapsed().as_secs_f64() * 1e3
        );
    }
    let path = out_path(args.out, "oos.csv");
    write_out(&path, &write_results(&rows))?;
    println!("{} rows written to {}", rows.len(), path.display());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    check_eta(args.eta_v, "--eta-v")?;
    println!("case,buses,mode,solve_ms,iters");
    for spec in &args.cases {
        let net = resolve_case(spec)?;
        let history = synth_samples(&net, args.sigma_k, args.n, args.seed);
        let fit = AmbiguityModel::fit(&history, args.xi).map_err(input_err)?;
        let config = RiskConfig::dist_robust(args.eta_v, args.xi);
        let problem = build_drcc(&net, &fit, &config);
        let cfg = SolverConfig::default();
        let mut best = f64::INFINITY;
        let mut iters = 0;
        for _ in 0..args.reps.max(1) {
            let started = Instant::now();
            let solution = problem.solve(&net, &cfg)?;
            best = best.min(started.elapsed().as_secs_f64() * 1e3);
            iters = solution.iters;
        }
        println!("{spec},{},drcc,{best:.2},{iters}", net.n_buses());
    }
    Ok(())
}
