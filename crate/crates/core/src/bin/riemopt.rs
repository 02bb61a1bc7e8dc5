use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use riemopt_core::harness::{
    check, exit_code, parse_config, run, sweep_epsilon, write_sweep, ExperimentSpec, OutputFormat, ProblemSpec,
    RankChoice, SolverKind, SolverSettings,
};
use riemopt_core::verify::{parse_trace, verify_bounds, CsvConfigs, VerifyOptions};
use riemopt_core::{Error, FStar, GdConfig, Manifold, Provenance, RtrConfig};

#[derive(Parser, Debug)]
#[command(name = "riemopt", version, about = "Riemannian optimization experiments with worst-case bound checks")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Solve one problem instance per replicate and write its artifacts.
    #[command(allow_negative_numbers = true)]
    Run(ExpArgs),
    /// Solve at each tolerance of --eps-list and fit the iteration scaling.
    #[command(allow_negative_numbers = true)]
    Sweep(ExpArgs),
    /// Check a trace against the worst-case bounds.
    #[command(allow_negative_numbers = true)]
    Verify(VerifyArgs),
    /// Taylor-remainder checks of the problem's derivatives and retraction.
    #[command(allow_negative_numbers = true)]
    Check(CheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ProblemKind {
    Rayleigh,
    Maxcut,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SolverArg {
    GdFixed,
    GdArmijo,
    Rtr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args, Debug, Clone, Default)]
struct SolverFlags {
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    #[arg(long = "eps-g")]
    eps_g: Option<f64>,
    /// Second-order tolerance; enables eigensteps in the trust-region solver.
    #[arg(long = "eps-h")]
    eps_h: Option<f64>,
    #[arg(long)]
    delta0: Option<f64>,
    #[arg(long = "delta-bar")]
    delta_bar: Option<f64>,
    #[arg(long = "rho-prime")]
    rho_prime: Option<f64>,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    tbar: Option<f64>,
    /// Lipschitz constant of the pullback gradients (fixed step size 1/L).
    #[arg(long = "L")]
    lipschitz: Option<f64>,
    #[arg(long = "max-iters")]
    max_iters: Option<usize>,
    /// Lower bound on the optimal value used by bound checks.
    #[arg(long)]
    fstar: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct ProblemFlags {
    #[arg(value_enum)]
    problem: Option<ProblemKind>,
    #[arg(long)]
    n: Option<usize>,
    /// MatrixMarket (.mtx) or dense text matrix.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Factorization rank for maxcut: a number or `auto` (n + 1).
    #[arg(long)]
    p: Option<RankChoice>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Flat `key = value` file mirroring the flags; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ExpArgs {
    #[command(flatten)]
    problem: ProblemFlags,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    #[arg(long, default_value = "riemopt-out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Comma-separated, strictly decreasing tolerances for `sweep`.
    #[arg(long = "eps-list", value_delimiter = ',')]
    eps_list: Vec<f64>,
    /// Sweep with eps_g = eps_h = eps.
    #[arg(long = "second-order")]
    second_order: bool,
    /// Also write Y as dense text (maxcut).
    #[arg(long = "dump-y")]
    dump_y: bool,
}

#[derive(Args, Debug, Clone)]
struct VerifyArgs {
    /// Trace file (JSON, or CSV together with the solver flags).
    trace: PathBuf,
    #[command(flatten)]
    solver: SolverFlags,
    /// Write the report as JSON to this path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ambient manifold for CSV trust-region traces (radius defaults).
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct CheckArgs {
    #[command(flatten)]
    problem: ProblemFlags,
    /// Number of random (x, eta) pairs.
    #[arg(long, default_value_t = 5)]
    pairs: usize,
}

enum Failure {
    Usage(String),
    Solver(Error),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Solver(e)
    }
}

fn solver_kind(s: Option<SolverArg>) -> SolverKind {
    match s.unwrap_or(SolverArg::Rtr) {
        SolverArg::GdFixed => SolverKind::GdFixed,
        SolverArg::GdArmijo => SolverKind::GdArmijo,
        SolverArg::Rtr => SolverKind::Rtr,
    }
}

fn settings(s: &SolverFlags) -> SolverSettings {
    SolverSettings {
        eps_g: s.eps_g,
        eps_h: s.eps_h,
        delta0: s.delta0,
        delta_bar: s.delta_bar,
        rho_prime: s.rho_prime,
        c1: s.c1,
        tau: s.tau,
        t_bar: s.tbar,
        lipschitz: s.lipschitz,
        max_iters: s.max_iters,
    }
}

fn problem_spec(p: &ProblemFlags) -> Result<ProblemSpec, Failure> {
    match p.problem {
        None => Err(Failure::Usage("missing problem: rayleigh or maxcut".into())),
        Some(ProblemKind::Rayleigh) => match (p.n, &p.matrix) {
            (None, None) => Err(Failure::Usage("rayleigh needs --n or --matrix".into())),
            (n, m) => Ok(ProblemSpec::Rayleigh { n: n.unwrap_or(0), matrix: m.clone() }),
        },
        Some(ProblemKind::Maxcut) => match &p.matrix {
            None => Err(Failure::Usage("maxcut needs --matrix".into())),
            Some(m) => Ok(ProblemSpec::MaxCut { matrix: m.clone(), p: p.p.unwrap_or(RankChoice::Auto) }),
        },
    }
}

fn experiment(a: &ExpArgs) -> Result<ExperimentSpec, Failure> {
    let mut spec = ExperimentSpec::new(problem_spec(&a.problem)?, solver_kind(a.solver.solver));
    spec.settings = settings(&a.solver);
    spec.seed = a.problem.seed;
    spec.replicates = a.replicates;
    spec.eps_list = a.eps_list.clone();
    spec.second_order = a.second_order;
    spec.jobs = a.jobs;
    spec.out = a.out.clone();
    spec.format = match a.format {
        FormatArg::Csv => OutputFormat::Csv,
        FormatArg::Json => OutputFormat::Json,
    };
    spec.fstar = a.solver.fstar;
    spec.dump_y = a.dump_y;
    Ok(spec)
}

fn cmd_run(a: &ExpArgs) -> Result<(), Failure> {
    let spec = experiment(a)?;
    for s in run(&spec)? {
        println!("replicate {}: {} after {} iterations, f = {:e}", s.replicate, s.status, s.iterations, s.f);
    }
    println!("artifacts in {}", spec.out.display());
    Ok(())
}

fn cmd_sweep(a: &ExpArgs) -> Result<(), Failure> {
    let spec = experiment(a)?;
    let rep = sweep_epsilon(&spec)?;
    write_sweep(&spec.out, &rep)?;
    print!("{}", rep.to_csv());
    println!("slope = {:.4} (cap {})", rep.slope, rep.cap);
    if rep.pass {
        Ok(())
    } else {
        Err(Failure::Verification(format!("fitted slope {:.4} exceeds {}", rep.slope, rep.cap)))
    }
}

fn csv_configs(v: &VerifyArgs) -> CsvConfigs {
    let s = settings(&v.solver);
    let Some(eps_g) = s.eps_g else { return CsvConfigs::default() };
    let gd = v.solver.solver.filter(|k| *k != SolverArg::Rtr).map(|k| GdConfig {
        eps_g,
        ..s.gd_config(solver_kind(Some(k)))
    });
    let rtr = match (s.delta0, s.delta_bar, v.n) {
        (Some(_), Some(_), _) => Some(s.rtr_config(Manifold::euclidean(1))),
        (_, _, Some(n)) => Some(s.rtr_config(Manifold::sphere(n))),
        _ => None,
    };
    if rtr.is_some() && (s.delta0.is_none() || s.delta_bar.is_none()) {
        log::warn!("radii not given; using the sphere defaults for n = {}", v.n.unwrap_or(0));
    }
    CsvConfigs { gd, rtr: rtr.map(|c| RtrConfig { eps_g, ..c }) }
}

fn cmd_verify(v: &VerifyArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&v.trace).map_err(|e| Error::Io(format!("{}: {e}", v.trace.display())))?;
    let trace = parse_trace(&text, &csv_configs(v))?;
    let opts = VerifyOptions {
        fstar: v.solver.fstar.map(|value| FStar { value, provenance: Provenance::User }),
        lipschitz: v.solver.lipschitz.map(|l| (l, Provenance::User)),
    };
    let rep = verify_bounds(&trace, &opts)?;
    print!("{}", rep.summary());
    for w in rep.warnings() {
        log::warn!("{} failed with estimated constants: {}", w.name, w.detail);
    }
    if let Some(out) = &v.out {
        std::fs::write(out, rep.to_json()?).map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;
    }
    if rep.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = rep.errors().map(|e| e.name.as_str()).collect();
        Err(Failure::Verification(format!("failed: {}", names.join("; "))))
    }
}

fn cmd_check(c: &CheckArgs) -> Result<(), Failure> {
    let spec = ExperimentSpec { seed: c.problem.seed, ..ExperimentSpec::new(problem_spec(&c.problem)?, SolverKind::Rtr) };
    let rep = check(&spec, c.pairs)?;
    for e in &rep.entries {
        let tag = if e.pass { "PASS" } else { "FAIL" };
        println!("{tag} pair {} {}: slope {:.3} (need >= {:.1})", e.pair, e.check, e.slope, e.required);
    }
    if rep.passed() {
        Ok(())
    } else {
        Err(Failure::Verification("derivative check failed".into()))
    }
}

/// Splice `key = value` pairs from `--config` in front of the command-line
/// flags so that later (command-line) occurrences win.
fn with_config(args: &[OsString], config: &std::path::Path, has_problem: bool) -> Result<Vec<OsString>, Failure> {
    let text = std::fs::read_to_string(config).map_err(|e| Error::Io(format!("{}: {e}", config.display())))?;
    let mut spliced: Vec<OsString> = args[..2].to_vec();
    let mut flags = Vec::new();
    for (k, v) in parse_config(&text)? {
        match (k.as_str(), v.as_str()) {
            ("problem", _) => {
                if !has_problem {
                    spliced.push(v.into());
                }
            }
            ("config", _) => return Err(Failure::Usage("config files cannot include other config files".into())),
            ("second-order" | "dump-y", "true") => flags.push(format!("--{k}").into()),
            ("second-order" | "dump-y", "false") => {}
            _ => {
                flags.push(format!("--{k}").into());
                flags.push(v.into());
            }
        }
    }
    spliced.extend(flags);
    spliced.extend(args[2..].iter().cloned());
    Ok(spliced)
}

fn parse(args: &[OsString]) -> Result<Cli, ExitCode> {
    Cli::try_parse_from(args).map_err(|e| {
        let code = if e.use_stderr() { 1 } else { 0 };
        let _ = e.print();
        ExitCode::from(code)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<OsString> = std::env::args_os().collect();
    let mut cli = match parse(&args) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let config = match &cli.cmd {
        Cmd::Run(a) | Cmd::Sweep(a) => a.problem.config.clone().map(|c| (c, a.problem.problem.is_some())),
        Cmd::Check(c) => c.problem.config.clone().map(|p| (p, c.problem.problem.is_some())),
        Cmd::Verify(_) => None,
    };
    if let Some((path, has_problem)) = config {
        match with_config(&args, &path, has_problem) {
            Ok(spliced) => match parse(&spliced) {
                Ok(c) => cli = c,
                Err(code) => return code,
            },
            Err(f) => return report(f),
        }
    }
    let result = match &cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Verify(v) => cmd_verify(v),
        Cmd::Check(c) => cmd_check(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> ExitCode {
    match f {
        Failure::Usage(m) => {
            eprintln!("riemopt: {m}");
            ExitCode::from(1)
        }
        Failure::Solver(e) => {
            eprintln!("riemopt: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
        Failure::Verification(m) => {
            eprintln!("riemopt: verification failed: {m}");
            ExitCode::from(4)
        }
    }
}
