//! Experiment engine behind the `riemopt` binary: build a problem instance
//! from a spec, run a solver, write traces and solutions, sweep tolerances.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gd::{gd_solve, GdConfig, GdMode, GdTrace};
use crate::linalg::{fit_line, min_eigenpair};
use crate::manifold::Point;
use crate::problem::Problem;
use crate::rtr::{rtr_solve, RtrConfig, RtrTrace};
use crate::sdp::{bm_problem, default_rank, load_matrix, BmSolution, MatrixFormat, SdpInstance};
use crate::seed::rng_for;
use crate::trace::{FStar, Provenance};

pub const SOLUTION_SCHEMA: &str = "solution-v1";
pub const SWEEP_SCHEMA: &str = "sweep-v1";
pub const CHECK_SCHEMA: &str = "check-v1";

/// Slope caps of the tolerance sweeps.
pub const FIRST_ORDER_SLOPE_CAP: f64 = 2.3;
pub const SECOND_ORDER_SLOPE_CAP: f64 = 3.3;

/// Safety factor on the sampled Lipschitz constant used for the fixed step.
pub const LIPSCHITZ_SAFETY: f64 = 1.5;
pub const LIPSCHITZ_SAMPLES: usize = 256;
/// Sample points at which the Hessian operator norm also enters the estimate.
pub const HESSIAN_NORM_POINTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RankChoice {
    Auto,
    Fixed(usize),
}

impl std::str::FromStr for RankChoice {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(RankChoice::Auto);
        }
        s.parse().map(RankChoice::Fixed).map_err(|_| format!("expected a rank or 'auto', got {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProblemSpec {
    /// `½ xᵀAx` on the sphere; `A` read from `matrix` or drawn as `(B + Bᵀ)/2`
    /// with Gaussian `B`.
    Rayleigh { n: usize, matrix: Option<PathBuf> },
    MaxCut { matrix: PathBuf, p: RankChoice },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    GdFixed,
    GdArmijo,
    Rtr,
}

impl SolverKind {
    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::GdFixed => "gd-fixed",
            SolverKind::GdArmijo => "gd-armijo",
            SolverKind::Rtr => "rtr",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    fn ext(&self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

/// Solver settings left unset fall back to the solver's defaults.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolverSettings {
    pub eps_g: Option<f64>,
    pub eps_h: Option<f64>,
    pub delta0: Option<f64>,
    pub delta_bar: Option<f64>,
    pub rho_prime: Option<f64>,
    pub c1: Option<f64>,
    pub tau: Option<f64>,
    pub t_bar: Option<f64>,
    pub lipschitz: Option<f64>,
    pub max_iters: Option<usize>,
}

impl SolverSettings {
    pub fn gd_config(&self, kind: SolverKind) -> GdConfig {
        let d = GdConfig::default();
        GdConfig {
            eps_g: self.eps_g.unwrap_or(d.eps_g),
            lipschitz: self.lipschitz,
            c1: self.c1.unwrap_or(d.c1),
            tau: self.tau.unwrap_or(d.tau),
            t_bar: self.t_bar.unwrap_or(d.t_bar),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            mode: if kind == SolverKind::GdFixed { GdMode::FixedStep } else { GdMode::Armijo },
            ..d
        }
    }

    pub fn rtr_config(&self, m: crate::manifold::Manifold) -> RtrConfig {
        let d = RtrConfig::for_manifold(m);
        let delta_bar = self.delta_bar.unwrap_or(d.delta_bar);
        RtrConfig {
            delta_bar,
            delta0: self.delta0.unwrap_or(if self.delta_bar.is_some() { delta_bar / 8.0 } else { d.delta0 }),
            rho_prime: self.rho_prime.unwrap_or(d.rho_prime),
            eps_g: self.eps_g.unwrap_or(d.eps_g),
            eps_h: self.eps_h,
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            ..d
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub problem: ProblemSpec,
    pub solver: SolverKind,
    pub settings: SolverSettings,
    pub seed: u64,
    pub replicates: usize,
    /// Tolerances of a sweep, strictly decreasing.
    pub eps_list: Vec<f64>,
    /// Sweep with `ε_g = ε_H = ε` instead of first-order only.
    pub second_order: bool,
    pub jobs: usize,
    pub out: PathBuf,
    pub format: OutputFormat,
    pub fstar: Option<f64>,
    pub dump_y: bool,
}

impl ExperimentSpec {
    pub fn new(problem: ProblemSpec, solver: SolverKind) -> Self {
        ExperimentSpec {
            problem,
            solver,
            settings: SolverSettings::default(),
            seed: 0,
            replicates: 1,
            eps_list: Vec::new(),
            second_order: false,
            jobs: 1,
            out: PathBuf::from("out"),
            format: OutputFormat::Json,
            fstar: None,
            dump_y: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::contract("replicates must be at least 1"));
        }
        if let ProblemSpec::Rayleigh { n, matrix: None } = self.problem {
            if n < 2 {
                return Err(Error::contract("rayleigh needs n >= 2"));
            }
        }
        if matches!(self.problem, ProblemSpec::MaxCut { .. }) && self.solver != SolverKind::Rtr {
            return Err(Error::contract("maxcut runs with --solver rtr"));
        }
        Ok(())
    }
}

/// Parse a flat `key = value` config file; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("expected 'key = value', got {line:?}") })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(Error::Parse { line: i + 1, msg: "empty key or value".into() });
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Everything one replicate needs.
pub struct Instance {
    pub problem: Problem,
    pub x0: Point,
    pub label: String,
    /// Known `f*`, when the instance has one before solving.
    pub fstar: Option<FStar>,
    pub lipschitz: Option<(f64, Provenance)>,
    pub sdp: Option<(SdpInstance, usize)>,
}

fn read_matrix(path: &Path) -> Result<SdpInstance> {
    load_matrix(path, MatrixFormat::from_path(path))
}

/// `(B + Bᵀ)/2` with standard Gaussian `B`.
pub fn random_symmetric<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    (&b + b.transpose()) * 0.5
}

/// Draws come from stream `(seed, replicate)`: the matrix (when random),
/// then `x0`, then the Lipschitz samples.
pub fn build_instance(spec: &ExperimentSpec, replicate: u64) -> Result<Instance> {
    let mut rng = rng_for(spec.seed, replicate);
    let user_fstar = spec.fstar.map(|v| FStar { value: v, provenance: Provenance::User });
    let mut inst = match &spec.problem {
        ProblemSpec::Rayleigh { n, matrix } => {
            let a = match matrix {
                Some(p) => read_matrix(p)?.c().clone(),
                None => random_symmetric(*n, &mut rng),
            };
            let (lmin, _) = min_eigenpair(&a);
            let n = a.nrows();
            let problem = Problem::rayleigh(a)?;
            let x0 = problem.manifold().random_point(&mut rng);
            Instance {
                problem,
                x0,
                label: format!("rayleigh n={n} seed={} replicate={replicate}", spec.seed),
                fstar: Some(FStar { value: lmin / 2.0, provenance: Provenance::Oracle }),
                lipschitz: None,
                sdp: None,
            }
        }
        ProblemSpec::MaxCut { matrix, p } => {
            let sdp = read_matrix(matrix)?;
            let n = sdp.n();
            let p = match p {
                RankChoice::Auto => default_rank(n),
                RankChoice::Fixed(p) => *p,
            };
            let problem = bm_problem(&sdp, p)?;
            let x0 = problem.manifold().random_point(&mut rng);
            Instance {
                problem,
                x0,
                label: format!("maxcut n={n} p={p} seed={} replicate={replicate}", spec.seed),
                fstar: None,
                lipschitz: None,
                sdp: Some((sdp, p)),
            }
        }
    };
    if user_fstar.is_some() {
        inst.fstar = user_fstar;
    }
    inst.lipschitz = match (spec.settings.lipschitz, spec.solver) {
        (Some(l), _) => Some((l, Provenance::User)),
        (None, SolverKind::GdFixed) => {
            let samples = inst.problem.lipschitz_samples(&mut rng, LIPSCHITZ_SAMPLES, 1.0);
            let est = inst.problem.estimate_lipschitz(&samples)?;
            let mut l = est.lg;
            if inst.problem.has_hessian() {
                let points: Vec<Point> =
                    samples.iter().take(HESSIAN_NORM_POINTS).map(|(x, _)| x.clone()).collect();
                l = l.max(inst.problem.estimate_hessian_norm(&points)?);
            }
            Some((LIPSCHITZ_SAFETY * l, Provenance::Estimated))
        }
        (None, _) => None,
    };
    Ok(inst)
}

#[derive(Clone, Debug)]
pub enum SolverOutput {
    Gd { x: Point, trace: GdTrace },
    Rtr { x: Point, trace: RtrTrace },
    MaxCut(Box<BmSolution>),
}

impl SolverOutput {
    pub fn iterations(&self) -> usize {
        match self {
            SolverOutput::Gd { trace, .. } => trace.iterations(),
            SolverOutput::Rtr { trace, .. } => trace.iterations(),
            SolverOutput::MaxCut(s) => s.iterations,
        }
    }

    /// `(cost, grad, hess)` evaluations including the initial ones.
    pub fn evals(&self) -> (u64, u64, u64) {
        match self {
            SolverOutput::Gd { trace, .. } => (
                trace.initial_costevals + trace.records.iter().map(|r| r.costevals).sum::<u64>(),
                trace.records.iter().map(|r| r.gradevals).sum(),
                0,
            ),
            SolverOutput::Rtr { trace, .. } => {
                let e = trace.total_evals();
                (e.cost, e.grad, e.hess)
            }
            SolverOutput::MaxCut(s) => {
                let e = s.trace.total_evals();
                (e.cost, e.grad, e.hess)
            }
        }
    }

    pub fn status(&self) -> String {
        let v = match self {
            SolverOutput::Gd { trace, .. } => serde_json::to_value(trace.status),
            SolverOutput::Rtr { trace, .. } => serde_json::to_value(trace.status),
            SolverOutput::MaxCut(s) => serde_json::to_value(s.status),
        };
        v.ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
    }
}

/// A solver failure with whatever trace was recorded.
pub struct RunFailure {
    pub error: Error,
    pub partial: Option<SolverOutput>,
}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        RunFailure { error, partial: None }
    }
}

pub fn solve_instance(spec: &ExperimentSpec, inst: &Instance) -> std::result::Result<SolverOutput, RunFailure> {
    let s = &spec.settings;
    match spec.solver {
        SolverKind::GdFixed | SolverKind::GdArmijo => {
            let mut cfg = s.gd_config(spec.solver);
            cfg.lipschitz = inst.lipschitz.map(|l| l.0);
            let tag = |mut t: GdTrace| {
                t.problem = Some(inst.label.clone());
                t.fstar = inst.fstar;
                t.lipschitz_provenance = inst.lipschitz.map(|l| l.1);
                t
            };
            match gd_solve(&inst.problem, &inst.x0, &cfg) {
                Ok((x, trace)) => Ok(SolverOutput::Gd { x: x.clone(), trace: tag(trace) }),
                Err(f) => Err(RunFailure {
                    error: f.error,
                    partial: Some(SolverOutput::Gd { x: inst.x0.clone(), trace: tag(f.trace) }),
                }),
            }
        }
        SolverKind::Rtr => {
            let cfg = s.rtr_config(inst.problem.manifold());
            match &inst.sdp {
                Some((sdp, p)) => {
                    let partial = |t: RtrTrace| SolverOutput::Rtr { x: inst.x0.clone(), trace: t };
                    let out = rtr_solve(&inst.problem, &inst.x0, &cfg)
                        .map_err(|f| RunFailure { error: f.error, partial: Some(partial(f.trace)) })?;
                    let cert = crate::sdp::dual_certificate(sdp, &out.x)?;
                    let objective = inst.problem.cost(&out.x);
                    let mut trace = out.trace;
                    trace.problem = Some(inst.label.clone());
                    trace.fstar = inst.fstar.or(Some(FStar {
                        value: objective - cert.gap_bound,
                        provenance: Provenance::Oracle,
                    }));
                    Ok(SolverOutput::MaxCut(Box::new(BmSolution {
                        n: sdp.n(),
                        p: *p,
                        objective,
                        lambda_min_s: cert.lambda_min_s,
                        gap_bound: cert.gap_bound,
                        status: out.certificate.status,
                        iterations: trace.iterations(),
                        eps_h: cfg.eps_h,
                        y: out.x,
                        trace,
                    })))
                }
                None => {
                    let tag = |mut t: RtrTrace| {
                        t.problem = Some(inst.label.clone());
                        t.fstar = inst.fstar;
                        t
                    };
                    match rtr_solve(&inst.problem, &inst.x0, &cfg) {
                        Ok(o) => Ok(SolverOutput::Rtr { x: o.x, trace: tag(o.trace) }),
                        Err(f) => Err(RunFailure {
                            error: f.error,
                            partial: Some(SolverOutput::Rtr { x: inst.x0.clone(), trace: tag(f.trace) }),
                        }),
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
struct SolutionJson<'a> {
    schema: &'a str,
    problem: &'a str,
    solver: &'a str,
    status: String,
    iterations: usize,
    f: f64,
    gradnorm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    fstar: Option<FStar>,
    x: &'a [f64],
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Write the trace, solution and (for trust regions) certificate of one run.
pub fn write_artifacts(dir: &Path, spec: &ExperimentSpec, out: &SolverOutput) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        write(&p, &text)?;
        written.push(p);
        Ok(())
    };
    let trace_name = format!("trace.{}", spec.format.ext());
    match out {
        SolverOutput::Gd { x, trace } => {
            put(&trace_name, trace_text(spec.format, TraceRef::Gd(trace))?)?;
            let last = trace.records.last();
            let sol = SolutionJson {
                schema: SOLUTION_SCHEMA,
                problem: trace.problem.as_deref().unwrap_or(""),
                solver: spec.solver.name(),
                status: out.status(),
                iterations: trace.iterations(),
                f: last.map_or(f64::NAN, |r| r.f),
                gradnorm: last.map_or(f64::NAN, |r| r.gradnorm),
                fstar: trace.fstar,
                x: x.coords(),
            };
            put("solution.json", serde_json::to_string_pretty(&sol)?)?;
        }
        SolverOutput::Rtr { x, trace } => {
            put(&trace_name, trace_text(spec.format, TraceRef::Rtr(trace))?)?;
            if let Some(c) = &trace.certificate {
                put("certificate.json", c.to_json()?)?;
            }
            let last = trace.records.last();
            let sol = SolutionJson {
                schema: SOLUTION_SCHEMA,
                problem: trace.problem.as_deref().unwrap_or(""),
                solver: spec.solver.name(),
                status: out.status(),
                iterations: trace.iterations(),
                f: last.map_or(f64::NAN, |r| r.f),
                gradnorm: last.map_or(f64::NAN, |r| r.gradnorm),
                fstar: trace.fstar,
                x: x.coords(),
            };
            put("solution.json", serde_json::to_string_pretty(&sol)?)?;
        }
        SolverOutput::MaxCut(sol) => {
            put(&trace_name, trace_text(spec.format, TraceRef::Rtr(&sol.trace))?)?;
            if let Some(c) = &sol.trace.certificate {
                put("certificate.json", c.to_json()?)?;
            }
            put("solution.json", sol.to_json()?)?;
            if spec.dump_y {
                put("y.txt", sol.y_dense_text())?;
            }
        }
    }
    Ok(written)
}

enum TraceRef<'a> {
    Gd(&'a GdTrace),
    Rtr(&'a RtrTrace),
}

fn trace_text(format: OutputFormat, t: TraceRef<'_>) -> Result<String> {
    Ok(match (format, t) {
        (OutputFormat::Json, TraceRef::Gd(t)) => t.to_json()?,
        (OutputFormat::Json, TraceRef::Rtr(t)) => t.to_json()?,
        (OutputFormat::Csv, TraceRef::Gd(t)) => t.to_csv(),
        (OutputFormat::Csv, TraceRef::Rtr(t)) => t.to_csv(),
    })
}

/// Directory of replicate `r`: the output root itself for single runs.
pub fn replicate_dir(spec: &ExperimentSpec, r: usize) -> PathBuf {
    if spec.replicates == 1 {
        spec.out.clone()
    } else {
        spec.out.join(format!("rep-{r}"))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ReplicateSummary {
    pub replicate: usize,
    pub status: String,
    pub iterations: usize,
    pub f: f64,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Io(format!("cannot start worker pool: {e}")))
}

/// Run every replicate, writing each one's artifacts. The first failing
/// replicate's error is returned after all have finished.
pub fn run(spec: &ExperimentSpec) -> Result<Vec<ReplicateSummary>> {
    spec.validate()?;
    let results: Vec<Result<ReplicateSummary>> = pool(spec.jobs)?.install(|| {
        (0..spec.replicates)
            .into_par_iter()
            .map(|r| {
                let inst = build_instance(spec, r as u64)?;
                let dir = replicate_dir(spec, r);
                match solve_instance(spec, &inst) {
                    Ok(out) => {
                        write_artifacts(&dir, spec, &out)?;
                        let f = match &out {
                            SolverOutput::Gd { trace, .. } => trace.records.last().map_or(f64::NAN, |r| r.f),
                            SolverOutput::Rtr { trace, .. } => trace.records.last().map_or(f64::NAN, |r| r.f),
                            SolverOutput::MaxCut(s) => s.objective,
                        };
                        Ok(ReplicateSummary { replicate: r, status: out.status(), iterations: out.iterations(), f })
                    }
                    Err(fail) => {
                        if let Some(p) = &fail.partial {
                            write_artifacts(&dir, spec, p)?;
                        }
                        Err(fail.error)
                    }
                }
            })
            .collect()
    });
    results.into_iter().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub iterations: usize,
    pub cost_evals: u64,
    pub grad_evals: u64,
    pub hess_evals: u64,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub schema: String,
    pub solver: String,
    pub second_order: bool,
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of `log(max(iterations, 1))` against `log(1/ε)`.
    pub slope: f64,
    pub cap: f64,
    pub pass: bool,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,iterations,cost_evals,grad_evals,hess_evals,status\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.eps, r.iterations, r.cost_evals, r.grad_evals, r.hess_evals, r.status
            ));
        }
        out
    }
}

/// Sweep tolerances need at least 4 strictly decreasing positive values
/// spanning two decades.
pub fn check_eps_list(eps: &[f64]) -> Result<()> {
    if eps.len() < 4 {
        return Err(Error::contract("a sweep needs at least 4 tolerance values"));
    }
    if eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::contract("sweep tolerances must be positive and finite"));
    }
    if eps.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::contract("sweep tolerances must be strictly decreasing"));
    }
    if eps[0] / eps[eps.len() - 1] < 100.0 * (1.0 - 1e-12) {
        return Err(Error::contract("sweep tolerances must span at least two decades"));
    }
    Ok(())
}

/// Slope of `log(max(iterations, 1))` against `log(1/ε)`.
pub fn fit_scaling_slope(eps: &[f64], iterations: &[usize]) -> f64 {
    let xs: Vec<f64> = eps.iter().map(|e| (1.0 / e).ln()).collect();
    let ys: Vec<f64> = iterations.iter().map(|&k| (k.max(1) as f64).ln()).collect();
    fit_line(&xs, &ys).0
}

/// Run replicate 0 once per tolerance and fit the scaling slope.
pub fn sweep_epsilon(spec: &ExperimentSpec) -> Result<SweepReport> {
    spec.validate()?;
    check_eps_list(&spec.eps_list)?;
    if spec.second_order && spec.solver != SolverKind::Rtr {
        return Err(Error::contract("second-order sweeps need --solver rtr"));
    }
    let rows: Vec<Result<SweepRow>> = pool(spec.jobs)?.install(|| {
        spec.eps_list
            .par_iter()
            .map(|&eps| {
                let mut s = spec.clone();
                s.settings.eps_g = Some(eps);
                s.settings.eps_h = if spec.second_order { Some(eps) } else { None };
                let inst = build_instance(&s, 0)?;
                let out = solve_instance(&s, &inst).map_err(|f| f.error)?;
                let (c, g, h) = out.evals();
                Ok(SweepRow {
                    eps,
                    iterations: out.iterations(),
                    cost_evals: c,
                    grad_evals: g,
                    hess_evals: h,
                    status: out.status(),
                })
            })
            .collect()
    });
    let rows: Vec<SweepRow> = rows.into_iter().collect::<Result<_>>()?;
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let its: Vec<usize> = rows.iter().map(|r| r.iterations).collect();
    let slope = fit_scaling_slope(&eps, &its);
    let cap = if spec.second_order { SECOND_ORDER_SLOPE_CAP } else { FIRST_ORDER_SLOPE_CAP };
    Ok(SweepReport {
        schema: SWEEP_SCHEMA.into(),
        solver: spec.solver.name().into(),
        second_order: spec.second_order,
        rows,
        slope,
        cap,
        pass: slope <= cap,
    })
}

pub fn write_sweep(dir: &Path, rep: &SweepReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    write(&dir.join("sweep.csv"), &rep.to_csv())?;
    write(&dir.join("sweep.json"), &serde_json::to_string_pretty(rep)?)
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckEntry {
    pub pair: usize,
    pub check: String,
    pub slope: f64,
    pub required: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub schema: String,
    pub problem: String,
    pub entries: Vec<CheckEntry>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }
}

/// Taylor-remainder slopes of the gradient, Hessian and retraction at
/// `pairs` random `(x, η)` drawn after the instance on stream `(seed, 0)`.
pub fn check(spec: &ExperimentSpec, pairs: usize) -> Result<CheckReport> {
    let mut s = spec.clone();
    s.solver = SolverKind::Rtr;
    let inst = build_instance(&s, 0)?;
    let mut rng = rng_for(spec.seed, 1 << 32);
    let p = &inst.problem;
    let m = p.manifold();
    let mut entries = Vec::new();
    let slack = crate::problem::TAYLOR_SLOPE_SLACK;
    for i in 0..pairs {
        let x = m.random_point(&mut rng);
        let eta = m.random_unit_tangent(&x, &mut rng);
        let g = p.check_gradient(&x, &eta)?;
        entries.push(CheckEntry { pair: i, check: "gradient".into(), slope: g.slope, required: 2.0 - slack, pass: g.pass });
        if p.has_hessian() {
            let h = p.check_hessian(&x, &eta)?;
            entries.push(CheckEntry { pair: i, check: "hessian".into(), slope: h.slope, required: 3.0 - slack, pass: h.pass });
        }
        let r = m.check_retraction_orders(&x, &eta)?;
        entries.push(CheckEntry {
            pair: i,
            check: "retraction first order".into(),
            slope: r.first_order_slope,
            required: 2.0 - slack,
            pass: r.first_order_slope >= 2.0 - slack,
        });
        entries.push(CheckEntry {
            pair: i,
            check: "retraction vs geodesic".into(),
            slope: r.geodesic_slope,
            required: 3.0 - slack,
            pass: r.geodesic_slope >= 3.0 - slack,
        });
    }
    Ok(CheckReport { schema: CHECK_SCHEMA.into(), problem: inst.label, entries })
}

/// Process exit code for an error: 1 usage, 2 I/O or parse, 3 numerical.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Contract(_) | Error::Capability(_) => 1,
        Error::Parse { .. } | Error::Format(_) | Error::Io(_) => 2,
        Error::Numerical(_) => 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::{verify_bounds, AnyTrace, VerifyOptions};

    fn rayleigh(n: usize, solver: SolverKind) -> ExperimentSpec {
        ExperimentSpec::new(ProblemSpec::Rayleigh { n, matrix: None }, solver)
    }

    #[test]
    fn config_file_parsing() {
        let kv = parse_config("# comment\nsolver = rtr\n\neps-g=1e-6 # trailing\n").unwrap();
        assert_eq!(kv, vec![("solver".into(), "rtr".into()), ("eps-g".into(), "1e-6".into())]);
        assert!(matches!(parse_config("ok = 1\nbroken\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn rank_choice_parses() {
        assert_eq!("auto".parse::<RankChoice>(), Ok(RankChoice::Auto));
        assert_eq!("7".parse::<RankChoice>(), Ok(RankChoice::Fixed(7)));
        assert!("x".parse::<RankChoice>().is_err());
    }

    #[test]
    fn eps_list_validation() {
        assert!(check_eps_list(&[1e-1, 1e-2, 1e-3, 1e-4]).is_ok());
        assert!(check_eps_list(&[1e-1, 1e-2, 1e-3]).is_err());
        assert!(check_eps_list(&[1e-1, 1e-3, 1e-2, 1e-4]).is_err());
        assert!(check_eps_list(&[1e-1, 5e-2, 3e-2, 2e-2]).is_err());
        assert!(check_eps_list(&[1e-1, 1e-2, 0.0, -1.0]).is_err());
    }

    #[test]
    fn fitter_recovers_inverse_square_counts() {
        let eps: [f64; 5] = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
        let its: Vec<usize> = eps.iter().map(|e| (5.0 / (e * e)).round() as usize).collect();
        assert!((fit_scaling_slope(&eps, &its) - 2.0).abs() < 1e-3);
        let cubic: Vec<usize> = eps.iter().map(|e| (2.0 / (e * e * e)).round() as usize).collect();
        assert!((fit_scaling_slope(&eps, &cubic) - 3.0).abs() < 1e-3);
    }

    #[test]
    fn instances_are_reproducible() {
        let spec = rayleigh(10, SolverKind::GdFixed);
        let a = build_instance(&spec, 3).unwrap();
        let b = build_instance(&spec, 3).unwrap();
        let c = build_instance(&spec, 4).unwrap();
        assert_eq!(a.x0.coords(), b.x0.coords());
        assert_ne!(a.x0.coords(), c.x0.coords());
        assert_eq!(a.lipschitz, b.lipschitz);
        assert_eq!(a.lipschitz.unwrap().1, Provenance::Estimated);
        assert_eq!(a.fstar.unwrap().provenance, Provenance::Oracle);
    }

    #[test]
    fn fixed_step_run_meets_its_iteration_bound() {
        let mut spec = rayleigh(20, SolverKind::GdFixed);
        spec.settings.eps_g = Some(1e-4);
        let inst = build_instance(&spec, 0).unwrap();
        let out = solve_instance(&spec, &inst).map_err(|f| f.error).unwrap();
        let SolverOutput::Gd { trace, .. } = out else { panic!("gd output expected") };
        assert_eq!(trace.status, Some(crate::gd::GdStatus::GradToleranceMet));
        let rep = verify_bounds(&AnyTrace::Gd(trace), &VerifyOptions::default()).unwrap();
        let e = rep.entry("iterations <= ceil(2(f0-f*)L/eps^2)").unwrap();
        assert!(e.pass && e.applicable, "{}", rep.summary());
        assert!(rep.passed(), "{}", rep.summary());
    }

    #[test]
    fn maxcut_needs_rtr() {
        let spec = ExperimentSpec::new(
            ProblemSpec::MaxCut { matrix: PathBuf::from("C.mtx"), p: RankChoice::Auto },
            SolverKind::GdArmijo,
        );
        assert!(matches!(spec.validate(), Err(Error::Contract(_))));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::contract("x")), 1);
        assert_eq!(exit_code(&Error::Io("x".into())), 2);
        assert_eq!(exit_code(&Error::Parse { line: 1, msg: "x".into() }), 2);
        assert_eq!(exit_code(&Error::numerical("x")), 3);
    }

    #[test]
    fn derivative_check_passes_on_rayleigh() {
        let rep = check(&rayleigh(12, SolverKind::Rtr), 3).unwrap();
        assert!(rep.passed(), "{:?}", rep.entries);
        assert_eq!(rep.entries.len(), 3 * 4);
    }
}
