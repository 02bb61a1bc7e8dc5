//! Riemannian gradient descent with a fixed `1/L` step or backtracking Armijo
//! line search along `−grad f`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SolveFailure};
use crate::manifold::{Point, TangentVector};
use crate::problem::Problem;
use crate::trace::{csv_header_check, parse_field, FStar, Provenance};

pub const GD_SCHEMA: &str = "gdtrace-v1";
pub const GD_CSV_COLUMNS: [&str; 8] = ["k", "f", "gradnorm", "stepnorm", "t", "backtracks", "costevals", "gradevals"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GdMode {
    FixedStep,
    Armijo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    pub eps_g: f64,
    /// Lipschitz constant of the pullback gradients; required for `FixedStep`.
    pub lipschitz: Option<f64>,
    pub c1: f64,
    pub tau: f64,
    pub t_bar: f64,
    pub max_iters: usize,
    pub max_backtracks: usize,
    pub mode: GdMode,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig {
            eps_g: 1e-6,
            lipschitz: None,
            c1: 1e-4,
            tau: 0.5,
            t_bar: 1.0,
            max_iters: 1_000_000,
            max_backtracks: 100,
            mode: GdMode::Armijo,
        }
    }
}

impl GdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_g > 0.0) {
            return Err(Error::contract("eps_g must be positive"));
        }
        if !(self.c1 > 0.0 && self.c1 < 1.0) {
            return Err(Error::contract("c1 must lie in (0, 1)"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::contract("tau must lie in (0, 1)"));
        }
        if !(self.t_bar > 0.0) {
            return Err(Error::contract("t_bar must be positive"));
        }
        if self.mode == GdMode::FixedStep && !self.lipschitz.is_some_and(|l| l > 0.0 && l.is_finite()) {
            return Err(Error::contract("fixed-step mode needs a positive finite L"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GdStatus {
    GradToleranceMet,
    IterCapReached,
}

/// One iteration: the state `x_k` and the step taken from it. The last record
/// of a finished run describes the returned point and carries no step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdRecord {
    pub k: usize,
    pub f: f64,
    pub gradnorm: f64,
    pub stepnorm: f64,
    pub t: f64,
    pub backtracks: usize,
    pub costevals: u64,
    pub gradevals: u64,
    /// `⟨−grad f(x_k), η⁰⟩` exactly as used in the sufficient-decrease test.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    /// Largest `2|f̂(tη⁰) − f − t⟨g, η⁰⟩| / (t²‖η⁰‖²)` over the trial steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz_ratio: Option<f64>,
}

impl GdRecord {
    fn state(k: usize, f: f64, gradnorm: f64) -> Self {
        GdRecord {
            k,
            f,
            gradnorm,
            stepnorm: 0.0,
            t: 0.0,
            backtracks: 0,
            costevals: 0,
            gradevals: 1,
            slope: None,
            lipschitz_ratio: None,
        }
    }

    pub fn has_step(&self) -> bool {
        self.slope.is_some() || self.stepnorm > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdTrace {
    pub schema: String,
    pub config: GdConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fstar: Option<FStar>,
    /// Source of `config.lipschitz`, when one was set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz_provenance: Option<Provenance>,
    /// Cost evaluations spent before the first iteration (`f(x_0)`).
    pub initial_costevals: u64,
    pub records: Vec<GdRecord>,
    pub status: Option<GdStatus>,
}

impl GdTrace {
    pub fn new(config: &GdConfig) -> Self {
        GdTrace {
            schema: GD_SCHEMA.into(),
            config: config.clone(),
            problem: None,
            fstar: None,
            lipschitz_provenance: None,
            initial_costevals: 1,
            records: Vec::new(),
            status: None,
        }
    }

    /// Number of steps taken.
    pub fn iterations(&self) -> usize {
        self.records.iter().filter(|r| r.has_step()).count()
    }

    pub fn f0(&self) -> Option<f64> {
        self.records.first().map(|r| r.f)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        match v.get("schema").and_then(|s| s.as_str()) {
            Some(GD_SCHEMA) => Ok(serde_json::from_value(v)?),
            Some(other) => Err(Error::Format(format!("expected schema {GD_SCHEMA}, found {other}"))),
            None => Err(Error::Format("trace has no schema tag".into())),
        }
    }

    pub fn to_csv(&self) -> String {
        records_to_csv(&self.records)
    }
}

pub fn records_to_csv(records: &[GdRecord]) -> String {
    let mut out = GD_CSV_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.k, r.f, r.gradnorm, r.stepnorm, r.t, r.backtracks, r.costevals, r.gradevals
        ));
    }
    out
}

/// Parse the CSV form. The JSON-only fields come back as `None`.
pub fn records_from_csv(text: &str) -> Result<Vec<GdRecord>> {
    let mut lines = text.lines().enumerate();
    csv_header_check(lines.next(), &GD_CSV_COLUMNS)?;
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != GD_CSV_COLUMNS.len() {
            return Err(Error::Parse { line: i + 1, msg: format!("expected {} fields", GD_CSV_COLUMNS.len()) });
        }
        out.push(GdRecord {
            k: parse_field(f[0], i)?,
            f: parse_field(f[1], i)?,
            gradnorm: parse_field(f[2], i)?,
            stepnorm: parse_field(f[3], i)?,
            t: parse_field(f[4], i)?,
            backtracks: parse_field(f[5], i)?,
            costevals: parse_field(f[6], i)?,
            gradevals: parse_field(f[7], i)?,
            slope: None,
            lipschitz_ratio: None,
        });
    }
    Ok(out)
}

/// Outcome of one backtracking line search.
#[derive(Clone, Debug)]
pub struct ArmijoStep {
    pub t: f64,
    pub eta: TangentVector,
    pub backtracks: usize,
    pub x_new: Point,
    pub f_new: f64,
    pub slope: f64,
    pub lipschitz_ratio: f64,
}

/// Backtracking from `t̄` by `τ` until
/// `f(x) − f(R_x(tη⁰)) ≥ c1 t ⟨−grad f(x), η⁰⟩`.
pub fn armijo_search(p: &Problem, x: &Point, eta0: &TangentVector, cfg: &GdConfig) -> Result<ArmijoStep> {
    let fx = p.cost(x);
    let g = p.riemannian_grad(x)?;
    armijo_search_from(p, x, fx, &g, eta0, cfg)
}

/// As [`armijo_search`] with `f(x)` and `grad f(x)` already known.
pub fn armijo_search_from(
    p: &Problem,
    x: &Point,
    fx: f64,
    g: &TangentVector,
    eta0: &TangentVector,
    cfg: &GdConfig,
) -> Result<ArmijoStep> {
    if !eta0.base().same_as(x) || !g.base().same_as(x) {
        return Err(Error::contract("line-search vectors are not based at x"));
    }
    let slope = -g.dot(eta0);
    if !(slope > 0.0) {
        return Err(Error::contract("line-search direction is not a descent direction"));
    }
    let eta_sq = eta0.dot(eta0);
    let mut t = cfg.t_bar;
    let mut ratio = 0.0f64;
    for backtracks in 0..=cfg.max_backtracks {
        let eta = eta0.scale(t);
        let y = p.manifold().retract(x, &eta)?;
        let fy = p.cost(&y);
        if !fy.is_finite() {
            return Err(Error::numerical(format!("non-finite cost at trial step t = {t:e}")));
        }
        ratio = ratio.max(2.0 * (fy - fx + t * slope).abs() / (t * t * eta_sq));
        if !(fx - fy < cfg.c1 * t * slope) {
            return Ok(ArmijoStep { t, eta, backtracks, x_new: y, f_new: fy, slope, lipschitz_ratio: ratio });
        }
        if backtracks < cfg.max_backtracks {
            t *= cfg.tau;
        }
    }
    Err(Error::numerical(format!(
        "Armijo search exceeded {} backtracks; last trial t = {t:e}",
        cfg.max_backtracks
    )))
}

type GdOutcome = std::result::Result<(Point, GdTrace), SolveFailure<GdTrace>>;

/// Gradient descent with `η_k = −grad f(x_k)/L`.
pub fn gd_fixed_step(p: &Problem, x0: &Point, cfg: &GdConfig) -> GdOutcome {
    if cfg.mode != GdMode::FixedStep {
        return Err(fail(Error::contract("gd_fixed_step needs mode FixedStep"), GdTrace::new(cfg)));
    }
    descend(p, x0, cfg)
}

/// Gradient descent with Armijo backtracking along `−grad f(x_k)`.
pub fn gd_armijo(p: &Problem, x0: &Point, cfg: &GdConfig) -> GdOutcome {
    if cfg.mode != GdMode::Armijo {
        return Err(fail(Error::contract("gd_armijo needs mode Armijo"), GdTrace::new(cfg)));
    }
    descend(p, x0, cfg)
}

/// Dispatch on `cfg.mode`.
pub fn gd_solve(p: &Problem, x0: &Point, cfg: &GdConfig) -> GdOutcome {
    descend(p, x0, cfg)
}

fn fail(error: Error, trace: GdTrace) -> SolveFailure<GdTrace> {
    SolveFailure { error, trace }
}

fn descend(p: &Problem, x0: &Point, cfg: &GdConfig) -> GdOutcome {
    let mut trace = GdTrace::new(cfg);
    if let Err(e) = cfg.validate() {
        return Err(fail(e, trace));
    }
    if x0.manifold() != p.manifold() {
        return Err(fail(Error::contract("x0 does not belong to the problem's manifold"), trace));
    }
    if let Err(e) = x0.check_feasible() {
        return Err(fail(e, trace));
    }
    let mut x = x0.clone();
    let mut fx = p.cost(&x);
    if !fx.is_finite() {
        return Err(fail(Error::numerical("non-finite cost at x0"), trace));
    }
    let mut k = 0usize;
    loop {
        let g = match p.riemannian_grad(&x) {
            Ok(g) => g,
            Err(e) => return Err(fail(e, trace)),
        };
        let gn = g.norm();
        let mut rec = GdRecord::state(k, fx, gn);
        if gn <= cfg.eps_g || k >= cfg.max_iters {
            trace.records.push(rec);
            trace.status = Some(if gn <= cfg.eps_g { GdStatus::GradToleranceMet } else { GdStatus::IterCapReached });
            return Ok((x, trace));
        }
        let eta0 = g.scale(-1.0);
        let step = match cfg.mode {
            GdMode::Armijo => armijo_search_from(p, &x, fx, &g, &eta0, cfg),
            GdMode::FixedStep => fixed_step(p, &x, fx, &g, &eta0, cfg.lipschitz.unwrap_or(1.0)),
        };
        let step = match step {
            Ok(s) => s,
            Err(e) => {
                trace.records.push(rec);
                return Err(fail(e, trace));
            }
        };
        if cfg.mode == GdMode::FixedStep {
            let l = cfg.lipschitz.unwrap_or(1.0);
            if fx - step.f_new < gn * gn / (2.0 * l) {
                log::debug!("k = {k}: decrease below ‖g‖²/(2L); L = {l} underestimates the pullback constant");
            }
        }
        rec.stepnorm = step.eta.norm();
        rec.t = step.t;
        rec.backtracks = step.backtracks;
        rec.costevals = step.backtracks as u64 + 1;
        rec.slope = Some(step.slope);
        rec.lipschitz_ratio = Some(step.lipschitz_ratio);
        trace.records.push(rec);
        x = step.x_new;
        fx = step.f_new;
        k += 1;
    }
}

fn fixed_step(p: &Problem, x: &Point, fx: f64, g: &TangentVector, eta0: &TangentVector, l: f64) -> Result<ArmijoStep> {
    let t = 1.0 / l;
    let eta = eta0.scale(t);
    let y = p.manifold().retract(x, &eta)?;
    let fy = p.cost(&y);
    if !fy.is_finite() {
        return Err(Error::numerical("non-finite cost after a fixed step"));
    }
    let slope = -g.dot(eta0);
    let eta_sq = eta0.dot(eta0);
    let ratio = 2.0 * (fy - fx + t * slope).abs() / (t * t * eta_sq);
    Ok(ArmijoStep { t, eta, backtracks: 0, x_new: y, f_new: fy, slope, lipschitz_ratio: ratio })
}

/// `max(1, 2 + ⌈log_{1/τ}(t̄L / (2(1 − c1)))⌉)`: cap on trial evaluations per
/// Armijo search when the pullbacks satisfy the quadratic bound with `L`.
pub fn armijo_eval_bound(t_bar: f64, lipschitz: f64, c1: f64, tau: f64) -> u64 {
    let arg = t_bar * lipschitz / (2.0 * (1.0 - c1));
    if !(arg > 0.0) {
        return 1;
    }
    let lg = (arg.ln() / (1.0 / tau).ln()).ceil();
    (2.0 + lg).max(1.0) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::Manifold;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn half_square() -> Problem {
        Problem::quadratic(Manifold::euclidean(1), DMatrix::identity(1, 1), vec![0.0]).unwrap()
    }

    fn fixed(l: f64, eps: f64) -> GdConfig {
        GdConfig { eps_g: eps, lipschitz: Some(l), mode: GdMode::FixedStep, ..GdConfig::default() }
    }

    #[test]
    fn config_validation() {
        assert!(GdConfig::default().validate().is_ok());
        assert!(GdConfig { c1: 1.0, ..GdConfig::default() }.validate().is_err());
        assert!(GdConfig { tau: 0.0, ..GdConfig::default() }.validate().is_err());
        assert!(GdConfig { t_bar: 0.0, ..GdConfig::default() }.validate().is_err());
        assert!(GdConfig { mode: GdMode::FixedStep, ..GdConfig::default() }.validate().is_err());
    }

    #[test]
    fn critical_start_takes_no_steps() {
        let p = half_square();
        let x0 = p.manifold().point(vec![0.0]).unwrap();
        let (x, tr) = gd_fixed_step(&p, &x0, &fixed(1.0, 1e-6)).unwrap();
        assert_eq!(x.coords(), x0.coords());
        assert_eq!(tr.iterations(), 0);
        assert_eq!(tr.status, Some(GdStatus::GradToleranceMet));
        let (_, tr) = gd_armijo(&p, &x0, &GdConfig::default()).unwrap();
        assert_eq!(tr.iterations(), 0);
    }

    #[test]
    fn exact_curvature_converges_in_one_step() {
        let p = half_square();
        let x0 = p.manifold().point(vec![1.0]).unwrap();
        let (x, tr) = gd_fixed_step(&p, &x0, &fixed(1.0, 1e-6)).unwrap();
        assert_eq!(x.coords(), &[0.0]);
        assert_eq!(tr.iterations(), 1);
    }

    #[test]
    fn armijo_boundary_equality_accepts() {
        let p = half_square();
        let x = p.manifold().point(vec![1.0]).unwrap();
        let eta0 = p.manifold().tangent(&x, vec![-1.0]).unwrap();
        let cfg = GdConfig { c1: 0.5, t_bar: 1.0, ..GdConfig::default() };
        let s = armijo_search(&p, &x, &eta0, &cfg).unwrap();
        assert_eq!((s.t, s.backtracks), (1.0, 0));
        assert_eq!(s.f_new, 0.0);
    }

    #[test]
    fn linear_cost_never_backtracks() {
        let p = Problem::quadratic(Manifold::euclidean(3), DMatrix::zeros(3, 3), vec![1.0, -2.0, 0.5]).unwrap();
        let x = p.manifold().point(vec![0.3, 0.1, -4.0]).unwrap();
        let g = p.riemannian_grad(&x).unwrap();
        for t_bar in [0.1, 1.0, 7.5] {
            let cfg = GdConfig { t_bar, c1: 0.9, ..GdConfig::default() };
            let s = armijo_search(&p, &x, &g.scale(-1.0), &cfg).unwrap();
            assert_eq!((s.t, s.backtracks), (t_bar, 0));
        }
    }

    #[test]
    fn non_descent_direction_is_rejected() {
        let p = half_square();
        let x = p.manifold().point(vec![1.0]).unwrap();
        let eta0 = p.manifold().tangent(&x, vec![1.0]).unwrap();
        assert!(matches!(armijo_search(&p, &x, &eta0, &GdConfig::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn backtrack_cap_reports_last_trial() {
        // A cost that is NaN-free but whose gradient points the wrong way.
        let p = Problem::new(Manifold::euclidean(1), |x| x[0] * x[0], |x| vec![-x[0]]);
        let x = p.manifold().point(vec![1.0]).unwrap();
        let g = p.riemannian_grad(&x).unwrap();
        let cfg = GdConfig { max_backtracks: 5, ..GdConfig::default() };
        match armijo_search(&p, &x, &g.scale(-1.0), &cfg) {
            Err(Error::Numerical(msg)) => assert!(msg.contains("3.125e-2"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_finite_cost_aborts_with_trace() {
        let p = Problem::new(
            Manifold::euclidean(1),
            |x| if x[0] < 0.5 { f64::NAN } else { 0.5 * x[0] * x[0] },
            |x| vec![x[0]],
        );
        let x0 = p.manifold().point(vec![1.0]).unwrap();
        let err = gd_fixed_step(&p, &x0, &fixed(1.0, 1e-9)).unwrap_err();
        assert!(matches!(err.error, Error::Numerical(_)));
        assert_eq!(err.trace.records.len(), 1);
    }

    #[test]
    fn infeasible_start_is_a_contract_error() {
        let p = Problem::rayleigh(DMatrix::identity(2, 2)).unwrap();
        let x0 = p.manifold().point_with_tol(vec![1.0, 0.0], 1e-9).unwrap();
        let bad = Manifold::sphere(3).point(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(gd_armijo(&p, &x0, &GdConfig::default()).is_ok());
        assert!(matches!(gd_armijo(&p, &bad, &GdConfig::default()).unwrap_err().error, Error::Contract(_)));
    }

    fn random_sym(n: usize, seed: u64) -> DMatrix<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        (&b + b.transpose()) * 0.5
    }

    #[test]
    fn armijo_rayleigh_reaches_leftmost_eigenvector() {
        let a = random_sym(20, 3);
        let eig = nalgebra::SymmetricEigen::new(a.clone());
        let (imin, _) = eig.eigenvalues.iter().enumerate().fold((0, f64::INFINITY), |b, (i, v)| if *v < b.1 { (i, *v) } else { b });
        let v: DVector<f64> = eig.eigenvectors.column(imin).into();
        let p = Problem::rayleigh(a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0 = p.manifold().random_point(&mut rng);
        let cfg = GdConfig { eps_g: 1e-7, ..GdConfig::default() };
        let (x, tr) = gd_armijo(&p, &x0, &cfg).unwrap();
        assert_eq!(tr.status, Some(GdStatus::GradToleranceMet));
        assert!(tr.records.windows(2).all(|w| w[1].f <= w[0].f));
        let cosang = DVector::from_column_slice(x.coords()).dot(&v).abs().min(1.0);
        assert!(cosang.acos() < 1e-4, "angle {}", cosang.acos());
    }

    #[test]
    fn eval_counts_match_records() {
        let p = Problem::rayleigh(random_sym(10, 5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = p.manifold().random_point(&mut rng);
        let before = p.eval_counts();
        let (_, tr) = gd_armijo(&p, &x0, &GdConfig { eps_g: 1e-5, ..GdConfig::default() }).unwrap();
        let d = p.eval_counts() - before;
        let cost: u64 = tr.initial_costevals + tr.records.iter().map(|r| r.costevals).sum::<u64>();
        let grad: u64 = tr.records.iter().map(|r| r.gradevals).sum();
        assert_eq!((d.cost, d.grad, d.hess), (cost, grad, 0));
    }

    #[test]
    fn iteration_cap_is_reported() {
        let p = Problem::rayleigh(random_sym(10, 6)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = p.manifold().random_point(&mut rng);
        let cfg = GdConfig { eps_g: 1e-14, max_iters: 3, ..GdConfig::default() };
        let (_, tr) = gd_armijo(&p, &x0, &cfg).unwrap();
        assert_eq!(tr.status, Some(GdStatus::IterCapReached));
        assert_eq!(tr.iterations(), 3);
    }

    #[test]
    fn eval_bound_formula() {
        assert_eq!(armijo_eval_bound(1.0, 1.0, 0.5, 0.5), 2);
        assert_eq!(armijo_eval_bound(1.0, 8.0, 0.5, 0.5), 5);
        assert_eq!(armijo_eval_bound(1e-6, 1.0, 0.5, 0.5), 1);
    }

    #[test]
    fn csv_and_json_round_trip() {
        let p = Problem::rayleigh(random_sym(6, 9)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x0 = p.manifold().random_point(&mut rng);
        let (_, tr) = gd_armijo(&p, &x0, &GdConfig { eps_g: 1e-4, ..GdConfig::default() }).unwrap();
        assert_eq!(GdTrace::from_json(&tr.to_json().unwrap()).unwrap(), tr);
        let stripped: Vec<GdRecord> = tr
            .records
            .iter()
            .cloned()
            .map(|r| GdRecord { slope: None, lipschitz_ratio: None, ..r })
            .collect();
        assert_eq!(records_from_csv(&tr.to_csv()).unwrap(), stripped);
        let wrong = tr.to_json().unwrap().replace(GD_SCHEMA, "gdtrace-v0");
        assert!(matches!(GdTrace::from_json(&wrong), Err(Error::Format(_))));
    }
}
