//! Riemannian trust regions with first-order (Cauchy or truncated CG) steps
//! while the gradient is large and eigensteps along negative curvature once
//! it is small.

use std::cell::Cell;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SolveFailure};
use crate::linalg::{all_finite, axpy, min_eigenpair, symmetrize};
use crate::manifold::{Manifold, Point, TangentBasis, TangentVector};
use crate::problem::Problem;
use crate::trace::{csv_header_check, parse_field, FStar};

pub const RTR_SCHEMA: &str = "rtrtrace-v1";
pub const RTR_CSV_COLUMNS: [&str; 10] = [
    "k", "f", "gradnorm", "delta", "steptype", "stepnorm", "modeldec", "rho", "accepted", "lambdamin",
];

/// A step counts as reaching the trust-region boundary when
/// `‖η‖ ≥ (1 − BOUNDARY_RTOL)·Δ`.
pub const BOUNDARY_RTOL: f64 = 1e-10;

/// Largest tolerated asymmetry of the tangent-basis Hessian matrix.
pub const SYMMETRY_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerSolver {
    Cauchy,
    TruncatedCg,
}

/// Which operator plays `H_k` in the quadratic model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianModel {
    /// Riemannian Hessian from the callback.
    Exact,
    /// Gradient differences along the retraction for first-order steps;
    /// eigensteps still use the exact Hessian.
    FiniteDifference,
    /// `Exact` when a second-order tolerance is set, `FiniteDifference` in
    /// first-order-only mode (so the Hessian callback is never touched).
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RtrConfig {
    pub delta_bar: f64,
    pub delta0: f64,
    pub rho_prime: f64,
    pub eps_g: f64,
    /// `None` runs in first-order-only mode.
    pub eps_h: Option<f64>,
    pub inner: InnerSolver,
    pub kappa: f64,
    pub theta: f64,
    /// Inner CG iteration cap; `None` means the manifold dimension.
    pub max_inner_iters: Option<usize>,
    pub max_iters: usize,
    pub hessian_model: HessianModel,
    pub fd_step: f64,
}

impl Default for RtrConfig {
    fn default() -> Self {
        RtrConfig {
            delta_bar: 1.0,
            delta0: 0.125,
            rho_prime: 0.1,
            eps_g: 1e-6,
            eps_h: None,
            inner: InnerSolver::TruncatedCg,
            kappa: 0.1,
            theta: 1.0,
            max_inner_iters: None,
            max_iters: 100_000,
            hessian_model: HessianModel::Auto,
            fd_step: 2f64.powi(-14),
        }
    }
}

impl RtrConfig {
    /// Defaults with radii scaled to the manifold: `Δ̄ = π` on the sphere,
    /// `π√rows` on the oblique manifold, `√n` on Euclidean space; `Δ0 = Δ̄/8`.
    pub fn for_manifold(m: Manifold) -> Self {
        let delta_bar = match m {
            Manifold::Euclidean { n } => (n as f64).sqrt(),
            Manifold::Sphere { .. } => std::f64::consts::PI,
            Manifold::Oblique { rows, .. } => std::f64::consts::PI * (rows as f64).sqrt(),
        };
        RtrConfig { delta_bar, delta0: delta_bar / 8.0, ..RtrConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_bar > 0.0 && self.delta_bar.is_finite()) {
            return Err(Error::contract("delta_bar must be positive and finite"));
        }
        if !(self.delta0 > 0.0 && self.delta0 <= self.delta_bar) {
            return Err(Error::contract("delta0 must lie in (0, delta_bar]"));
        }
        if !(self.rho_prime > 0.0 && self.rho_prime < 0.25) {
            return Err(Error::contract("rho_prime must lie in (0, 1/4)"));
        }
        if !(self.eps_g > 0.0) {
            return Err(Error::contract("eps_g must be positive"));
        }
        if self.eps_h.is_some_and(|e| !(e > 0.0)) {
            return Err(Error::contract("eps_h must be positive (or absent)"));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) || !(self.theta > 0.0) {
            return Err(Error::contract("tCG needs kappa in (0, 1) and theta > 0"));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::contract("fd_step must be positive"));
        }
        Ok(())
    }

    fn first_order_model(&self) -> HessianModel {
        match (self.hessian_model, self.eps_h) {
            (HessianModel::Auto, None) => HessianModel::FiniteDifference,
            (HessianModel::Auto, Some(_)) => HessianModel::Exact,
            (m, _) => m,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    RadiallyLinear,
    LinearSymmetric,
}

type ApplyFn<'a> = dyn Fn(&TangentVector) -> Result<TangentVector> + 'a;

/// The map `H_k` of the quadratic model `m(η) = f + ⟨g, η⟩ + ½⟨η, H_k[η]⟩`.
pub struct ModelOperator<'a> {
    base: Point,
    kind: OperatorKind,
    apply: Box<ApplyFn<'a>>,
    norm_bound: Option<f64>,
}

impl std::fmt::Debug for ModelOperator<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelOperator")
            .field("kind", &self.kind)
            .field("norm_bound", &self.norm_bound)
            .finish()
    }
}

impl<'a> ModelOperator<'a> {
    pub fn new<F>(base: &Point, kind: OperatorKind, apply: F) -> Self
    where
        F: Fn(&TangentVector) -> Result<TangentVector> + 'a,
    {
        ModelOperator { base: base.clone(), kind, apply: Box::new(apply), norm_bound: None }
    }

    /// `v ↦ Proj_x(M v)` for an ambient matrix `M`; symmetric on the tangent
    /// space when `M` is.
    pub fn from_matrix(base: &Point, m: DMatrix<f64>) -> Result<ModelOperator<'static>> {
        let n = base.manifold().ambient_dim();
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::contract("model matrix does not match the ambient dimension"));
        }
        let b = base.clone();
        Ok(ModelOperator::new(base, OperatorKind::LinearSymmetric, move |v: &TangentVector| {
            let mv = &m * nalgebra::DVector::from_column_slice(v.coords());
            Ok(b.manifold().project_unchecked(&b, mv.as_slice()))
        }))
    }

    pub fn with_norm_bound(mut self, c0: f64) -> Self {
        self.norm_bound = Some(c0);
        self
    }

    pub fn base(&self) -> &Point {
        &self.base
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn norm_bound(&self) -> Option<f64> {
        self.norm_bound
    }

    pub fn apply(&self, v: &TangentVector) -> Result<TangentVector> {
        if !v.base().same_as(&self.base) {
            return Err(Error::contract("tangent vector is not based at the model's point"));
        }
        let hv = (self.apply)(v)?;
        if !all_finite(hv.coords()) {
            return Err(Error::numerical("non-finite model-operator output"));
        }
        Ok(hv)
    }

    /// `|⟨u, Hv⟩ − ⟨v, Hu⟩|`.
    pub fn symmetry_residual(&self, u: &TangentVector, v: &TangentVector) -> Result<f64> {
        Ok((u.dot(&self.apply(v)?) - v.dot(&self.apply(u)?)).abs())
    }

    /// `½⟨η, H[η]⟩`.
    fn half_quad(&self, eta: &TangentVector) -> Result<f64> {
        Ok(0.5 * eta.dot(&self.apply(eta)?))
    }
}

/// Why the inner solver stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerStop {
    Cauchy,
    Boundary,
    NegativeCurvature,
    Residual,
    MaxIters,
    /// tCG decreased the model less than the Cauchy step; the latter is used.
    CauchyFallback,
}

/// A trial step with the model quantities needed to audit it.
#[derive(Clone, Debug)]
pub struct ModelStep {
    pub eta: TangentVector,
    /// `m(0) − m(η) = −⟨g, η⟩ − ½⟨η, H[η]⟩`.
    pub model_decrease: f64,
    pub g_dot_eta: f64,
    pub eta_h_eta: f64,
    /// Largest `|⟨v, H[v]⟩|/‖v‖²` over the directions probed (including the
    /// Cauchy direction `−g`).
    pub curvature: f64,
    pub inner_iters: usize,
    pub stop: InnerStop,
}

fn check_g(g: &TangentVector, h: &ModelOperator, delta: f64) -> Result<f64> {
    if !g.base().same_as(h.base()) {
        return Err(Error::contract("gradient and model operator live at different points"));
    }
    if !(delta > 0.0) {
        return Err(Error::contract("trust-region radius must be positive"));
    }
    let gn = g.norm();
    if gn == 0.0 {
        return Err(Error::contract("first-order step needs a nonzero gradient"));
    }
    Ok(gn)
}

/// Cauchy step from `d = −g` and `H[d]`, with `α` as a fraction of `d`.
fn cauchy_from(g: &TangentVector, d: &TangentVector, hd: &TangentVector, delta: f64, gn: f64) -> ModelStep {
    let dhd = d.dot(hd);
    let gg = gn * gn;
    let alpha = if dhd > 0.0 { (gg / dhd).min(delta / gn) } else { delta / gn };
    let eta = d.scale(alpha);
    let g_dot_eta = g.dot(&eta);
    let eta_h_eta = alpha * alpha * dhd;
    ModelStep {
        eta,
        model_decrease: -g_dot_eta - 0.5 * eta_h_eta,
        g_dot_eta,
        eta_h_eta,
        curvature: dhd.abs() / gg,
        inner_iters: 1,
        stop: InnerStop::Cauchy,
    }
}

/// `η = −α g` with `α = min(‖g‖²/⟨g, Hg⟩, Δ/‖g‖)` under positive curvature
/// and `α = Δ/‖g‖` otherwise.
pub fn cauchy_step(g: &TangentVector, h: &ModelOperator, delta: f64) -> Result<ModelStep> {
    let gn = check_g(g, h, delta)?;
    let d = g.scale(-1.0);
    let hd = h.apply(&d)?;
    Ok(cauchy_from(g, &d, &hd, delta, gn))
}

/// Steihaug–Toint truncated CG on the model, stopping at the boundary, on
/// nonpositive curvature, or when `‖r_j‖ ≤ ‖r_0‖·min(κ, ‖r_0‖^θ)`. Falls back
/// to the Cauchy step if that decreases the model more.
pub fn truncated_cg(g: &TangentVector, h: &ModelOperator, delta: f64, cfg: &RtrConfig) -> Result<ModelStep> {
    let gn = check_g(g, h, delta)?;
    let x = h.base().clone();
    let max_inner = cfg.max_inner_iters.unwrap_or_else(|| x.manifold().dim()).max(1);
    let target = gn * cfg.kappa.min(gn.powf(cfg.theta));

    let mut eta = TangentVector::zero(&x);
    let mut r = g.clone();
    let mut rr = gn * gn;
    let mut dir = g.scale(-1.0);
    let mut cauchy: Option<ModelStep> = None;
    let mut curvature = 0.0f64;
    let mut stop = InnerStop::MaxIters;
    let mut iters = 0;
    while iters < max_inner {
        iters += 1;
        let hdir = h.apply(&dir)?;
        let dhd = dir.dot(&hdir);
        let dd = dir.dot(&dir);
        curvature = curvature.max(dhd.abs() / dd);
        if cauchy.is_none() {
            cauchy = Some(cauchy_from(g, &dir, &hdir, delta, gn));
        }
        let alpha = rr / dhd;
        let trial = eta.add_scaled(alpha, &dir);
        if dhd <= 0.0 || trial.norm() >= delta {
            let ed = eta.dot(&dir);
            let ee = eta.dot(&eta);
            let tau = (-ed + (ed * ed + dd * (delta * delta - ee)).max(0.0).sqrt()) / dd;
            eta = eta.add_scaled(tau, &dir);
            stop = if dhd <= 0.0 { InnerStop::NegativeCurvature } else { InnerStop::Boundary };
            break;
        }
        eta = trial;
        r = r.add_scaled(alpha, &hdir);
        let rr_new = r.dot(&r);
        if rr_new.sqrt() <= target {
            stop = InnerStop::Residual;
            break;
        }
        dir = r.scale(-1.0).add_scaled(rr_new / rr, &dir);
        rr = rr_new;
    }
    let half = h.half_quad(&eta)?;
    let eta_h_eta = 2.0 * half;
    curvature = curvature.max(eta_h_eta.abs() / eta.dot(&eta));
    let g_dot_eta = g.dot(&eta);
    let decrease = -g_dot_eta - half;
    let cauchy = cauchy.expect("at least one inner iteration");
    if decrease < cauchy.model_decrease {
        return Ok(ModelStep {
            curvature: curvature.max(cauchy.curvature),
            inner_iters: iters,
            stop: InnerStop::CauchyFallback,
            ..cauchy
        });
    }
    Ok(ModelStep {
        eta,
        model_decrease: decrease,
        g_dot_eta,
        eta_h_eta,
        curvature: curvature.max(cauchy.curvature),
        inner_iters: iters,
        stop,
    })
}

/// Leftmost eigenpair of the symmetrized matrix `⟨v_i, H[v_j]⟩`.
#[derive(Clone, Debug)]
pub struct LeftmostPair {
    pub lambda_min: f64,
    /// Unit tangent eigenvector (sign not normalized).
    pub u: TangentVector,
    pub symmetry_residual: f64,
}

/// Dense representation of `H` in an orthonormal tangent basis.
pub fn basis_matrix(h: &ModelOperator, basis: &TangentBasis) -> Result<DMatrix<f64>> {
    let n = basis.len();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let hv = h.apply(&basis.vectors[j])?;
        for i in 0..n {
            m[(i, j)] = basis.vectors[i].dot(&hv);
        }
    }
    Ok(m)
}

pub fn leftmost_eigenpair(h: &ModelOperator, basis: &TangentBasis) -> Result<LeftmostPair> {
    if h.kind() != OperatorKind::LinearSymmetric {
        return Err(Error::contract("eigensteps need a linear symmetric model operator"));
    }
    if basis.vectors.first().is_some_and(|v| !v.base().same_as(h.base())) {
        return Err(Error::contract("basis and model operator live at different points"));
    }
    if basis.is_empty() {
        return Ok(LeftmostPair { lambda_min: f64::INFINITY, u: TangentVector::zero(h.base()), symmetry_residual: 0.0 });
    }
    let m = basis_matrix(h, basis)?;
    let (sym, resid) = symmetrize(&m);
    let scale = 1.0 + sym.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if resid > SYMMETRY_TOL * scale {
        return Err(Error::contract(format!("model operator is not symmetric (residual {resid:e})")));
    }
    let (lambda_min, coeffs) = min_eigenpair(&sym);
    let u = basis.combine(&coeffs);
    let un = u.norm();
    Ok(LeftmostPair { lambda_min, u: u.scale(1.0 / un), symmetry_residual: resid })
}

#[derive(Clone, Debug)]
pub enum Eigenstep {
    Step { step: ModelStep, lambda_min: f64 },
    CertifiedBound { lambda_min: f64 },
}

/// Either certifies `λ_min(H) ≥ −ε_H` or returns `η = Δu` along the leftmost
/// unit eigenvector, oriented so that `⟨u, g⟩ ≤ 0`.
pub fn eigenstep(
    g: &TangentVector,
    h: &ModelOperator,
    basis: &TangentBasis,
    delta: f64,
    eps_h: f64,
) -> Result<Eigenstep> {
    let pair = leftmost_eigenpair(h, basis)?;
    eigenstep_from(&pair, g, h, delta, eps_h)
}

/// Eigenstep from a precomputed leftmost pair.
pub fn eigenstep_from(
    pair: &LeftmostPair,
    g: &TangentVector,
    h: &ModelOperator,
    delta: f64,
    eps_h: f64,
) -> Result<Eigenstep> {
    if pair.lambda_min >= -eps_h {
        return Ok(Eigenstep::CertifiedBound { lambda_min: pair.lambda_min });
    }
    if !(delta > 0.0) {
        return Err(Error::contract("trust-region radius must be positive"));
    }
    let u = if pair.u.dot(g) > 0.0 { pair.u.scale(-1.0) } else { pair.u.clone() };
    let eta = u.scale(delta);
    let half = h.half_quad(&eta)?;
    let g_dot_eta = g.dot(&eta);
    Ok(Eigenstep::Step {
        step: ModelStep {
            model_decrease: -g_dot_eta - half,
            g_dot_eta,
            eta_h_eta: 2.0 * half,
            curvature: (2.0 * half).abs() / (delta * delta),
            inner_iters: 0,
            stop: InnerStop::Boundary,
            eta,
        },
        lambda_min: pair.lambda_min,
    })
}

/// `(f(x) − f(R_x(η))) / model_decrease`.
pub fn rho(p: &Problem, x: &Point, eta: &TangentVector, model_decrease: f64) -> Result<f64> {
    if !(model_decrease > 0.0) {
        return Err(Error::contract(format!(
            "internal invariant violated: nonpositive model decrease {model_decrease:e}"
        )));
    }
    let fx = p.cost(x);
    let fy = p.pullback_eval(x, eta)?;
    Ok((fx - fy) / model_decrease)
}

/// Threshold below which both the actual and predicted decrease are treated
/// as rounding noise.
pub fn rho_guard_threshold(f: f64) -> f64 {
    1e3 * f64::EPSILON * (1.0 + f.abs())
}

/// Radius after a step with ratio `rho`, norm `stepnorm` and radius `delta`.
pub fn next_radius(rho: f64, stepnorm: f64, delta: f64, delta_bar: f64) -> f64 {
    if rho < 0.25 {
        delta / 4.0
    } else if rho > 0.75 && stepnorm >= (1.0 - BOUNDARY_RTOL) * delta {
        (2.0 * delta).min(delta_bar)
    } else {
        delta
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepType {
    FirstOrder,
    SecondOrder,
    /// Closing record describing the returned point.
    Terminal,
}

impl StepType {
    fn as_str(&self) -> &'static str {
        match self {
            StepType::FirstOrder => "first_order",
            StepType::SecondOrder => "second_order",
            StepType::Terminal => "terminal",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RtrStatus {
    FirstOrderMet,
    SecondOrderMet,
    IterCap,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepEvals {
    pub cost: u64,
    pub grad: u64,
    pub hess: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RtrRecord {
    pub k: usize,
    pub f: f64,
    pub gradnorm: f64,
    pub delta: f64,
    pub steptype: StepType,
    pub stepnorm: f64,
    pub modeldec: f64,
    pub rho: f64,
    pub accepted: bool,
    pub lambdamin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_trial: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_dot_eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_h_eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evals: Option<StepEvals>,
}

impl RtrRecord {
    pub fn is_step(&self) -> bool {
        self.steptype != StepType::Terminal
    }

    pub fn on_boundary(&self) -> bool {
        self.stepnorm >= (1.0 - BOUNDARY_RTOL) * self.delta
    }
}

/// Terminal optimality statement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub status: RtrStatus,
    pub grad_norm: f64,
    pub eps_g: f64,
    pub eps_h: Option<f64>,
    /// `λ_min` of the model Hessian at the returned point, when computed.
    pub hess_lambda_min: Option<f64>,
    pub symmetry_residual: Option<f64>,
    /// 2 for a second-order retraction, 1 otherwise.
    pub retraction_order: u8,
    /// `ε_H + a·ε_g + δ` with `a = δ = 0`; the Riemannian Hessian is bounded
    /// below by minus this value.
    pub diagnostic_bound: Option<f64>,
}

impl Certificate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `ε_H + a·ε_g + δ`: lower bound (negated) on the Riemannian Hessian when a
/// retraction with acceleration bound `a` was used.
pub fn hessian_gap_diagnostic(cert: &Certificate, a: f64, eps_g: f64, delta: f64) -> Result<f64> {
    if !(a >= 0.0 && delta >= 0.0) {
        return Err(Error::contract("acceleration bound and δ must be nonnegative"));
    }
    Ok(cert.eps_h.unwrap_or(f64::INFINITY) + a * eps_g + delta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RtrTrace {
    pub schema: String,
    pub config: RtrConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fstar: Option<FStar>,
    pub initial_evals: StepEvals,
    pub records: Vec<RtrRecord>,
    pub status: Option<RtrStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<Certificate>,
}

impl RtrTrace {
    pub fn new(cfg: &RtrConfig) -> Self {
        RtrTrace {
            schema: RTR_SCHEMA.into(),
            config: cfg.clone(),
            problem: None,
            fstar: None,
            initial_evals: StepEvals::default(),
            records: Vec::new(),
            status: None,
            certificate: None,
        }
    }

    pub fn steps(&self) -> impl Iterator<Item = &RtrRecord> {
        self.records.iter().filter(|r| r.is_step())
    }

    /// Number of outer iterations that produced a trial step.
    pub fn iterations(&self) -> usize {
        self.steps().count()
    }

    pub fn accepted(&self) -> usize {
        self.steps().filter(|r| r.accepted).count()
    }

    pub fn f0(&self) -> Option<f64> {
        self.records.first().map(|r| r.f)
    }

    pub fn total_evals(&self) -> StepEvals {
        self.records.iter().filter_map(|r| r.evals).fold(self.initial_evals, |a, e| StepEvals {
            cost: a.cost + e.cost,
            grad: a.grad + e.grad,
            hess: a.hess + e.hess,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        match v.get("schema").and_then(|s| s.as_str()) {
            Some(RTR_SCHEMA) => Ok(serde_json::from_value(v)?),
            Some(other) => Err(Error::Format(format!("expected schema {RTR_SCHEMA}, found {other}"))),
            None => Err(Error::Format("trace has no schema tag".into())),
        }
    }

    pub fn to_csv(&self) -> String {
        records_to_csv(&self.records)
    }
}

pub fn records_to_csv(records: &[RtrRecord]) -> String {
    let mut out = RTR_CSV_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        let lm = r.lambdamin.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.k,
            r.f,
            r.gradnorm,
            r.delta,
            r.steptype.as_str(),
            r.stepnorm,
            r.modeldec,
            r.rho,
            r.accepted,
            lm
        ));
    }
    out
}

/// Parse the CSV form. The JSON-only fields come back as `None`.
pub fn records_from_csv(text: &str) -> Result<Vec<RtrRecord>> {
    let mut lines = text.lines().enumerate();
    csv_header_check(lines.next(), &RTR_CSV_COLUMNS)?;
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != RTR_CSV_COLUMNS.len() {
            return Err(Error::Parse { line: i + 1, msg: format!("expected {} fields", RTR_CSV_COLUMNS.len()) });
        }
        let steptype = match f[4].trim() {
            "first_order" => StepType::FirstOrder,
            "second_order" => StepType::SecondOrder,
            "terminal" => StepType::Terminal,
            other => return Err(Error::Parse { line: i + 1, msg: format!("unknown step type {other:?}") }),
        };
        let lambdamin = match f[9].trim() {
            "" => None,
            s => Some(parse_field(s, i)?),
        };
        out.push(RtrRecord {
            k: parse_field(f[0], i)?,
            f: parse_field(f[1], i)?,
            gradnorm: parse_field(f[2], i)?,
            delta: parse_field(f[3], i)?,
            steptype,
            stepnorm: parse_field(f[5], i)?,
            modeldec: parse_field(f[6], i)?,
            rho: parse_field(f[7], i)?,
            accepted: parse_field(f[8], i)?,
            lambdamin,
            f_trial: None,
            g_dot_eta: None,
            eta_h_eta: None,
            curvature: None,
            guard: None,
            inner_iters: None,
            evals: None,
        });
    }
    Ok(out)
}

/// Result of a successful trust-region run.
#[derive(Clone, Debug)]
pub struct RtrOutput {
    pub x: Point,
    pub certificate: Certificate,
    pub trace: RtrTrace,
}

#[derive(Default)]
struct Counter {
    cost: Cell<u64>,
    grad: Cell<u64>,
    hess: Cell<u64>,
}

impl Counter {
    fn take(&self) -> StepEvals {
        StepEvals { cost: self.cost.replace(0), grad: self.grad.replace(0), hess: self.hess.replace(0) }
    }

    fn bump(c: &Cell<u64>) {
        c.set(c.get() + 1);
    }
}

fn exact_operator<'a>(p: &'a Problem, x: &Point, egrad: &'a [f64], counter: &'a Counter) -> ModelOperator<'a> {
    let xb = x.clone();
    ModelOperator::new(x, OperatorKind::LinearSymmetric, move |v: &TangentVector| {
        Counter::bump(&counter.hess);
        p.riemannian_hess_vec_with_grad(&xb, egrad, v)
    })
}

/// `H[η] = (‖η‖/h)·(Proj_x grad f(R_x(hη/‖η‖)) − grad f(x))`.
fn fd_operator<'a>(p: &'a Problem, x: &Point, g: &'a TangentVector, h: f64, counter: &'a Counter) -> ModelOperator<'a> {
    let xb = x.clone();
    ModelOperator::new(x, OperatorKind::RadiallyLinear, move |v: &TangentVector| {
        let nv = v.norm();
        if nv == 0.0 {
            return Ok(TangentVector::zero(&xb));
        }
        let m = xb.manifold();
        let y = m.retract_unchecked(&xb, &crate::linalg::scaled(h / nv, v.coords()));
        Counter::bump(&counter.grad);
        let (_, gy) = p.grad_parts(&y)?;
        let mut out = m.project_unchecked(&xb, gy.coords()).into_coords();
        axpy(-1.0, g.coords(), &mut out);
        for o in out.iter_mut() {
            *o *= nv / h;
        }
        Ok(TangentVector::from_parts(&xb, out))
    })
}

type RtrOutcome = std::result::Result<RtrOutput, SolveFailure<RtrTrace>>;

/// Run the trust-region method from `x0`.
pub fn rtr_solve(p: &Problem, x0: &Point, cfg: &RtrConfig) -> RtrOutcome {
    let mut trace = RtrTrace::new(cfg);
    macro_rules! bail {
        ($e:expr) => {
            return Err(SolveFailure { error: $e, trace })
        };
    }
    if let Err(e) = cfg.validate() {
        bail!(e);
    }
    if x0.manifold() != p.manifold() {
        bail!(Error::contract("x0 does not belong to the problem's manifold"));
    }
    if let Err(e) = x0.check_feasible() {
        bail!(e);
    }
    let needs_hessian = cfg.eps_h.is_some() || cfg.first_order_model() == HessianModel::Exact;
    if needs_hessian && !p.has_hessian() {
        bail!(Error::Capability("the chosen Hessian model needs a Hessian callback".into()));
    }
    if cfg.eps_h.is_some() && !p.manifold().has_second_order_retraction() {
        bail!(Error::Capability("second-order mode needs a second-order retraction".into()));
    }

    let counter = Counter::default();
    let manifold = p.manifold();
    let mut x = x0.clone();
    Counter::bump(&counter.cost);
    let mut fx = p.cost(&x);
    Counter::bump(&counter.grad);
    let (mut egrad, mut g) = match p.grad_parts(&x) {
        Ok(v) => v,
        Err(e) => bail!(e),
    };
    if !fx.is_finite() {
        bail!(Error::numerical("non-finite cost at x0"));
    }
    trace.initial_evals = counter.take();
    let mut delta = cfg.delta0;
    let mut cached: Option<LeftmostPair> = None;
    let mut k = 0usize;

    let certificate = |status, gn: f64, lm: Option<&LeftmostPair>| Certificate {
        status,
        grad_norm: gn,
        eps_g: cfg.eps_g,
        eps_h: cfg.eps_h,
        hess_lambda_min: lm.map(|l| l.lambda_min),
        symmetry_residual: lm.map(|l| l.symmetry_residual),
        retraction_order: if manifold.has_second_order_retraction() { 2 } else { 1 },
        diagnostic_bound: cfg.eps_h,
    };

    loop {
        let gn = g.norm();
        let terminal = RtrRecord {
            k,
            f: fx,
            gradnorm: gn,
            delta,
            steptype: StepType::Terminal,
            stepnorm: 0.0,
            modeldec: 0.0,
            rho: 0.0,
            accepted: false,
            lambdamin: None,
            f_trial: None,
            g_dot_eta: None,
            eta_h_eta: None,
            curvature: None,
            guard: None,
            inner_iters: None,
            evals: None,
        };
        let finish = |mut trace: RtrTrace, mut terminal: RtrRecord, status, lm: Option<&LeftmostPair>, x: Point| {
            terminal.lambdamin = lm.map(|l| l.lambda_min);
            terminal.evals = Some(counter.take());
            trace.records.push(terminal);
            trace.status = Some(status);
            let cert = certificate(status, gn, lm);
            trace.certificate = Some(cert.clone());
            Ok(RtrOutput { x, certificate: cert, trace })
        };
        if k >= cfg.max_iters {
            return finish(trace, terminal, RtrStatus::IterCap, None, x);
        }

        let (steptype, step, lambdamin) = if gn > cfg.eps_g {
            let op = match cfg.first_order_model() {
                HessianModel::FiniteDifference => fd_operator(p, &x, &g, cfg.fd_step, &counter),
                _ => exact_operator(p, &x, &egrad, &counter),
            };
            let s = match cfg.inner {
                InnerSolver::Cauchy => cauchy_step(&g, &op, delta),
                InnerSolver::TruncatedCg => truncated_cg(&g, &op, delta, cfg),
            };
            match s {
                Ok(s) => (StepType::FirstOrder, s, None),
                Err(e) => bail!(e),
            }
        } else if let Some(eps_h) = cfg.eps_h {
            let op = exact_operator(p, &x, &egrad, &counter);
            if cached.is_none() {
                let pair = manifold.tangent_basis(&x).and_then(|b| leftmost_eigenpair(&op, &b));
                match pair {
                    Ok(pair) => cached = Some(pair),
                    Err(e) => bail!(e),
                }
            }
            let pair = cached.as_ref().expect("cached above");
            match eigenstep_from(pair, &g, &op, delta, eps_h) {
                Ok(Eigenstep::CertifiedBound { .. }) => {
                    drop(op);
                    let pair = cached.take();
                    return finish(trace, terminal, RtrStatus::SecondOrderMet, pair.as_ref(), x);
                }
                Ok(Eigenstep::Step { step, lambda_min }) => (StepType::SecondOrder, step, Some(lambda_min)),
                Err(e) => bail!(e),
            }
        } else {
            return finish(trace, terminal, RtrStatus::FirstOrderMet, None, x);
        };

        let y = manifold.retract_unchecked(&x, step.eta.coords());
        Counter::bump(&counter.cost);
        let f_trial = p.cost(&y);
        if !f_trial.is_finite() {
            trace.records.push(terminal);
            bail!(Error::numerical(format!("non-finite cost at trial point (k = {k})")));
        }
        if !(step.model_decrease > 0.0) {
            bail!(Error::numerical(format!(
                "internal invariant violated: nonpositive model decrease {:e} at k = {k}",
                step.model_decrease
            )));
        }
        let num = fx - f_trial;
        let den = step.model_decrease;
        let r = num / den;
        let thr = rho_guard_threshold(fx);
        let guard = num.abs() < thr && den < thr;
        let stepnorm = step.eta.norm();
        let (accepted, delta_next) = if guard {
            (true, delta)
        } else {
            (r > cfg.rho_prime, next_radius(r, stepnorm, delta, cfg.delta_bar))
        };
        let mut rec = RtrRecord {
            steptype,
            stepnorm,
            modeldec: den,
            rho: r,
            accepted,
            lambdamin,
            f_trial: Some(f_trial),
            g_dot_eta: Some(step.g_dot_eta),
            eta_h_eta: Some(step.eta_h_eta),
            curvature: Some(step.curvature),
            guard: Some(guard),
            inner_iters: Some(step.inner_iters),
            ..terminal
        };
        if accepted {
            x = y;
            fx = f_trial;
            cached = None;
            Counter::bump(&counter.grad);
            match p.grad_parts(&x) {
                Ok((eg, gg)) => {
                    egrad = eg;
                    g = gg;
                }
                Err(e) => {
                    rec.evals = Some(counter.take());
                    trace.records.push(rec);
                    bail!(e);
                }
            }
        }
        rec.evals = Some(counter.take());
        trace.records.push(rec);
        delta = delta_next;
        k += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigenvalues;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eucl_point(n: usize) -> Point {
        Manifold::euclidean(n).point(vec![0.0; n]).unwrap()
    }

    fn tv(x: &Point, v: Vec<f64>) -> TangentVector {
        x.manifold().tangent(x, v).unwrap()
    }

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    #[test]
    fn cauchy_examples() {
        let x = eucl_point(2);
        let id = ModelOperator::from_matrix(&x, DMatrix::identity(2, 2)).unwrap();
        let s = cauchy_step(&tv(&x, vec![1.0, 0.0]), &id, 10.0).unwrap();
        assert_eq!(s.eta.coords(), &[-1.0, 0.0]);
        assert_eq!(s.model_decrease, 0.5);

        let neg = ModelOperator::from_matrix(&x, -DMatrix::identity(2, 2)).unwrap();
        let s = cauchy_step(&tv(&x, vec![1.0, 0.0]), &neg, 2.0).unwrap();
        assert_eq!(s.eta.coords(), &[-2.0, 0.0]);

        assert!(matches!(cauchy_step(&TangentVector::zero(&x), &id, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn eigenstep_examples() {
        let x = eucl_point(2);
        let basis = x.manifold().tangent_basis(&x).unwrap();
        let id = ModelOperator::from_matrix(&x, DMatrix::identity(2, 2)).unwrap();
        let g = tv(&x, vec![0.3, -0.1]);
        assert!(matches!(
            eigenstep(&g, &id, &basis, 1.0, 1e-3).unwrap(),
            Eigenstep::CertifiedBound { lambda_min } if (lambda_min - 1.0).abs() < 1e-14
        ));

        let h = ModelOperator::from_matrix(&x, diag(&[1.0, -2.0])).unwrap();
        match eigenstep(&TangentVector::zero(&x), &h, &basis, 3.0, 1.0).unwrap() {
            Eigenstep::Step { step, lambda_min } => {
                assert!((lambda_min + 2.0).abs() < 1e-14);
                assert!(step.eta.coords()[0].abs() < 1e-14);
                assert!((step.eta.coords()[1].abs() - 3.0).abs() < 1e-14);
                assert!((step.model_decrease - 9.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }

        // Sign rule: ⟨u, g⟩ ≤ 0, and flipping g flips u.
        let g = tv(&x, vec![0.0, 0.5]);
        let s1 = match eigenstep(&g, &h, &basis, 1.0, 1.0).unwrap() {
            Eigenstep::Step { step, .. } => step.eta,
            _ => unreachable!(),
        };
        let s2 = match eigenstep(&g.scale(-1.0), &h, &basis, 1.0, 1.0).unwrap() {
            Eigenstep::Step { step, .. } => step.eta,
            _ => unreachable!(),
        };
        assert!(s1.dot(&g) <= 0.0);
        assert_eq!(s1.coords()[1], -s2.coords()[1]);
    }

    #[test]
    fn eigenstep_rejects_asymmetric_operator() {
        let x = eucl_point(2);
        let basis = x.manifold().tangent_basis(&x).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let h = ModelOperator::from_matrix(&x, m).unwrap();
        assert!(matches!(eigenstep(&TangentVector::zero(&x), &h, &basis, 1.0, 0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn tcg_solves_identity_in_one_step() {
        let x = eucl_point(3);
        let id = ModelOperator::from_matrix(&x, DMatrix::identity(3, 3)).unwrap();
        let g = tv(&x, vec![0.2, -0.1, 0.3]);
        let s = truncated_cg(&g, &id, 10.0, &RtrConfig::default()).unwrap();
        for (a, b) in s.eta.coords().iter().zip(g.coords()) {
            assert!((a + b).abs() < 1e-15);
        }
        assert!((s.model_decrease - 0.5 * g.dot(&g)).abs() < 1e-15);
        assert_eq!(s.inner_iters, 1);
    }

    #[test]
    fn tcg_hits_boundary_under_negative_curvature() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = eucl_point(6);
        for _ in 0..50 {
            let mut m = DMatrix::from_fn(6, 6, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
            m = (&m + m.transpose()) * 0.5;
            if sym_eigenvalues(&m)[0] >= 0.0 {
                continue;
            }
            let h = ModelOperator::from_matrix(&x, m).unwrap();
            let g = tv(&x, (0..6).map(|_| rng.random::<f64>() - 0.5).collect());
            let delta = 0.1 + rng.random::<f64>();
            let cfg = RtrConfig { max_inner_iters: Some(50), ..RtrConfig::default() };
            let s = truncated_cg(&g, &h, delta, &cfg).unwrap();
            assert!((s.eta.norm() - delta).abs() < 1e-12 * delta, "{} vs {delta}", s.eta.norm());
        }
    }

    /// Closed-form decrease of the best step along `−g` on `[0, Δ/‖g‖]`.
    fn line_oracle(gg: f64, ghg: f64, amax: f64) -> f64 {
        let m = |a: f64| a * gg - 0.5 * a * a * ghg;
        let mut best = m(amax).max(0.0);
        if ghg > 0.0 {
            let a = gg / ghg;
            if a <= amax {
                best = best.max(m(a));
            }
        }
        best
    }

    #[test]
    fn cauchy_and_tcg_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 5;
        let x = eucl_point(n);
        for _ in 0..500 {
            let mut m = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
            m = (&m + m.transpose()) * 0.5;
            let c0 = sym_eigenvalues(&m).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let h = ModelOperator::from_matrix(&x, m.clone()).unwrap();
            let g = tv(&x, (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect());
            let delta = 10f64.powf(rng.random::<f64>() * 3.0 - 2.0);
            let gn = g.norm();
            let c = cauchy_step(&g, &h, delta).unwrap();
            let gv = DVector::from_column_slice(g.coords());
            let ghg = gv.dot(&(&m * &gv));
            let oracle = line_oracle(gn * gn, ghg, delta / gn);
            assert!((c.model_decrease - oracle).abs() <= 1e-12 * (1.0 + oracle));
            assert!(c.model_decrease >= 0.5 * delta.min(gn / c0) * gn * (1.0 - 1e-12));
            assert!(c.eta.norm() <= delta * (1.0 + 1e-12));
            let t = truncated_cg(&g, &h, delta, &RtrConfig::default()).unwrap();
            assert!(t.model_decrease >= c.model_decrease);
            assert!(t.eta.norm() <= delta * (1.0 + 1e-12));
        }
    }

    #[test]
    fn rho_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let p = Problem::quadratic(Manifold::euclidean(2), a, vec![0.3, -0.2]).unwrap();
        let x = p.manifold().point(vec![1.0, -1.0]).unwrap();
        let (eg, g) = p.grad_parts(&x).unwrap();
        let counter = Counter::default();
        let op = exact_operator(&p, &x, &eg, &counter);
        let eta = tv(&x, vec![-0.4, 0.25]);
        let heta = op.apply(&eta).unwrap();
        let dec = -g.dot(&eta) - 0.5 * eta.dot(&heta);
        assert!((rho(&p, &x, &eta, dec).unwrap() - 1.0).abs() < 1e-12);
        assert!(rho(&p, &x, &eta, 0.0).is_err());
        let lin = Problem::new(Manifold::euclidean(1), |x| 1.0 - 0.6 * x[0], |_| vec![-0.6]);
        let x = lin.manifold().point(vec![0.0]).unwrap();
        let eta = tv(&x, vec![1.0]);
        assert!((rho(&lin, &x, &eta, 0.8).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn radius_schedule_branches() {
        assert_eq!(next_radius(0.1, 1.0, 1.0, 4.0), 0.25);
        assert_eq!(next_radius(0.9, 1.0, 1.0, 4.0), 2.0);
        assert_eq!(next_radius(0.9, 1.0, 3.0, 4.0), 3.0);
        assert_eq!(next_radius(0.9, 3.0, 3.0, 4.0), 4.0);
        assert_eq!(next_radius(0.5, 1.0, 1.0, 4.0), 1.0);
        assert_eq!(next_radius(0.25, 1.0, 1.0, 4.0), 1.0);
    }

    #[test]
    fn diagnostic_examples() {
        let cert = Certificate {
            status: RtrStatus::SecondOrderMet,
            grad_norm: 0.0,
            eps_g: 1e-6,
            eps_h: Some(1e-4),
            hess_lambda_min: Some(0.0),
            symmetry_residual: Some(0.0),
            retraction_order: 2,
            diagnostic_bound: Some(1e-4),
        };
        assert_eq!(hessian_gap_diagnostic(&cert, 0.0, 1e-6, 0.0).unwrap(), 1e-4);
        assert!((hessian_gap_diagnostic(&cert, 2.0, 1e-6, 0.0).unwrap() - 1.02e-4).abs() < 1e-18);
        let base = hessian_gap_diagnostic(&cert, 1.0, 1e-3, 1e-5).unwrap();
        assert!(hessian_gap_diagnostic(&cert, 1.5, 1e-3, 1e-5).unwrap() > base);
        assert!(hessian_gap_diagnostic(&cert, 1.0, 2e-3, 1e-5).unwrap() > base);
        assert!(hessian_gap_diagnostic(&cert, 1.0, 1e-3, 2e-5).unwrap() > base);
        assert!(hessian_gap_diagnostic(&cert, -1.0, 1e-3, 0.0).is_err());
    }

    fn random_sym(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        (&b + b.transpose()) * 0.5
    }

    #[test]
    fn immediate_return_at_minimizer() {
        let p = Problem::rayleigh(diag(&[1.0, 2.0, 3.0])).unwrap();
        let x0 = p.manifold().point(vec![1.0, 0.0, 0.0]).unwrap();
        let cfg = RtrConfig { eps_h: Some(1e-4), ..RtrConfig::for_manifold(p.manifold()) };
        let out = rtr_solve(&p, &x0, &cfg).unwrap();
        assert_eq!(out.trace.status, Some(RtrStatus::SecondOrderMet));
        assert_eq!(out.trace.accepted(), 0);
        assert!((out.certificate.hess_lambda_min.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rayleigh_converges_to_leftmost_eigenvector() {
        let a = random_sym(30, 8);
        let lmin = sym_eigenvalues(&a)[0];
        let p = Problem::rayleigh(a.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = p.manifold().random_point(&mut rng);
        let cfg = RtrConfig { eps_g: 1e-6, eps_h: Some(1e-4), ..RtrConfig::for_manifold(p.manifold()) };
        let out = rtr_solve(&p, &x0, &cfg).unwrap();
        assert_eq!(out.certificate.status, RtrStatus::SecondOrderMet);
        let xv = DVector::from_column_slice(out.x.coords());
        assert!(xv.dot(&(&a * &xv)) - lmin < 1e-8);
        let steps: Vec<_> = out.trace.steps().collect();
        for w in out.trace.records.windows(2) {
            assert!(w[1].f <= w[0].f);
        }
        assert!(steps.iter().all(|r| r.accepted == (r.rho > cfg.rho_prime) || r.guard == Some(true)));
    }

    #[test]
    fn saddle_escape_starts_with_an_eigenstep() {
        let a = diag(&[-1.0, 0.5, 2.0, 3.0]);
        let p = Problem::rayleigh(a).unwrap();
        let x0 = p.manifold().point(vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let cfg = RtrConfig { eps_g: 1e-8, eps_h: Some(1e-4), ..RtrConfig::for_manifold(p.manifold()) };
        let out = rtr_solve(&p, &x0, &cfg).unwrap();
        let first = &out.trace.records[0];
        assert_eq!(first.steptype, StepType::SecondOrder);
        assert!((first.lambdamin.unwrap() + 3.0).abs() < 1e-12);
        assert!(out.trace.records[1].f < first.f);
        let xv: f64 = out.x.coords()[0];
        assert!((xv.abs() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn first_order_mode_never_calls_the_hessian() {
        let p = Problem::rayleigh(random_sym(15, 4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x0 = p.manifold().random_point(&mut rng);
        let before = p.eval_counts();
        let cfg = RtrConfig { eps_g: 1e-6, ..RtrConfig::for_manifold(p.manifold()) };
        let out = rtr_solve(&p, &x0, &cfg).unwrap();
        let d = p.eval_counts() - before;
        assert_eq!(out.certificate.status, RtrStatus::FirstOrderMet);
        assert!(out.certificate.grad_norm <= 1e-6);
        assert_eq!(d.hess, 0);
        let tot = out.trace.total_evals();
        assert_eq!((tot.cost, tot.grad, tot.hess), (d.cost, d.grad, d.hess));
    }

    #[test]
    fn fd_model_tracks_exact_hessian() {
        let p = Problem::rayleigh(random_sym(8, 6)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = p.manifold().random_point(&mut rng);
        let (eg, g) = p.grad_parts(&x).unwrap();
        let c = Counter::default();
        let fd = fd_operator(&p, &x, &g, 2f64.powi(-14), &c);
        let ex = exact_operator(&p, &x, &eg, &c);
        let u = p.manifold().random_unit_tangent(&x, &mut rng);
        let a = fd.apply(&u.scale(3.0)).unwrap();
        let b = ex.apply(&u.scale(3.0)).unwrap();
        let diff: f64 = a.coords().iter().zip(b.coords()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(diff < 1e-3 * (1.0 + b.norm()), "{diff}");
        // radial linearity
        let a2 = fd.apply(&u.scale(6.0)).unwrap();
        for (p2, p1) in a2.coords().iter().zip(a.coords()) {
            assert!((p2 - 2.0 * p1).abs() < 1e-10 * (1.0 + p1.abs()));
        }
    }

    #[test]
    fn missing_hessian_in_second_order_mode() {
        let p = Problem::rayleigh(diag(&[1.0, 2.0])).unwrap().without_hessian();
        let x0 = p.manifold().point(vec![0.6, 0.8]).unwrap();
        let cfg = RtrConfig { eps_h: Some(1e-3), ..RtrConfig::default() };
        assert!(matches!(rtr_solve(&p, &x0, &cfg).unwrap_err().error, Error::Capability(_)));
        let cfg = RtrConfig { eps_h: None, ..RtrConfig::default() };
        assert!(rtr_solve(&p, &x0, &cfg).is_ok());
    }

    #[test]
    fn config_validation() {
        let ok = RtrConfig::default();
        assert!(ok.validate().is_ok());
        assert!(RtrConfig { rho_prime: 0.25, ..ok.clone() }.validate().is_err());
        assert!(RtrConfig { delta0: 2.0, ..ok.clone() }.validate().is_err());
        assert!(RtrConfig { eps_h: Some(0.0), ..ok.clone() }.validate().is_err());
    }

    #[test]
    fn trace_round_trips() {
        let p = Problem::rayleigh(random_sym(10, 9)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = p.manifold().random_point(&mut rng);
        let cfg = RtrConfig { eps_h: Some(1e-4), ..RtrConfig::for_manifold(p.manifold()) };
        let out = rtr_solve(&p, &x0, &cfg).unwrap();
        let tr = out.trace;
        assert_eq!(RtrTrace::from_json(&tr.to_json().unwrap()).unwrap(), tr);
        let stripped: Vec<RtrRecord> = tr
            .records
            .iter()
            .cloned()
            .map(|r| RtrRecord {
                f_trial: None,
                g_dot_eta: None,
                eta_h_eta: None,
                curvature: None,
                guard: None,
                inner_iters: None,
                evals: None,
                ..r
            })
            .collect();
        assert_eq!(records_from_csv(&tr.to_csv()).unwrap(), stripped);
        assert!(matches!(RtrTrace::from_json("{\"schema\":\"gdtrace-v1\"}"), Err(Error::Format(_))));
    }
}
