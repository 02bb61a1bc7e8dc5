//! Worst-case bounds checked against realized solver traces.
//!
//! Every entry lists the constants it used and where they came from. Entries
//! built on estimated constants are warnings when they fail; entries whose
//! constants are all user-supplied or exact are errors.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gd::{armijo_eval_bound, GdConfig, GdMode, GdStatus, GdTrace, GD_CSV_COLUMNS, GD_SCHEMA};
use crate::rtr::{
    next_radius, rho_guard_threshold, HessianModel, RtrConfig, RtrRecord, RtrStatus, RtrTrace, StepType,
    RTR_CSV_COLUMNS, RTR_SCHEMA,
};
use crate::trace::{FStar, Provenance};

pub const REPORT_SCHEMA: &str = "boundreport-v1";

/// Relative slack on ledger inequalities evaluated in floating point.
pub const LEDGER_RTOL: f64 = 1e-12;

/// Fraction of the model decrease an RTR step's Cauchy guarantee provides.
const C2: f64 = 0.5;
/// Same for eigensteps.
const C3: f64 = 0.5;
/// Curvature mismatch of the second-order model (exact Hessian).
const C1: f64 = 0.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `realized ≤ bound`
    Le,
    /// `realized ≥ bound`
    Ge,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Constant {
    pub name: String,
    pub value: f64,
    pub provenance: Provenance,
}

fn konst(name: &str, value: f64, provenance: Provenance) -> Constant {
    Constant { name: name.into(), value, provenance }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundEntry {
    pub name: String,
    pub realized: f64,
    pub relation: Relation,
    pub bound: f64,
    pub constants: Vec<Constant>,
    /// False when a precondition fails or required data is missing; such
    /// entries never fail the report.
    pub applicable: bool,
    pub pass: bool,
    pub severity: Severity,
    pub detail: String,
}

impl BoundEntry {
    fn new(name: &str, realized: f64, relation: Relation, bound: f64, constants: Vec<Constant>) -> Self {
        let pass = match relation {
            Relation::Le => realized <= bound,
            Relation::Ge => realized >= bound,
        };
        let severity = if constants.iter().any(|c| c.provenance == Provenance::Estimated) {
            Severity::Warning
        } else {
            Severity::Error
        };
        BoundEntry {
            name: name.into(),
            realized,
            relation,
            bound,
            constants,
            applicable: true,
            pass,
            severity,
            detail: String::new(),
        }
    }

    /// A record-by-record check: realized is the violation count.
    fn ledger(name: &str, checked: usize, violations: &[usize], constants: Vec<Constant>) -> Self {
        let mut e = BoundEntry::new(name, violations.len() as f64, Relation::Le, 0.0, constants);
        e.detail = match violations.first() {
            None => format!("{checked} records checked"),
            Some(k) => format!("{} of {checked} records violate; first at k = {k}", violations.len()),
        };
        e
    }

    fn unavailable(name: &str, why: &str, constants: Vec<Constant>) -> Self {
        let mut e = BoundEntry::new(name, f64::NAN, Relation::Le, f64::NAN, constants);
        e.applicable = false;
        e.pass = true;
        e.detail = why.into();
        e
    }

    fn with_detail(mut self, d: impl Into<String>) -> Self {
        self.detail = d.into();
        self
    }

    fn not_applicable(mut self, why: &str) -> Self {
        self.applicable = false;
        self.detail = if self.detail.is_empty() { why.into() } else { format!("{}; {why}", self.detail) };
        self
    }

    pub fn failed(&self) -> bool {
        self.applicable && !self.pass
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub schema: String,
    pub trace_schema: String,
    pub entries: Vec<BoundEntry>,
}

impl BoundReport {
    fn new(trace_schema: &str) -> Self {
        BoundReport { schema: REPORT_SCHEMA.into(), trace_schema: trace_schema.into(), entries: Vec::new() }
    }

    pub fn entry(&self, name: &str) -> Option<&BoundEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn errors(&self) -> impl Iterator<Item = &BoundEntry> {
        self.entries.iter().filter(|e| e.failed() && e.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &BoundEntry> {
        self.entries.iter().filter(|e| e.failed() && e.severity == Severity::Warning)
    }

    /// True when no error-severity entry failed.
    pub fn passed(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One line per entry.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let tag = match (e.applicable, e.pass, e.severity) {
                (false, _, _) => "SKIP",
                (true, true, _) => "PASS",
                (true, false, Severity::Error) => "FAIL",
                (true, false, Severity::Warning) => "WARN",
            };
            let rel = match e.relation {
                Relation::Le => "<=",
                Relation::Ge => ">=",
            };
            let consts: Vec<String> =
                e.constants.iter().map(|c| format!("{}={:e} ({})", c.name, c.value, c.provenance)).collect();
            out.push_str(&format!(
                "{tag} {}: {} {rel} {} [{}] {}\n",
                e.name,
                e.realized,
                e.bound,
                consts.join(", "),
                e.detail
            ));
        }
        out
    }
}

/// Constants supplied from outside the trace.
#[derive(Clone, Debug, Default)]
pub struct VerifyOptions {
    /// Overrides the `f*` stored in the trace.
    pub fstar: Option<FStar>,
    /// Overrides the Lipschitz constant read from the trace.
    pub lipschitz: Option<(f64, Provenance)>,
}

fn fstar_of(stored: Option<FStar>, opts: &VerifyOptions) -> Option<FStar> {
    opts.fstar.or(stored)
}

fn fstar_const(fs: FStar) -> Constant {
    konst("f*", fs.value, fs.provenance)
}

fn slack(f: f64) -> f64 {
    8.0 * f64::EPSILON * (1.0 + f.abs())
}

/// `⌈(f0 − f*)/c · 1/ε²⌉`, the iteration bound shared by both step rules.
pub fn descent_iteration_bound(f0: f64, fstar: f64, c: f64, eps: f64) -> f64 {
    ((f0 - fstar) / c / (eps * eps)).ceil()
}

// ---------------------------------------------------------------- gradient descent

pub fn verify_gd(trace: &GdTrace, opts: &VerifyOptions) -> Result<BoundReport> {
    if trace.schema != GD_SCHEMA {
        return Err(Error::Format(format!("expected schema {GD_SCHEMA}, found {}", trace.schema)));
    }
    let cfg = &trace.config;
    let recs = &trace.records;
    let mut report = BoundReport::new(GD_SCHEMA);
    if recs.is_empty() {
        return Err(Error::Format("trace has no records".into()));
    }
    let steps: Vec<usize> = (0..recs.len().saturating_sub(1)).filter(|&i| recs[i].has_step()).collect();
    let fstar = fstar_of(trace.fstar, opts);
    let user = |n: &str, v: f64| konst(n, v, Provenance::User);

    let lipschitz: Option<Constant> = match (opts.lipschitz, cfg.mode) {
        (Some((v, p)), _) => Some(konst("L", v, p)),
        (None, GdMode::FixedStep) => cfg
            .lipschitz
            .map(|v| konst("L", v, trace.lipschitz_provenance.unwrap_or(Provenance::User))),
        (None, GdMode::Armijo) => {
            let ratios: Vec<f64> = recs.iter().filter_map(|r| r.lipschitz_ratio).collect();
            (!ratios.is_empty()).then(|| konst("L", ratios.iter().copied().fold(0.0, f64::max), Provenance::Estimated))
        }
    };

    // Monotonicity.
    let viol: Vec<usize> = steps.iter().copied().filter(|&i| recs[i + 1].f > recs[i].f).map(|i| recs[i].k).collect();
    let consts = match (cfg.mode, &lipschitz) {
        (GdMode::FixedStep, Some(l)) => vec![l.clone()],
        _ => vec![],
    };
    report.entries.push(BoundEntry::ledger("monotonicity", steps.len(), &viol, consts));

    // Per-step decrease and the constant `c`.
    let c = match (&lipschitz, cfg.mode) {
        (Some(l), GdMode::FixedStep) => Some(1.0 / (2.0 * l.value)),
        (Some(l), GdMode::Armijo) => Some(cfg.c1 * cfg.t_bar.min(2.0 * cfg.tau * (1.0 - cfg.c1) / l.value)),
        (None, _) => None,
    };
    let mut c_consts: Vec<Constant> = lipschitz.iter().cloned().collect();
    if cfg.mode == GdMode::Armijo {
        c_consts.extend([user("c1", cfg.c1), user("tau", cfg.tau), user("tbar", cfg.t_bar)]);
    }
    match c {
        Some(c) => {
            let viol: Vec<usize> = steps
                .iter()
                .copied()
                .filter(|&i| {
                    let g = recs[i].gradnorm;
                    recs[i].f - recs[i + 1].f < c * g * g - slack(recs[i].f)
                })
                .map(|i| recs[i].k)
                .collect();
            let mut consts = c_consts.clone();
            consts.push(konst("c", c, worst(&c_consts)));
            report.entries.push(BoundEntry::ledger("sufficient decrease f_k - f_k+1 >= c*|g_k|^2", steps.len(), &viol, consts));
        }
        None => report.entries.push(BoundEntry::unavailable(
            "sufficient decrease f_k - f_k+1 >= c*|g_k|^2",
            "no Lipschitz constant available (pass --L or use a JSON trace)",
            vec![],
        )),
    }

    if cfg.mode == GdMode::Armijo {
        // Accepted steps satisfy the Armijo test as evaluated by the solver.
        let viol: Vec<usize> = steps
            .iter()
            .copied()
            .filter(|&i| {
                let r = &recs[i];
                match r.slope {
                    Some(s) => r.f - recs[i + 1].f < cfg.c1 * r.t * s,
                    None => r.f - recs[i + 1].f < cfg.c1 * r.t * r.gradnorm * r.gradnorm - slack(r.f),
                }
            })
            .map(|i| recs[i].k)
            .collect();
        report.entries.push(BoundEntry::ledger(
            "armijo condition on accepted steps",
            steps.len(),
            &viol,
            vec![user("c1", cfg.c1)],
        ));

        match &lipschitz {
            Some(l) => {
                let t_min = cfg.t_bar.min(2.0 * cfg.tau * (1.0 - cfg.c1) / l.value);
                let viol: Vec<usize> =
                    steps.iter().copied().filter(|&i| recs[i].t < t_min).map(|i| recs[i].k).collect();
                let mut consts = c_consts.clone();
                consts.push(konst("t_min", t_min, worst(&c_consts)));
                report.entries.push(BoundEntry::ledger("accepted step t >= min(tbar, 2tau(1-c1)/L)", steps.len(), &viol, consts));

                let bound = armijo_eval_bound(cfg.t_bar, l.value, cfg.c1, cfg.tau);
                let worst_evals = steps.iter().map(|&i| recs[i].costevals).max().unwrap_or(0);
                let mut e = BoundEntry::new(
                    "cost evaluations per iteration",
                    worst_evals as f64,
                    Relation::Le,
                    bound as f64,
                    c_consts.clone(),
                );
                e.detail = format!("max over {} iterations", steps.len());
                report.entries.push(e);
            }
            None => {
                for name in ["accepted step t >= min(tbar, 2tau(1-c1)/L)", "cost evaluations per iteration"] {
                    report.entries.push(BoundEntry::unavailable(
                        name,
                        "no Lipschitz constant available (pass --L or use a JSON trace)",
                        vec![],
                    ));
                }
            }
        }
    }

    // Bookkeeping: one gradient per record, cost evaluations match the backtracks.
    let viol: Vec<usize> = recs
        .iter()
        .enumerate()
        .filter(|(i, r)| {
            let last = *i + 1 == recs.len();
            if last || !r.has_step() {
                r.gradevals != 1 || r.costevals != 0 || r.backtracks != 0
            } else {
                r.gradevals != 1
                    || r.costevals != r.backtracks as u64 + 1
                    || (cfg.mode == GdMode::FixedStep && r.backtracks != 0)
            }
        })
        .map(|(_, r)| r.k)
        .collect();
    report.entries.push(BoundEntry::ledger("evaluation audit", recs.len(), &viol, vec![]));

    // Iteration-count bounds.
    let name = match cfg.mode {
        GdMode::FixedStep => "iterations <= ceil(2(f0-f*)L/eps^2)",
        GdMode::Armijo => "iterations <= ceil((f0-f*)/(c1 min(tbar, 2tau(1-c1)/L)) / eps^2)",
    };
    let f0 = recs[0].f;
    let eps = cfg.eps_g;
    match (fstar, c) {
        (Some(fs), Some(c)) => {
            let first_small = recs.iter().position(|r| r.gradnorm <= eps);
            let realized = first_small.unwrap_or(steps.len());
            let bound = descent_iteration_bound(f0, fs.value, c, eps);
            let mut consts = c_consts.clone();
            consts.push(fstar_const(fs));
            consts.push(user("eps_g", eps));
            let mut e = BoundEntry::new(name, realized as f64, Relation::Le, bound, consts.clone());
            if first_small.is_none() {
                e.detail = format!("tolerance not reached after {} iterations", steps.len());
            }
            if trace.status == Some(GdStatus::IterCapReached) && realized as f64 <= bound {
                e.detail = "iteration cap reached before the tolerance; inconclusive".into();
            }
            report.entries.push(e);

            // Every prefix: min_{k<K} |g_k| <= sqrt((f0 - f*)/(cK)).
            let mut best = f64::INFINITY;
            let mut viol = Vec::new();
            for (kk, &i) in steps.iter().enumerate() {
                best = best.min(recs[i].gradnorm);
                let kcount = (kk + 1) as f64;
                let b = ((f0 - fs.value) / (c * kcount)).sqrt();
                if !(best <= b * (1.0 + LEDGER_RTOL)) {
                    viol.push(recs[i].k);
                }
            }
            report.entries.push(BoundEntry::ledger(
                "prefix min |g_k| <= sqrt((f0-f*)/(cK))",
                steps.len(),
                &viol,
                consts,
            ));
        }
        (None, _) => {
            report.entries.push(BoundEntry::unavailable(name, "no f* supplied", c_consts.clone()));
        }
        (_, None) => {
            report.entries.push(BoundEntry::unavailable(name, "no Lipschitz constant available", vec![]));
        }
    }
    Ok(report)
}

fn worst(consts: &[Constant]) -> Provenance {
    if consts.iter().any(|c| c.provenance == Provenance::Estimated) {
        Provenance::Estimated
    } else if consts.iter().all(|c| c.provenance == Provenance::Oracle) && !consts.is_empty() {
        Provenance::Oracle
    } else {
        Provenance::User
    }
}

// ---------------------------------------------------------------- trust regions

/// Constants measured along an RTR trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RtrConstants {
    /// Largest `|⟨v, H v⟩|/‖v‖²` over the model directions probed.
    pub c0: f64,
    /// Largest `2|f̂(η) − f − ⟨g, η⟩|/‖η‖²` over first-order steps.
    pub l_g: f64,
    /// Largest `6|f̂(η) − f − ⟨g, η⟩ − ½⟨η, Hη⟩|/‖η‖³` over eigensteps.
    pub l_h: f64,
    pub lambda_g: f64,
    pub lambda_h: f64,
}

/// `λ_g = ¼ min(1/c0, c2/(L_g + c0))`, `λ_H = ¾ c3/(L_H + c1)`.
pub fn lambda_constants(c0: f64, l_g: f64, l_h: f64) -> (f64, f64) {
    let inv = |a: f64, b: f64| if b == 0.0 { f64::INFINITY } else { a / b };
    let lambda_g = 0.25 * inv(1.0, c0).min(inv(C2, l_g + c0));
    let lambda_h = 0.75 * inv(C3, l_h + C1);
    (lambda_g, lambda_h)
}

/// A-posteriori constants; `None` when the trace lacks the JSON-only fields.
pub fn rtr_constants(trace: &RtrTrace) -> Option<RtrConstants> {
    let (mut c0, mut l_g, mut l_h) = (0.0f64, 0.0f64, 0.0f64);
    for r in trace.steps() {
        let (ft, gd, ehe, curv) = (r.f_trial?, r.g_dot_eta?, r.eta_h_eta?, r.curvature?);
        let s = r.stepnorm;
        match r.steptype {
            StepType::FirstOrder => {
                c0 = c0.max(curv);
                if s > 0.0 {
                    l_g = l_g.max(2.0 * (ft - r.f - gd).abs() / (s * s));
                }
            }
            StepType::SecondOrder => {
                if s > 0.0 {
                    l_h = l_h.max(6.0 * (ft - r.f - gd - 0.5 * ehe).abs() / (s * s * s));
                }
            }
            StepType::Terminal => {}
        }
    }
    let (lambda_g, lambda_h) = lambda_constants(c0, l_g, l_h);
    Some(RtrConstants { c0, l_g, l_h, lambda_g, lambda_h })
}

/// Guard-flagged step: accepted at rounding level with the radius kept.
fn is_guard(r: &RtrRecord, next: &RtrRecord, cfg: &RtrConfig) -> bool {
    match r.guard {
        Some(g) => g,
        // CSV traces don't carry the flag: an accepted step that kept its
        // radius against the schedule is taken as guarded.
        None => {
            r.accepted
                && next.delta == r.delta
                && (r.rho <= cfg.rho_prime || next_radius(r.rho, r.stepnorm, r.delta, cfg.delta_bar) != r.delta)
        }
    }
}

pub fn verify_rtr(trace: &RtrTrace, opts: &VerifyOptions) -> Result<BoundReport> {
    if trace.schema != RTR_SCHEMA {
        return Err(Error::Format(format!("expected schema {RTR_SCHEMA}, found {}", trace.schema)));
    }
    let cfg = &trace.config;
    let recs = &trace.records;
    if recs.is_empty() {
        return Err(Error::Format("trace has no records".into()));
    }
    let mut report = BoundReport::new(RTR_SCHEMA);
    let user = |n: &str, v: f64| konst(n, v, Provenance::User);
    let nsteps = recs.len() - 1;
    let step_idx: Vec<usize> = (0..nsteps).filter(|&i| recs[i].is_step()).collect();
    let guards: Vec<bool> = (0..nsteps).map(|i| is_guard(&recs[i], &recs[i + 1], cfg)).collect();
    let terminal_ok = recs.last().is_some_and(|r| r.steptype == StepType::Terminal)
        && recs[..nsteps].iter().all(|r| r.is_step());
    if !terminal_ok {
        return Err(Error::Format("trace must hold step records followed by one terminal record".into()));
    }

    // Monotonicity (guard steps may move f at rounding level).
    let viol: Vec<usize> = step_idx
        .iter()
        .copied()
        .filter(|&i| {
            let tol = if guards[i] { rho_guard_threshold(recs[i].f) } else { 0.0 };
            recs[i + 1].f > recs[i].f + tol
        })
        .map(|i| recs[i].k)
        .collect();
    report.entries.push(BoundEntry::ledger("monotonicity", nsteps, &viol, vec![]));

    if recs[..nsteps].iter().all(|r| r.f_trial.is_some()) {
        let viol: Vec<usize> = step_idx
            .iter()
            .copied()
            .filter(|&i| {
                let r = &recs[i];
                let expect = if r.accepted { r.f_trial.expect("checked") } else { r.f };
                recs[i + 1].f != expect
            })
            .map(|i| recs[i].k)
            .collect();
        report.entries.push(BoundEntry::ledger("iterate update matches acceptance", nsteps, &viol, vec![]));
    }

    let viol: Vec<usize> = step_idx
        .iter()
        .copied()
        .filter(|&i| {
            let r = &recs[i];
            let expect = if guards[i] { r.delta } else { next_radius(r.rho, r.stepnorm, r.delta, cfg.delta_bar) };
            recs[i + 1].delta != expect
        })
        .map(|i| recs[i].k)
        .collect();
    report.entries.push(BoundEntry::ledger("radius schedule", nsteps, &viol, vec![user("delta_bar", cfg.delta_bar)]));

    let viol: Vec<usize> = step_idx
        .iter()
        .copied()
        .filter(|&i| {
            let r = &recs[i];
            if guards[i] { !r.accepted } else { r.accepted != (r.rho > cfg.rho_prime) }
        })
        .map(|i| recs[i].k)
        .collect();
    let n_guard = guards.iter().filter(|g| **g).count();
    report.entries.push(
        BoundEntry::ledger("accepted iff rho > rho'", nsteps, &viol, vec![user("rho'", cfg.rho_prime)])
            .with_detail(format!("{nsteps} records checked, {n_guard} rounding-guarded")),
    );

    let viol: Vec<usize> = step_idx
        .iter()
        .copied()
        .filter(|&i| recs[i].stepnorm > recs[i].delta * (1.0 + LEDGER_RTOL))
        .map(|i| recs[i].k)
        .collect();
    report.entries.push(BoundEntry::ledger("step within radius", nsteps, &viol, vec![]));

    // Model decrease, eigensteps.
    if let Some(eps_h) = cfg.eps_h {
        let so: Vec<usize> = step_idx.iter().copied().filter(|&i| recs[i].steptype == StepType::SecondOrder).collect();
        let viol: Vec<usize> = so
            .iter()
            .copied()
            .filter(|&i| {
                let r = &recs[i];
                r.modeldec < C3 * r.delta * r.delta * eps_h * (1.0 - LEDGER_RTOL)
            })
            .map(|i| recs[i].k)
            .collect();
        report.entries.push(BoundEntry::ledger(
            "eigenstep decrease >= c3 delta^2 eps_H",
            so.len(),
            &viol,
            vec![user("c3", C3), user("eps_H", eps_h)],
        ));
    }

    let consts = rtr_constants(trace);
    let eps_g = cfg.eps_g;
    let eps_h = cfg.eps_h;
    let fo: Vec<usize> = step_idx.iter().copied().filter(|&i| recs[i].steptype == StepType::FirstOrder).collect();

    match consts {
        None => {
            for name in [
                "cauchy decrease >= c2 min(delta, eps_g/c0) eps_g",
                "radius floor",
                "successful-step fraction",
                "first-order iteration bound",
            ] {
                report.entries.push(BoundEntry::unavailable(name, "needs the JSON trace fields", vec![]));
            }
        }
        Some(k) => {
            let est = |n: &str, v: f64| konst(n, v, Provenance::Estimated);
            let base_consts = || {
                let mut v = vec![est("c0", k.c0), est("L_g", k.l_g)];
                if eps_h.is_some() {
                    v.push(est("L_H", k.l_h));
                }
                v.push(est("lambda_g", k.lambda_g));
                if eps_h.is_some() {
                    v.push(est("lambda_H", k.lambda_h));
                }
                v.push(user("c2", C2));
                if eps_h.is_some() {
                    v.extend([user("c1", C1), user("c3", C3)]);
                }
                v
            };

            let viol: Vec<usize> = fo
                .iter()
                .copied()
                .filter(|&i| {
                    let r = &recs[i];
                    let reach = if k.c0 > 0.0 { eps_g / k.c0 } else { f64::INFINITY };
                    r.modeldec < C2 * r.delta.min(reach) * eps_g * (1.0 - LEDGER_RTOL)
                })
                .map(|i| recs[i].k)
                .collect();
            report.entries.push(BoundEntry::ledger(
                "cauchy decrease >= c2 min(delta, eps_g/c0) eps_g",
                fo.len(),
                &viol,
                vec![est("c0", k.c0), user("c2", C2), user("eps_g", eps_g)],
            ));

            let fg = k.lambda_g * eps_g;
            let fh = eps_h.map_or(f64::INFINITY, |e| k.lambda_h * e);
            let floor = cfg.delta0.min(fg).min(fh);
            let viol: Vec<usize> =
                recs.iter().filter(|r| r.delta < floor * (1.0 - LEDGER_RTOL)).map(|r| r.k).collect();
            let mut c = base_consts();
            c.push(user("delta0", cfg.delta0));
            c.push(est("floor", floor));
            report.entries.push(
                BoundEntry::ledger("radius floor", recs.len(), &viol, c.clone())
                    .with_detail(format!("min delta = {:e}", recs.iter().map(|r| r.delta).fold(f64::INFINITY, f64::min))),
            );

            // Successful-step fraction over all steps.
            let log_term = |f: f64| if f > 0.0 { (cfg.delta0 / f).log2() } else { f64::INFINITY };
            let lmax = 0f64.max(log_term(fg)).max(if eps_h.is_some() { log_term(fh) } else { 0.0 });
            let successes = step_idx.iter().filter(|&&i| recs[i].accepted).count();
            let bound = 2.0 / 3.0 * nsteps as f64 - lmax / 3.0;
            report.entries.push(
                BoundEntry::new("successful-step fraction", successes as f64, Relation::Ge, bound - LEDGER_RTOL * nsteps as f64, c.clone())
                    .with_detail(format!("{successes} of {nsteps} steps successful")),
            );

            let fstar = fstar_of(trace.fstar, opts);
            let guard_slack = |upto: usize| -> (f64, usize) {
                let mut g = 0.0;
                let mut n = 0;
                for i in 0..upto {
                    if guards[i] {
                        n += 1;
                        g += (recs[i + 1].f - recs[i].f).max(0.0);
                    }
                }
                (g, n)
            };
            let f0 = recs[0].f;
            let count_bound = |fs: f64, per: f64, upto: usize, logt: f64| {
                let (g, n) = guard_slack(upto);
                1.5 * ((f0 - fs + g) / per + n as f64) + 0.5 * logt
            };

            // First-order count: steps until |grad| <= eps_g.
            let n1 = recs.iter().position(|r| r.gradnorm <= eps_g);
            let name1 = "first-order iteration bound";
            match fstar {
                None => report.entries.push(BoundEntry::unavailable(name1, "no f* supplied", base_consts())),
                Some(fs) => {
                    let per = cfg.rho_prime * C2 * k.lambda_g * eps_g * eps_g;
                    let realized = n1.unwrap_or(nsteps);
                    let bound = count_bound(fs.value, per, realized, log_term(fg));
                    let mut c = base_consts();
                    c.extend([fstar_const(fs), user("rho'", cfg.rho_prime), user("delta0", cfg.delta0), user("eps_g", eps_g)]);
                    let mut e = BoundEntry::new(name1, realized as f64, Relation::Le, bound, c);
                    if n1.is_none() {
                        e.detail = "tolerance not reached".into();
                    }
                    if !(eps_g <= cfg.delta0 / k.lambda_g) {
                        e = e.not_applicable("precondition eps_g <= delta0/lambda_g fails");
                    }
                    report.entries.push(e);
                }
            }

            if let Some(eh) = eps_h {
                let name2 = "second-order iteration bound";
                match fstar {
                    None => report.entries.push(BoundEntry::unavailable(name2, "no f* supplied", base_consts())),
                    Some(fs) => {
                        let m = fg.min(fh);
                        let per = cfg.rho_prime * C3 * m * m * eh;
                        let bound = count_bound(fs.value, per, nsteps, log_term(m));
                        let mut c = base_consts();
                        c.extend([
                            fstar_const(fs),
                            user("rho'", cfg.rho_prime),
                            user("delta0", cfg.delta0),
                            user("eps_g", eps_g),
                            user("eps_H", eh),
                        ]);
                        let done = trace.status == Some(RtrStatus::SecondOrderMet);
                        let mut e = BoundEntry::new(name2, nsteps as f64, Relation::Le, bound, c);
                        if !done {
                            e.detail = "second-order tolerance not reached".into();
                        }
                        let pre = [
                            (eps_g <= cfg.delta0 / k.lambda_g, "eps_g <= delta0/lambda_g"),
                            (eps_g <= C2 / C3 * k.lambda_h / (k.lambda_g * k.lambda_g), "eps_g <= (c2/c3) lambda_H/lambda_g^2"),
                            (eh <= C2 / C3 / k.lambda_g, "eps_H <= (c2/c3)/lambda_g"),
                        ];
                        for (ok, what) in pre {
                            if !ok {
                                e = e.not_applicable(&format!("precondition {what} fails"));
                            }
                        }
                        report.entries.push(e);
                    }
                }
            }
        }
    }

    // Terminal certificate.
    let last = recs.last().expect("nonempty");
    let name = "terminal certificate";
    match trace.status {
        Some(RtrStatus::FirstOrderMet) => {
            report.entries.push(BoundEntry::new(name, last.gradnorm, Relation::Le, eps_g, vec![user("eps_g", eps_g)]));
        }
        Some(RtrStatus::SecondOrderMet) => {
            let eh = eps_h.unwrap_or(f64::INFINITY);
            let lm = last.lambdamin.unwrap_or(f64::NEG_INFINITY);
            let mut e = BoundEntry::new(name, -lm, Relation::Le, eh, vec![user("eps_g", eps_g), user("eps_H", eh)]);
            e.pass = e.pass && last.gradnorm <= eps_g;
            e.detail = format!("gradnorm = {:e}, lambda_min = {lm:e}", last.gradnorm);
            report.entries.push(e);
        }
        Some(RtrStatus::IterCap) | None => {
            let mut e = BoundEntry::new(name, last.gradnorm, Relation::Le, eps_g, vec![user("eps_g", eps_g)]);
            e.pass = false;
            e.severity = Severity::Warning;
            e.detail = "iteration cap reached".into();
            report.entries.push(e);
        }
    }

    // Evaluation audit.
    if recs[..nsteps].iter().all(|r| r.evals.is_some()) {
        let no_hess = eps_h.is_none() && cfg.hessian_model != HessianModel::Exact;
        let viol: Vec<usize> = step_idx
            .iter()
            .copied()
            .filter(|&i| {
                let e = recs[i].evals.expect("checked");
                e.cost != 1 || (no_hess && e.hess != 0) || (!no_hess && e.grad != u64::from(recs[i].accepted))
            })
            .map(|i| recs[i].k)
            .collect();
        report.entries.push(BoundEntry::ledger("evaluation audit", nsteps, &viol, vec![]));
    }
    Ok(report)
}

// ---------------------------------------------------------------- loading

#[derive(Clone, Debug)]
pub enum AnyTrace {
    Gd(GdTrace),
    Rtr(RtrTrace),
}

/// Configuration for CSV traces, which do not carry one.
#[derive(Clone, Debug, Default)]
pub struct CsvConfigs {
    pub gd: Option<GdConfig>,
    pub rtr: Option<RtrConfig>,
}

/// Parse a trace, detecting JSON (by its schema tag) or CSV (by its header).
pub fn parse_trace(text: &str, csv: &CsvConfigs) -> Result<AnyTrace> {
    let t = text.trim_start();
    if t.starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(t)?;
        return match v.get("schema").and_then(|s| s.as_str()) {
            Some(GD_SCHEMA) => Ok(AnyTrace::Gd(GdTrace::from_json(t)?)),
            Some(RTR_SCHEMA) => Ok(AnyTrace::Rtr(RtrTrace::from_json(t)?)),
            Some(other) => Err(Error::Format(format!("unknown trace schema {other:?}"))),
            None => Err(Error::Format("trace has no schema tag".into())),
        };
    }
    let header = t.lines().next().unwrap_or("").trim();
    if header == GD_CSV_COLUMNS.join(",") {
        let cfg = csv.gd.clone().ok_or_else(|| {
            Error::contract("CSV gradient-descent traces need the solver settings (--solver, --eps-g, ...)")
        })?;
        let mut tr = GdTrace::new(&cfg);
        tr.records = crate::gd::records_from_csv(t)?;
        tr.status = tr.records.last().map(|r| {
            if r.gradnorm <= cfg.eps_g { GdStatus::GradToleranceMet } else { GdStatus::IterCapReached }
        });
        Ok(AnyTrace::Gd(tr))
    } else if header == RTR_CSV_COLUMNS.join(",") {
        let cfg = csv
            .rtr
            .clone()
            .ok_or_else(|| Error::contract("CSV trust-region traces need the solver settings (--eps-g, --delta0, ...)"))?;
        let mut tr = RtrTrace::new(&cfg);
        tr.records = crate::rtr::records_from_csv(t)?;
        tr.status = tr.records.last().map(|r| match (r.gradnorm <= cfg.eps_g, cfg.eps_h, r.lambdamin) {
            (true, Some(e), Some(l)) if l >= -e => RtrStatus::SecondOrderMet,
            (true, None, _) => RtrStatus::FirstOrderMet,
            _ => RtrStatus::IterCap,
        });
        Ok(AnyTrace::Rtr(tr))
    } else {
        Err(Error::Format("unrecognized trace: neither a known JSON schema nor a known CSV header".into()))
    }
}

pub fn verify_bounds(trace: &AnyTrace, opts: &VerifyOptions) -> Result<BoundReport> {
    match trace {
        AnyTrace::Gd(t) => verify_gd(t, opts),
        AnyTrace::Rtr(t) => verify_rtr(t, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gd::gd_solve;
    use crate::harness::random_symmetric;
    use crate::linalg::min_eigenpair;
    use crate::manifold::Manifold;
    use crate::problem::Problem;
    use crate::rtr::rtr_solve;
    use crate::sdp::{bm_problem, SdpInstance};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rayleigh(n: usize, seed: u64) -> (Problem, crate::manifold::Point, FStar) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_symmetric(n, &mut rng);
        let (l, _) = min_eigenpair(&a);
        let p = Problem::rayleigh(a).unwrap();
        let x0 = p.manifold().random_point(&mut rng);
        (p, x0, FStar { value: l / 2.0, provenance: Provenance::Oracle })
    }

    fn armijo_trace() -> GdTrace {
        let (p, x0, fs) = rayleigh(15, 1);
        let cfg = GdConfig { eps_g: 1e-5, ..GdConfig::default() };
        let (_, mut t) = gd_solve(&p, &x0, &cfg).unwrap();
        t.fstar = Some(fs);
        t
    }

    fn rtr_trace(eps_h: Option<f64>) -> RtrTrace {
        let (p, x0, fs) = rayleigh(20, 2);
        let cfg = RtrConfig { eps_g: 1e-7, eps_h, ..RtrConfig::for_manifold(Manifold::sphere(20)) };
        let mut t = rtr_solve(&p, &x0, &cfg).unwrap().trace;
        t.fstar = Some(fs);
        t
    }

    #[test]
    fn armijo_trace_passes_every_entry() {
        let rep = verify_gd(&armijo_trace(), &VerifyOptions::default()).unwrap();
        assert!(rep.entries.iter().all(|e| e.applicable && e.pass), "{}", rep.summary());
        assert!(rep.entry("cost evaluations per iteration").is_some());
        let thm = rep.entry("iterations <= ceil((f0-f*)/(c1 min(tbar, 2tau(1-c1)/L)) / eps^2)").unwrap();
        assert!(thm.constants.iter().any(|c| c.name == "f*" && c.provenance == Provenance::Oracle));
        assert!(thm.constants.iter().any(|c| c.name == "L" && c.provenance == Provenance::Estimated));
        assert_eq!(thm.severity, Severity::Warning);
    }

    #[test]
    fn tampered_trace_fails_monotonicity_at_the_offending_step() {
        let mut t = armijo_trace();
        t.records[4].f += 1.0;
        let rep = verify_gd(&t, &VerifyOptions::default()).unwrap();
        let e = rep.entry("monotonicity").unwrap();
        assert!(!e.pass);
        assert!(e.detail.contains("first at k = 3"), "{}", e.detail);
        assert!(!rep.passed());
    }

    #[test]
    fn missing_fstar_is_reported_not_substituted() {
        let mut t = armijo_trace();
        t.fstar = None;
        let rep = verify_gd(&t, &VerifyOptions::default()).unwrap();
        let thm = rep.entries.iter().find(|e| e.name.starts_with("iterations")).unwrap();
        assert!(!thm.applicable);
        assert_eq!(thm.detail, "no f* supplied");
    }

    #[test]
    fn rtr_traces_pass() {
        for eps_h in [None, Some(1e-5)] {
            let t = rtr_trace(eps_h);
            let rep = verify_rtr(&t, &VerifyOptions::default()).unwrap();
            assert!(rep.entries.iter().all(|e| e.pass), "{}", rep.summary());
            assert!(rep.entry("radius floor").unwrap().applicable);
            assert!(rep.entry("successful-step fraction").unwrap().applicable);
            assert_eq!(eps_h.is_some(), rep.entry("eigenstep decrease >= c3 delta^2 eps_H").is_some());
        }
    }

    #[test]
    fn bm_trace_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inst = SdpInstance::new(random_symmetric(8, &mut rng)).unwrap();
        let p = bm_problem(&inst, 5).unwrap();
        let x0 = p.manifold().random_point(&mut rng);
        let cfg = RtrConfig { eps_g: 1e-7, eps_h: Some(1e-6), ..RtrConfig::for_manifold(p.manifold()) };
        let t = rtr_solve(&p, &x0, &cfg).unwrap().trace;
        let rep = verify_rtr(&t, &VerifyOptions::default()).unwrap();
        assert!(rep.entries.iter().all(|e| e.pass), "{}", rep.summary());
    }

    #[test]
    fn tampered_radius_is_caught() {
        let mut t = rtr_trace(None);
        t.records[2].delta *= 3.0;
        let rep = verify_rtr(&t, &VerifyOptions::default()).unwrap();
        assert!(!rep.entry("radius schedule").unwrap().pass);
        assert!(!rep.passed());
    }

    #[test]
    fn lambda_constants_examples() {
        let (lg, lh) = lambda_constants(2.0, 2.0, 1.0);
        assert_eq!(lg, 0.25 * (0.5f64).min(0.5 / 4.0));
        assert_eq!(lh, 0.75 * 0.5);
        let (lg, lh) = lambda_constants(0.0, 0.0, 0.0);
        assert!(lg.is_infinite() && lh.is_infinite());
    }

    #[test]
    fn csv_traces_need_settings() {
        let t = rtr_trace(None);
        let csv = t.to_csv();
        assert!(matches!(parse_trace(&csv, &CsvConfigs::default()), Err(Error::Contract(_))));
        let parsed = parse_trace(&csv, &CsvConfigs { gd: None, rtr: Some(t.config.clone()) }).unwrap();
        let AnyTrace::Rtr(pt) = parsed else { panic!("rtr trace expected") };
        let rep = verify_rtr(&pt, &VerifyOptions::default()).unwrap();
        assert!(rep.entry("radius schedule").unwrap().pass, "{}", rep.summary());
        assert!(!rep.entry("radius floor").unwrap().applicable);
    }

    #[test]
    fn wrong_schema_is_a_format_error() {
        let json = armijo_trace().to_json().unwrap().replace(GD_SCHEMA, "gdtrace-v0");
        assert!(matches!(parse_trace(&json, &CsvConfigs::default()), Err(Error::Format(_))));
        let trace = armijo_trace();
        let rtr_as_gd = RtrTrace { schema: GD_SCHEMA.into(), ..rtr_trace(None) };
        assert!(matches!(verify_rtr(&rtr_as_gd, &VerifyOptions::default()), Err(Error::Format(_))));
        assert!(matches!(parse_trace(&trace.to_json().unwrap(), &CsvConfigs::default()), Ok(AnyTrace::Gd(_))));
    }
}
